"""Built-in scenario catalog.

Each entry is ordinary scenario TOML, so ``kramers scenario show NAME``
prints a file that can be edited and fed back with ``--config``.
"""

from .config import loads
from .errors import ConfigError

__all__ = ["CATALOG", "names", "text", "get"]

_VARFRIC = """\
name = "variable-friction-1d"
description = "1D friction 2 + sin(x), unit noise, linear force; coupled mass sweep"
dim = 1
box = [[-10.0, 10.0]]

[coefficients]
F = ["-x1"]
gamma = [["2 + sin(x1)"]]
sigma = [["1"]]

[solver]
dt = 0.0009765625
T = 1.0
paths = 400
seed = 20260101
x0 = [-1.0]
v0 = [0.0]

[experiment]
masses = [0.1, 0.01, 0.001]
compare_no_drift = true
drift_points = [[-3.0], [-2.0], [-1.0], [0.0], [1.0], [2.0], [3.0]]
"""

# Illustrative D(x): rises from the wall at x = 0 and saturates to a bulk
# value of 1 within a few length units.  Not fitted to any data.
_DIFFUSION_GRADIENT = """\
name = "diffusion-gradient"
description = "1D Brownian particle near a wall; illustrative D(x) = 1 - 0.9 exp(-2x)"
dim = 1
box = [[0.0, 10.0]]

[fdr]
convention = "2kT"
kT = 1.0
D = "1 - 0.9*exp(-2*x1)"
U = "4*(x1 - 2)^2"

[solver]
dt = 0.005
T = 40.0
paths = 500
seed = 7
x0 = [2.0]

[experiment]
drift_points = [[0.25], [0.5], [1.0], [1.5], [2.0], [3.0], [5.0]]

[experiment.stationary]
burn_in = 0.125
record_dt = 0.5
"""

_OU_CONST = """\
name = "ou-const-friction"
description = "constant friction driven by OU colored noise through f(x) = sin(x), tau = m"
dim = 1
box = [[-10.0, 10.0]]

[colored_noise]
F = ["0"]
friction = [["1"]]
scale = "1"
A = [[1.0]]
lam = [[1.4142135623730951]]
tau0 = 1.0
coupling = [["sin(x1)"]]

[solver]
dt = 0.0009765625
T = 1.0
paths = 400
seed = 11
x0 = [1.0]

[experiment]
masses = [0.1, 0.01, 0.001]
drift_points = [[0.5], [1.0], [1.5], [2.0], [2.5]]
"""

_THERMO = """\
name = "thermophoresis"
description = "temperature-dependent friction and diffusion with OU forcing, m / tau = c fixed"
dim = 1
box = [[-5.0, 5.0]]

[thermophoresis]
F = "-x1"
gamma = "2 + tanh(x1)"
D = "1 + 0.5*tanh(x1)"
c = 2.0

[solver]
dt = 0.0009765625
T = 1.0
paths = 200
seed = 13
x0 = [0.0]

[experiment]
masses = [0.1, 0.01, 0.001]
drift_points = [[-2.0], [-1.0], [0.0], [0.5], [1.0], [2.0]]
"""

_FDR3D = """\
name = "fdr-3d"
description = "3D particle with state-dependent noise and gamma = sigma sigma^T / kT"
dim = 3
box = [[-6.0, 6.0], [-6.0, 6.0], [-6.0, 6.0]]

[fdr]
convention = "kT"
kT = 1.0
sigma = [
    ["1.5 + 0.5*sin(x2)", "0.3", "0"],
    ["0", "1.5 + 0.5*cos(x3)", "0.3"],
    ["0.3", "0", "1.5 + 0.5*sin(x1)"],
]
U = "(x1^2 + x2^2 + x3^2)/2"

[solver]
dt = 0.01
T = 30.0
paths = 300
seed = 17
x0 = [0.0, 0.0, 0.0]

[experiment]
drift_points = [[0.0, 0.0, 0.0], [0.5, -0.5, 1.0], [-1.0, 1.0, 0.3]]

[experiment.stationary]
burn_in = 0.2
record_dt = 0.5
"""

_MAGNETIC = """\
name = "magnetic"
description = "3D charged particle, Einstein relation sigma sigma^T = 2 kT gamma, field along x3"
dim = 3
box = [[-6.0, 6.0], [-6.0, 6.0], [-6.0, 6.0]]

[fdr]
convention = "2kT"
kT = 1.0
sigma = [
    ["sqrt(2*(2 + sin(x2)))", "0", "0"],
    ["0", "sqrt(2*(2 + sin(x3)))", "0"],
    ["0", "0", "sqrt(2*(2 + sin(x1)))"],
]
U = "(x1^2 + x2^2 + x3^2)/2"

[magnetic]
q = 1.0
B = ["0", "0", "1 + 0.5*sin(x1)"]

[solver]
dt = 0.01
T = 30.0
paths = 300
seed = 19
x0 = [0.0, 0.0, 0.0]

[experiment]
drift_points = [[0.0, 0.0, 0.0], [0.5, -0.5, 1.0], [-1.0, 1.0, 0.3]]

[experiment.stationary]
burn_in = 0.2
record_dt = 0.5
"""

CATALOG = {
    "variable-friction-1d": _VARFRIC,
    "diffusion-gradient": _DIFFUSION_GRADIENT,
    "ou-const-friction": _OU_CONST,
    "thermophoresis": _THERMO,
    "fdr-3d": _FDR3D,
    "magnetic": _MAGNETIC,
}


def names():
    return list(CATALOG)


def text(name):
    if name not in CATALOG:
        raise ConfigError(f"unknown scenario {name!r}; available: {', '.join(CATALOG)}")
    return CATALOG[name]


def get(name):
    """Parsed :class:`~kramers.config.ScenarioConfig` for a catalog entry."""
    return loads(text(name), source=f"<scenario {name}>")
