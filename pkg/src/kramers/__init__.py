"""Small-mass (Smoluchowski-Kramers) limits of inertial Langevin systems.

Modules: ``smallmat`` (Lyapunov solvers, matrix exponential), ``expr``
(coefficient expressions), ``model`` (coefficient models and builders),
``drift`` (noise-induced drift and the limiting SDE), ``sde`` (coupled
integrators), ``experiments`` (mass sweeps, stationary checks) and ``cli``.
"""

from .drift import LimitSde, gibbs_drift_check, limit_sde, noise_induced_drift
from .errors import AssumptionError, ConfigError, KramersError, LyapunovError, NumericalError
from .model import CoefficientModel, check_assumptions, fdr_model, lift_colored_noise
from .smallmat import solve_lyapunov_direct, solve_lyapunov_quadrature

__version__ = "0.1.0"
