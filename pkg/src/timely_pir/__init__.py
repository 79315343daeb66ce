"""Rate versus age-of-information tradeoff for private retrieval from replicated servers."""

__version__ = "0.1.0"

from .errors import (ConvergenceError, DegenerateBranchError, InfeasibleError,  # noqa: E402
                     InvalidConfigError, SizeLimitError, TimelyPIRError)
from .model import (DownloadAllocation, MixturePolicy, ServerStats, Solution,  # noqa: E402
                    SystemConfig, avg_aoi, mixture_avg_aoi, mixture_peak_aoi, peak_aoi,
                    pir_capacity)
from .capacity import capacity_asym, capacity_of_traffic, corner_points, pir_constraints  # noqa: E402
from .peak import solve_peak, solve_peak_lp, solve_peak_n2m3  # noqa: E402
from .average import (equal_mean_solver, inner_solution, outer_minimize,  # noqa: E402
                      single_server_fallback, solve_avg, solve_avg_general, solve_avg_hull)
from .oracle import grid_search, verify  # noqa: E402
from .sim import DelayDistribution, SimResult, run  # noqa: E402
from .api import solve  # noqa: E402

__all__ = [
    "TimelyPIRError", "InvalidConfigError", "InfeasibleError", "DegenerateBranchError",
    "ConvergenceError", "SizeLimitError", "ServerStats", "SystemConfig", "DownloadAllocation",
    "MixturePolicy", "Solution", "pir_capacity", "peak_aoi", "avg_aoi", "mixture_peak_aoi",
    "mixture_avg_aoi", "capacity_asym", "capacity_of_traffic", "corner_points",
    "pir_constraints", "solve_peak", "solve_peak_lp", "solve_peak_n2m3", "solve_avg",
    "solve_avg_hull", "solve_avg_general", "inner_solution", "outer_minimize",
    "equal_mean_solver", "single_server_fallback", "grid_search", "verify",
    "DelayDistribution", "SimResult", "run", "solve",
]
