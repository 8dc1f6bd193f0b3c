from .fit import (DESK_BUDGETS, DegenerateFit, IsoFlopFit, NonPositiveInput, PowerLawFit, RunCurve,
                  extrapolation_line, fit_isoflop, fit_power_law, fit_scaling, isoflop_points, load_run)
from .flops import estimate_flops, six_n_d

__all__ = [
    "DESK_BUDGETS", "DegenerateFit", "IsoFlopFit", "NonPositiveInput", "PowerLawFit", "RunCurve",
    "extrapolation_line", "fit_isoflop", "fit_power_law", "fit_scaling", "isoflop_points", "load_run",
    "estimate_flops", "six_n_d",
]
