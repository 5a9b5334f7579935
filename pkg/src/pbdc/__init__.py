"""Multi-item pricing: simple schemes, optimal menus, revenue guarantees and experiments."""

from .distributions import Family, Instance, MarginalSpec
from .evaluation import BundleCurve, DiscreteInstance, exact_profit_discrete, mc_profit
from .mechanisms import BSP, PB, PBD, PBDC, PC, PCUD, TP, FullDeterministic, Menu, MixedBundling, SchemeKind
from .optimization import lp_opt_discrete, opt_bsp, opt_deterministic, opt_single_price, optimize_scheme

__version__ = "0.1.0"

__all__ = [
    "BSP", "PB", "PBD", "PBDC", "PC", "PCUD", "TP", "BundleCurve", "DiscreteInstance", "Family",
    "FullDeterministic", "Instance", "MarginalSpec", "Menu", "MixedBundling", "SchemeKind",
    "exact_profit_discrete", "lp_opt_discrete", "mc_profit", "opt_bsp", "opt_deterministic",
    "opt_single_price", "optimize_scheme",
]
