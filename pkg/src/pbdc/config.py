"""Experiment configuration: a plain ``key = value`` text file.

Recognised keys (``#`` starts a comment)::

    scenario            1 | 2 | 3 | grid   (or HeterogeneousItems, HeterogeneousCosts,
                                            BothHeterogeneous, Grid)
    family              comma list of Exponential, Gumbel (alias Logit), Lognormal,
                        Normal, Uniform, or "all"
    n_values            comma list of item counts, e.g. 2,3,4,5,6 (grid forces 3)
    instances           instances per (family, n) combination (grid forces 729)
    samples             Monte Carlo draws per evaluation
    opt_samples         draws used by the BSP / full-menu searches
                        (default: min(samples, 20000))
    seed                master seed (non-negative integer)
    schemes             comma list from PC, PB, BSP, PBDC, DET
    bsp_restarts        starts for the size-price search (default 3)
    det_restarts        starts for the full-menu search (default 32)
    output              output directory
"""

from __future__ import annotations

import configparser
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path

from .distributions import Family, parse_family
from .mechanisms import SchemeKind

SIMPLE_SCHEMES = (SchemeKind.PC, SchemeKind.PB, SchemeKind.BSP, SchemeKind.PBDC)
EXPERIMENT_FAMILIES = (Family.EXPONENTIAL, Family.GUMBEL, Family.LOGNORMAL, Family.NORMAL, Family.UNIFORM)
GRID_SIZE = 729
DEFAULT_OPT_SAMPLES = 20_000


class ConfigInvalid(ValueError):
    pass


class Scenario(str, enum.Enum):
    HETEROGENEOUS_ITEMS = "HeterogeneousItems"
    HETEROGENEOUS_COSTS = "HeterogeneousCosts"
    BOTH_HETEROGENEOUS = "BothHeterogeneous"
    GRID = "Grid"

    @property
    def code(self) -> int:
        return list(Scenario).index(self) + 1


_SCENARIO_ALIASES = {"1": Scenario.HETEROGENEOUS_ITEMS, "2": Scenario.HETEROGENEOUS_COSTS,
                     "3": Scenario.BOTH_HETEROGENEOUS, "grid": Scenario.GRID, "4": Scenario.GRID}


def parse_scenario(text) -> Scenario:
    if isinstance(text, Scenario):
        return text
    key = str(text).strip()
    if key.lower() in _SCENARIO_ALIASES:
        return _SCENARIO_ALIASES[key.lower()]
    for s in Scenario:
        if s.value.lower() == key.lower():
            return s
    raise ConfigInvalid(f"unknown scenario {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    families: tuple = EXPERIMENT_FAMILIES
    n_values: tuple = (2, 3, 4, 5, 6)
    instances_per_combo: int = 50
    samples: int = 100_000
    master_seed: int = 0
    schemes: tuple = SIMPLE_SCHEMES
    output: str | None = None
    opt_samples: int | None = None
    bsp_restarts: int = 3
    det_restarts: int = 32

    def __post_init__(self):
        scen = parse_scenario(self.scenario)
        object.__setattr__(self, "scenario", scen)
        try:
            fams = tuple(parse_family(f) for f in self.families)
            schemes = tuple(SchemeKind(str(getattr(s, "value", s)).upper()) for s in self.schemes)
        except ValueError as e:
            raise ConfigInvalid(str(e)) from None
        if not fams or any(f not in EXPERIMENT_FAMILIES for f in fams):
            raise ConfigInvalid("families must come from Exponential, Gumbel, Lognormal, Normal, Uniform")
        if not schemes or any(s not in SIMPLE_SCHEMES + (SchemeKind.DET,) for s in schemes):
            raise ConfigInvalid("schemes must come from PC, PB, BSP, PBDC, DET")
        n_values = tuple(int(n) for n in self.n_values)
        instances = int(self.instances_per_combo)
        if scen is Scenario.GRID:
            n_values, instances = (3,), GRID_SIZE
        if not n_values or any(n < 1 for n in n_values):
            raise ConfigInvalid("n_values must be positive integers")
        if SchemeKind.DET in schemes and max(n_values) > 3:
            raise ConfigInvalid("DET is only available for n <= 3")
        if instances < 1:
            raise ConfigInvalid("instances per combination must be at least 1")
        if int(self.bsp_restarts) < 1 or int(self.det_restarts) < 1:
            raise ConfigInvalid("restart counts must be at least 1")
        if int(self.samples) < 100:
            raise ConfigInvalid("samples must be at least 100")
        if int(self.master_seed) < 0:
            raise ConfigInvalid("seed must be non-negative")
        object.__setattr__(self, "families", fams)
        object.__setattr__(self, "schemes", tuple(dict.fromkeys(schemes)))
        object.__setattr__(self, "n_values", n_values)
        object.__setattr__(self, "instances_per_combo", instances)
        object.__setattr__(self, "samples", int(self.samples))
        object.__setattr__(self, "master_seed", int(self.master_seed))
        opt = int(self.opt_samples) if self.opt_samples else min(int(self.samples), DEFAULT_OPT_SAMPLES)
        if opt < 100:
            raise ConfigInvalid("opt_samples must be at least 100")
        object.__setattr__(self, "opt_samples", opt)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def to_record(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "families": [f.value for f in self.families],
            "n_values": list(self.n_values),
            "instances_per_combo": self.instances_per_combo,
            "samples": self.samples,
            "opt_samples": self.opt_samples,
            "master_seed": self.master_seed,
            "schemes": [s.value for s in self.schemes],
            "bsp_restarts": self.bsp_restarts,
            "det_restarts": self.det_restarts,
        }


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string("[experiment]\n" + text)
    except configparser.Error as e:
        raise ConfigInvalid(str(e)) from None
    sec = parser["experiment"]
    known = {"scenario", "family", "families", "n_values", "instances", "samples", "opt_samples",
             "seed", "schemes", "bsp_restarts", "det_restarts", "output"}
    unknown = set(sec) - known
    if unknown:
        raise ConfigInvalid(f"unknown keys: {', '.join(sorted(unknown))}")
    if "scenario" not in sec:
        raise ConfigInvalid("scenario is required")
    kw: dict = {"scenario": sec["scenario"]}
    try:
        fam = sec.get("family", sec.get("families", "all"))
        kw["families"] = EXPERIMENT_FAMILIES if fam.strip().lower() == "all" else tuple(_split(fam))
        if "n_values" in sec:
            kw["n_values"] = tuple(int(v) for v in _split(sec["n_values"]))
        for key, name in (("instances", "instances_per_combo"), ("samples", "samples"),
                          ("opt_samples", "opt_samples"), ("seed", "master_seed"),
                          ("bsp_restarts", "bsp_restarts"), ("det_restarts", "det_restarts")):
            if key in sec:
                kw[name] = int(sec[key])
    except ValueError as e:
        raise ConfigInvalid(str(e)) from None
    if "schemes" in sec:
        kw["schemes"] = tuple(_split(sec["schemes"]))
    if "output" in sec:
        kw["output"] = sec["output"]
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigInvalid(f"cannot read config: {e}") from None
    return parse_config_text(text)
