"""YAML scenario configs: parsing, defaults, validation and hashing.

A config is a YAML mapping with these top-level keys (all but ``scenario``
optional; see README for the per-scenario ``params`` and ``thresholds``):

    scenario, seeds, N, N_list, constants, cutoffs, density, potential,
    integrator, grid, params, thresholds, output_dir
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

import yaml

from ..ensemble import PhysicalConstants

SCENARIOS = ("few_n", "relax", "evolve_compare", "continuum_sweep", "ke_sweep",
             "energy_shift_sweep", "equilibration")
STOCHASTIC = {"relax", "continuum_sweep", "ke_sweep", "equilibration"}
SWEEPS = {"continuum_sweep", "ke_sweep", "energy_shift_sweep"}

SECTION_DEFAULTS = {
    "constants": {"hbar": 1.0, "mass": 1.0, "dim": 1},
    "cutoffs": {"R": math.inf, "A": 1.0, "epsilon_min": None},
    "density": {"name": "gaussian", "mean": 0.0, "sigma": 1.0, "low": 0.0, "high": 1.0},
    "potential": {"name": "free", "omega": 1.0, "center": 0.0},
    "integrator": {"dt": None, "steps": 1000, "gamma": 0.0, "record_every": 1, "tol": 1e-6,
                   "max_steps": 200_000, "smooth_cutoff": False, "track_phases": False},
    "grid": {"low": -10.0, "high": 10.0, "points": 801},
}

PARAM_DEFAULTS = {
    "few_n": {"positions": None, "velocities": None},
    "relax": {},
    "evolve_compare": {"N": 100, "r_prime": 1.0, "mode": "self_consistent"},
    "continuum_sweep": {"r_prime": 1000.0, "include_correction": False},
    "ke_sweep": {"r_prime": 1000.0, "action": "linear", "p0": 0.3},
    "energy_shift_sweep": {"r_prime": 1.0, "reference_N": 100},
    "equilibration": {"member": 0, "windows": 10, "bins": 30},
}

THRESHOLD_DEFAULTS = {
    "few_n": {"energy_drift": 1e-6, "zero_tol": 0.0},
    "relax": {"ks": 0.05},
    "evolve_compare": {"ground_energy": 1e-3, "hj_constancy": 1e-4, "norm_drift": 1e-8,
                       "linear_identity": 1e-12, "shift_consistency": 0.1},
    "continuum_sweep": {"final_discrepancy": 0.15},
    "ke_sweep": {"final_discrepancy": 0.10},
    "energy_shift_sweep": {"slope_tol": 0.1, "ratio_factor": 3.0},
    "equilibration": {"max_slope": 0.0},
}

TOP_LEVEL = ("scenario", "seeds", "N", "N_list", "params", "thresholds", "output_dir",
             *SECTION_DEFAULTS)

FLOAT_KEYS = {"hbar", "mass", "R", "A", "epsilon_min", "mean", "sigma", "low", "high", "omega",
              "center", "dt", "gamma", "tol", "r_prime", "p0"}
INT_KEYS = {"dim", "steps", "record_every", "max_steps", "points", "member", "windows", "bins",
            "reference_N"}
BOOL_KEYS = {"smooth_cutoff", "track_phases", "include_correction"}


class ConfigError(ValueError):
    """Config rejected; ``errors`` lists every key-level problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class _UniqueKeyLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    seen = {}
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise ConfigError([f"duplicate key {key!r} at line {key_node.start_mark.line + 1} "
                               f"(first defined at line {seen[key]})"])
        seen[key] = key_node.start_mark.line + 1
    return yaml.SafeLoader.construct_mapping(loader, node, deep=deep)


_UniqueKeyLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


@dataclass
class ScenarioConfig:
    scenario: str
    seeds: list
    N: object
    N_list: list
    constants: dict
    cutoffs: dict
    density: dict
    potential: dict
    integrator: dict
    grid: dict
    params: dict
    thresholds: dict
    output_dir: object = None
    raw: dict = field(default_factory=dict, repr=False)

    def physical_constants(self):
        return PhysicalConstants(**self.constants)

    def canonical(self):
        """Resolved config as plain data, without the output directory."""
        return {
            "scenario": self.scenario, "seeds": self.seeds, "N": self.N, "N_list": self.N_list,
            "constants": self.constants, "cutoffs": self.cutoffs, "density": self.density,
            "potential": self.potential, "integrator": self.integrator, "grid": self.grid,
            "params": self.params, "thresholds": self.thresholds,
        }

    @property
    def hash(self):
        text = json.dumps(_jsonable(self.canonical()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _coerce(key, value, errors, where):
    if value is None:
        return None
    try:
        if key in BOOL_KEYS:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if key in INT_KEYS:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise TypeError
            return int(float(value))
        if key in FLOAT_KEYS:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
    except (TypeError, ValueError):
        kind = "boolean" if key in BOOL_KEYS else "integer" if key in INT_KEYS else "number"
        errors.append(f"{where}.{key}: expected a {kind}, got {value!r}")
        return None
    return value


def _merge_section(name, given, defaults, errors):
    out = copy.deepcopy(defaults)
    if given is None:
        return out
    if not isinstance(given, dict):
        errors.append(f"{name}: expected a mapping")
        return out
    for key, value in given.items():
        if key not in defaults:
            errors.append(f"{name}.{key}: unknown key")
            continue
        out[key] = _coerce(key, value, errors, name)
    return out


def _int_list(value, name, errors):
    if value is None:
        return []
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list):
        errors.append(f"{name}: expected a list of integers")
        return []
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
            errors.append(f"{name}: {v!r} is not an integer")
            continue
        out.append(int(v))
    return out


def parse_config(text):
    """Parse and validate YAML text; raises :class:`ConfigError` listing every problem."""
    try:
        raw = yaml.load(text, Loader=_UniqueKeyLoader)
    except yaml.YAMLError as exc:
        raise ConfigError([f"malformed YAML: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a mapping"])
    errors = []
    for key in raw:
        if key not in TOP_LEVEL:
            errors.append(f"{key}: unknown key")
    scenario = raw.get("scenario")
    if scenario not in SCENARIOS:
        errors.append(f"scenario: unknown scenario kind {scenario!r} (expected one of "
                      f"{', '.join(SCENARIOS)})")
        raise ConfigError(errors)

    sections = {name: _merge_section(name, raw.get(name), defaults, errors)
                for name, defaults in SECTION_DEFAULTS.items()}
    params = _merge_section("params", raw.get("params"), PARAM_DEFAULTS[scenario], errors)
    thresholds = _merge_section("thresholds", raw.get("thresholds"),
                                THRESHOLD_DEFAULTS[scenario], errors)
    for key, value in thresholds.items():
        if key not in FLOAT_KEYS:
            thresholds[key] = _coerce_threshold(key, value, errors)

    seeds = _int_list(raw.get("seeds"), "seeds", errors)
    if scenario in STOCHASTIC and not seeds:
        errors.append("seeds: missing seeds (required for stochastic scenarios)")
    N_list = _int_list(raw.get("N_list"), "N_list", errors)
    N = raw.get("N")
    if N is not None:
        if isinstance(N, bool) or not isinstance(N, int) or N < 1:
            errors.append(f"N: expected a positive integer, got {N!r}")
    if scenario in SWEEPS:
        if not N_list:
            errors.append("N_list: required for sweep scenarios")
        elif any(b <= a for a, b in zip(N_list, N_list[1:])):
            errors.append("N_list: N_list not increasing")
    elif N is None and not (scenario == "few_n" and params.get("positions")) \
            and scenario != "evolve_compare":
        errors.append("N: required for this scenario")

    _check_constraints(scenario, sections, params, N, errors)
    if errors:
        raise ConfigError(errors)
    if scenario == "few_n" and params.get("positions") is not None and N is None:
        N = len(params["positions"])
    return ScenarioConfig(scenario, seeds, N, N_list, sections["constants"], sections["cutoffs"],
                          sections["density"], sections["potential"], sections["integrator"],
                          sections["grid"], params, thresholds, raw.get("output_dir"), raw)


def _coerce_threshold(key, value, errors):
    try:
        return float(value)
    except (TypeError, ValueError):
        errors.append(f"thresholds.{key}: expected a number, got {value!r}")
        return None


def _check_constraints(scenario, sections, params, N, errors):
    c = sections["constants"]
    for key in ("hbar", "mass"):
        if c[key] is not None and not c[key] > 0:
            errors.append(f"constants.{key}: must be positive")
    if c["dim"] is not None and c["dim"] < 1:
        errors.append("constants.dim: must be >= 1")
    R = sections["cutoffs"]["R"]
    if R is not None and not R > 0:
        errors.append("cutoffs.R: must be positive")
    if sections["density"]["name"] not in ("gaussian", "uniform"):
        errors.append(f"density.name: unknown density {sections['density']['name']!r}")
    if sections["potential"]["name"] not in ("free", "harmonic"):
        errors.append(f"potential.name: unknown potential {sections['potential']['name']!r}")
    integ = sections["integrator"]
    if integ["dt"] is not None and not integ["dt"] > 0:
        errors.append("integrator.dt: must be positive")
    if integ["steps"] is not None and integ["steps"] < 0:
        errors.append("integrator.steps: must be >= 0")
    if integ["record_every"] is not None and integ["record_every"] < 1:
        errors.append("integrator.record_every: must be >= 1")
    if scenario == "relax" and not (integ["gamma"] or 0) > 0:
        errors.append("integrator.gamma: relax needs gamma > 0")
    if scenario == "few_n":
        pos = params.get("positions")
        if pos is not None:
            if not isinstance(pos, list) or not pos:
                errors.append("params.positions: expected a nonempty list")
            elif N is not None and len(pos) != N:
                errors.append("params.positions: length differs from N")
    if scenario == "evolve_compare" and params.get("mode") not in ("self_consistent", "frozen"):
        errors.append("params.mode: expected 'self_consistent' or 'frozen'")
    if scenario == "ke_sweep" and params.get("action") not in ("linear", "sine", "constant"):
        errors.append("params.action: expected 'linear', 'sine' or 'constant'")
    if scenario == "equilibration" and N is not None and params.get("member", 0) >= N:
        errors.append("params.member: must be < N")


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())
