"""Simulation configuration: dataclasses, JSON (de)serialization and validation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

ALGORITHMS = ("db", "sd", "smc", "tked")
ALGORITHM_CODES = {name: code for code, name in enumerate(ALGORITHMS)}
HEADWAY_UNITS = ("meters", "seconds")
HV_CLAMPS = ("brake_only", "symmetric")
TKED_SOLVERS = ("projected_search", "grid_oracle")


class ConfigError(ValueError):
    """Invalid or unreadable configuration. ``key`` names the offending entry.

    ``kind`` is one of ``missing``, ``malformed``, ``schema`` or ``invariant``.
    """

    def __init__(self, message: str, key: str | None = None, kind: str = "invariant"):
        super().__init__(message)
        self.key = key
        self.kind = kind


@dataclass(frozen=True)
class NormalDist:
    mean: float
    sd: float


@dataclass(frozen=True)
class HeadwayDist:
    mean: float = 2.0
    sd: float = 0.3
    unit: str = "seconds"


@dataclass(frozen=True)
class HvParams:
    clamp: str = "brake_only"


@dataclass(frozen=True)
class SdParams:
    t_thw: float = 1.0
    epsilon: float = 1.0


@dataclass(frozen=True)
class SmcParams:
    c: float = 0.7
    omega_n: float = 0.8
    xi: float = 1.0


@dataclass(frozen=True)
class TkedParams:
    horizon: int = 10
    gap_floor: float = 0.05
    solver: str = "projected_search"
    grid_levels: int = 12
    # nominal driver used to predict HVs inside the considered set
    hv_alpha: float = 0.85
    hv_reaction: float = 1.1
    hv_dec_max: float = 5.5


@dataclass(frozen=True)
class SimConfig:
    n_vehicles: int = 11
    dt: float = 0.1
    max_sim_time: float = 30.0
    tau: float = 0.5
    crash_gap_threshold: float = 0.05
    restitution: float = 0.0
    speed_range_kmh: tuple[float, float] = (100.0, 110.0)
    mass_range: tuple[float, float] = (900.0, 2500.0)
    length_range: tuple[float, float] = (3.5, 5.5)
    decel_dist: NormalDist = NormalDist(5.5, 0.6)
    headway_dist: HeadwayDist = HeadwayDist()
    hv_sensitivity_dist: NormalDist = NormalDist(0.85, 0.2)
    hv_reaction_dist: NormalDist = NormalDist(1.1, 0.22)
    truncate_sigma: float = 3.0
    hv: HvParams = HvParams()
    sd: SdParams = SdParams()
    smc: SmcParams = SmcParams()
    tked: TkedParams = TkedParams()

    def __post_init__(self):
        validate_config(self)

    @property
    def n_ticks(self) -> int:
        return int(math.ceil(self.max_sim_time / self.dt - 1e-9))


DEFAULT_MPR_GRID = tuple(round(0.1 * k, 1) for k in range(11))


@dataclass(frozen=True)
class SweepPlan:
    algorithms: tuple[str, ...] = ALGORITHMS
    mpr_grid: tuple[float, ...] = DEFAULT_MPR_GRID
    iterations: int = 1000
    tked_iterations: int = 100
    seed: int = 0
    histogram_bins: int = 20

    def __post_init__(self):
        validate_plan(self)

    def iterations_for(self, algorithm: str) -> int:
        return self.tked_iterations if algorithm == "tked" else self.iterations


def _check(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{key} {message}", key=key)


def _check_range(pair, key: str, positive: bool = True) -> None:
    _check(len(pair) == 2, key, "must be a [min, max] pair")
    lo, hi = pair
    _check(math.isfinite(lo) and math.isfinite(hi), key, "must be finite")
    _check(lo <= hi, key, "must have min <= max")
    if positive:
        _check(lo > 0, key, "must be positive")


def _check_normal(dist: NormalDist, key: str, positive_mean: bool = True) -> None:
    _check(math.isfinite(dist.mean), f"{key}.mean", "must be finite")
    _check(math.isfinite(dist.sd) and dist.sd >= 0, f"{key}.sd", "must be >= 0")
    if positive_mean:
        _check(dist.mean > 0, f"{key}.mean", "must be > 0")


def validate_config(cfg: SimConfig) -> None:
    _check(cfg.n_vehicles >= 2, "n_vehicles", "must be >= 2")
    _check(cfg.dt > 0, "dt", "must be > 0")
    _check(cfg.tau > cfg.dt, "tau", "must be > dt")
    _check(cfg.max_sim_time > cfg.dt, "max_sim_time", "must exceed dt")
    _check(cfg.crash_gap_threshold > 0, "crash_gap_threshold", "must be > 0")
    _check(0.0 <= cfg.restitution <= 1.0, "restitution", "must be in [0,1]")
    _check_range(cfg.speed_range_kmh, "speed_range_kmh")
    _check_range(cfg.mass_range, "mass_range")
    _check_range(cfg.length_range, "length_range")
    _check_normal(cfg.decel_dist, "decel_dist")
    _check_normal(cfg.hv_sensitivity_dist, "hv_sensitivity_dist")
    _check_normal(cfg.hv_reaction_dist, "hv_reaction_dist")
    _check(cfg.truncate_sigma > 0, "truncate_sigma", "must be > 0")
    for name in ("decel_dist", "hv_sensitivity_dist", "hv_reaction_dist"):
        dist = getattr(cfg, name)
        _check(dist.mean - cfg.truncate_sigma * dist.sd > 0, name,
               "truncated support must stay positive")
    hw = cfg.headway_dist
    _check(hw.unit in HEADWAY_UNITS, "headway_dist.unit", f"must be one of {HEADWAY_UNITS}")
    _check(hw.mean > 0, "headway_dist.mean", "must be > 0")
    _check(hw.sd >= 0, "headway_dist.sd", "must be >= 0")
    _check(cfg.hv.clamp in HV_CLAMPS, "hv.clamp", f"must be one of {HV_CLAMPS}")
    _check(cfg.sd.t_thw > 0, "sd.t_thw", "must be > 0")
    _check(cfg.sd.epsilon > 0, "sd.epsilon", "must be > 0")
    _check(0.0 < cfg.smc.c < 1.0, "smc.c", "must be in (0,1)")
    _check(cfg.smc.omega_n > 0, "smc.omega_n", "must be > 0")
    _check(cfg.smc.xi >= 1.0, "smc.xi", "must be >= 1")
    t = cfg.tked
    _check(t.horizon >= 1, "tked.horizon", "must be >= 1")
    _check(t.gap_floor > 0, "tked.gap_floor", "must be > 0")
    _check(t.solver in TKED_SOLVERS, "tked.solver", f"must be one of {TKED_SOLVERS}")
    _check(t.grid_levels >= 2, "tked.grid_levels", "must be >= 2")
    _check(t.hv_alpha > 0, "tked.hv_alpha", "must be > 0")
    _check(t.hv_reaction >= 0, "tked.hv_reaction", "must be >= 0")
    _check(t.hv_dec_max > 0, "tked.hv_dec_max", "must be > 0")


def validate_plan(plan: SweepPlan) -> None:
    _check(len(plan.algorithms) > 0, "sweep.algorithms", "must not be empty")
    for name in plan.algorithms:
        _check(name in ALGORITHMS, "sweep.algorithms", f"contains unknown algorithm {name!r}")
    _check(len(set(plan.algorithms)) == len(plan.algorithms), "sweep.algorithms", "has duplicates")
    _check(len(plan.mpr_grid) > 0, "sweep.mpr_grid", "must not be empty")
    for mpr in plan.mpr_grid:
        _check(0.0 <= mpr <= 1.0, "sweep.mpr_grid", "values must be in [0,1]")
    _check(plan.iterations >= 1, "sweep.iterations", "must be >= 1")
    _check(plan.tked_iterations >= 1, "sweep.tked_iterations", "must be >= 1")
    _check(plan.seed >= 0, "sweep.seed", "must be >= 0")
    _check(plan.histogram_bins >= 1, "sweep.histogram_bins", "must be >= 1")


# --- JSON ------------------------------------------------------------------

def _coerce(value: Any, annotation: str, key: str) -> Any:
    if annotation == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key} must be an integer", kind="schema", key=key)
        return value
    if annotation == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number", kind="schema", key=key)
        return float(value)
    if annotation == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string", kind="schema", key=key)
        return value
    if annotation.startswith("tuple["):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list", kind="schema", key=key)
        inner = "str" if "str" in annotation else "float"
        return tuple(_coerce(v, inner, f"{key}[{i}]") for i, v in enumerate(value))
    raise AssertionError(annotation)


_NESTED = {
    "NormalDist": NormalDist,
    "HeadwayDist": HeadwayDist,
    "HvParams": HvParams,
    "SdParams": SdParams,
    "SmcParams": SmcParams,
    "TkedParams": TkedParams,
}


def _from_dict(cls, data: Any, prefix: str, base=None):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be a JSON object", kind="schema", key=prefix or None)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for k in data:
        if k not in fields:
            name = f"{prefix}.{k}" if prefix else k
            raise ConfigError(f"unknown key {name!r}", kind="schema", key=name)
    kwargs = {}
    for name, f in fields.items():
        key = f"{prefix}.{name}" if prefix else name
        current = getattr(base, name) if base is not None else None
        if name not in data:
            if current is not None:
                kwargs[name] = current
            continue
        ann = f.type if isinstance(f.type, str) else f.type.__name__
        if ann in _NESTED:
            kwargs[name] = _from_dict(_NESTED[ann], data[name], key, current)
        else:
            kwargs[name] = _coerce(data[name], ann, key)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}", kind="schema", key=prefix or None) from None


def config_from_dict(data: dict) -> tuple[SimConfig, SweepPlan]:
    """Build a validated (SimConfig, SweepPlan) from a JSON-like dict.

    Missing keys take their defaults; unknown keys raise ConfigError.
    The sweep plan lives under the optional top-level ``sweep`` key.
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", kind="schema")
    data = dict(data)
    sweep = data.pop("sweep", {})
    cfg = _from_dict(SimConfig, data, "", SimConfig())
    plan = _from_dict(SweepPlan, sweep, "sweep", SweepPlan())
    return cfg, plan


def config_to_dict(cfg: SimConfig, plan: SweepPlan | None = None) -> dict:
    out = _to_plain(dataclasses.asdict(cfg))
    if plan is not None:
        out["sweep"] = _to_plain(dataclasses.asdict(plan))
    return out


def _to_plain(obj):
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def parse_config(path: str | Path | None) -> tuple[SimConfig, SweepPlan]:
    """Read a JSON config file. ``None`` gives the all-default configuration."""
    if path is None:
        return config_from_dict({})
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", kind="missing")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}", kind="malformed") from None
    return config_from_dict(data)


def dump_config(cfg: SimConfig, plan: SweepPlan | None = None) -> str:
    return json.dumps(config_to_dict(cfg, plan), indent=2, sort_keys=True)


def config_hash(cfg: SimConfig, plan: SweepPlan | None = None) -> str:
    canon = json.dumps(config_to_dict(cfg, plan), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
