"""Randomized platoon instances.

All randomness flows through ``numpy.random.Generator(PCG64(seed))`` with a
fixed draw order, so an instance is a pure function of (config, mpr, seed).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, NormalDist, SimConfig

HV = "HV"
ICV = "ICV"

MAX_RESAMPLES = 1000


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class VehicleSpec:
    index: int  # 1-based, 1 = lead
    kind: str
    mass: float
    length: float
    dec_max: float  # positive magnitude
    sensitivity: float
    reaction_time: float


@dataclass(frozen=True)
class VehicleState:
    x: float  # front bumper
    v: float
    a: float = 0.0


@dataclass(frozen=True)
class ScenarioInstance:
    specs: tuple[VehicleSpec, ...]
    initial_states: tuple[VehicleState, ...]
    mpr: float
    icv_indices: frozenset[int]
    seed: int

    @property
    def n(self) -> int:
        return len(self.specs)

    def arrays(self) -> dict[str, np.ndarray]:
        """Column arrays (0-based vehicle order) consumed by the kernels."""
        return {
            "mass": np.array([s.mass for s in self.specs]),
            "length": np.array([s.length for s in self.specs]),
            "dec_max": np.array([s.dec_max for s in self.specs]),
            "alpha": np.array([s.sensitivity for s in self.specs]),
            "reaction": np.array([s.reaction_time for s in self.specs]),
            "is_icv": np.array([s.kind == ICV for s in self.specs]),
            "x0": np.array([st.x for st in self.initial_states]),
            "v0": np.array([st.v for st in self.initial_states]),
            "a0": np.array([st.a for st in self.initial_states]),
        }


def derive_seed(root_seed: int, mpr: float, iteration: int) -> int:
    """64-bit per-iteration seed, independent of execution order.

    The algorithm is deliberately not part of the key: every algorithm sees
    the same platoons (common random numbers).
    """
    ss = np.random.SeedSequence(int(root_seed), spawn_key=(int(round(mpr * 1000)), int(iteration)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def truncated_normal(rng: np.random.Generator, dist: NormalDist, n_sigma: float) -> float:
    """Normal draw restricted to mean +/- n_sigma*sd by resampling."""
    if dist.sd == 0:
        return float(dist.mean)
    lo = dist.mean - n_sigma * dist.sd
    hi = dist.mean + n_sigma * dist.sd
    for _ in range(MAX_RESAMPLES):
        x = rng.normal(dist.mean, dist.sd)
        if lo <= x <= hi:
            return float(x)
    raise SamplingError(f"could not draw from N({dist.mean}, {dist.sd}) within {n_sigma} sigma")


def vehicle_length_from_mass(mass: float, config: SimConfig | None = None) -> float:
    """Affine mass -> length map over the configured ranges."""
    config = config or SimConfig()
    m_lo, m_hi = config.mass_range
    l_lo, l_hi = config.length_range
    if not m_lo <= mass <= m_hi:
        raise ValueError(f"mass {mass} outside {config.mass_range}")
    if m_hi == m_lo:
        return float(l_lo)
    return l_lo + (mass - m_lo) / (m_hi - m_lo) * (l_hi - l_lo)


def assign_icv_positions(mpr: float, n_followers: int, rng: np.random.Generator) -> frozenset[int]:
    """Uniformly random set of round(mpr * n_followers) follower positions.

    Followers are numbered 2..n_followers+1 (position 1 is the lead).
    """
    if not 0.0 <= mpr <= 1.0:
        raise ValueError(f"mpr must be in [0,1], got {mpr}")
    k = int(round(mpr * n_followers))
    perm = rng.permutation(n_followers)
    return frozenset(int(p) + 2 for p in perm[:k])


def sample_scenario(config: SimConfig, mpr: float, seed: int) -> ScenarioInstance:
    if not isinstance(config, SimConfig):
        raise ConfigError("config must be a SimConfig")
    if not 0.0 <= mpr <= 1.0:
        raise ValueError(f"mpr must be in [0,1], got {mpr}")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = config.n_vehicles
    k_sigma = config.truncate_sigma

    speed = rng.uniform(*config.speed_range_kmh) / 3.6
    raw = []
    for _ in range(n):
        mass = float(rng.uniform(*config.mass_range))
        dec = truncated_normal(rng, config.decel_dist, k_sigma)
        alpha = truncated_normal(rng, config.hv_sensitivity_dist, k_sigma)
        react = truncated_normal(rng, config.hv_reaction_dist, k_sigma)
        raw.append((mass, dec, alpha, react))

    gaps = []
    hw = config.headway_dist
    for _ in range(n - 1):
        for _ in range(MAX_RESAMPLES):
            h = truncated_normal(rng, NormalDist(hw.mean, hw.sd), k_sigma)
            gap = h * speed if hw.unit == "seconds" else h
            if gap > config.crash_gap_threshold:
                break
        else:
            raise SamplingError("headway draws keep falling below the crash threshold")
        gaps.append(gap)

    icv = assign_icv_positions(mpr, n - 1, rng)

    specs = []
    for i, (mass, dec, alpha, react) in enumerate(raw):
        idx = i + 1
        specs.append(VehicleSpec(
            index=idx,
            kind=ICV if idx in icv else HV,
            mass=mass,
            length=vehicle_length_from_mass(mass, config),
            dec_max=dec,
            sensitivity=alpha,
            reaction_time=react,
        ))

    states = [VehicleState(0.0, speed, 0.0)]
    x = 0.0
    for i in range(1, n):
        x = x - specs[i - 1].length - gaps[i - 1]
        states.append(VehicleState(x, speed, 0.0))

    return ScenarioInstance(tuple(specs), tuple(states), float(mpr), icv, int(seed))
