"""Per-vehicle desired-acceleration laws.

The scalar kernels (``*_accel``) are what the simulation loop calls; the
``*_desired_accel`` wrappers evaluate the same kernels from a
:class:`ControllerInput` snapshot. Every output is clamped to the braking
band ``[-dec_max, 0]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._jit import kernel
from .config import SdParams, SmcParams
from .scenario import VehicleSpec, VehicleState

CLAMP_BRAKE_ONLY = 0
CLAMP_SYMMETRIC = 1
CLAMP_CODES = {"brake_only": CLAMP_BRAKE_ONLY, "symmetric": CLAMP_SYMMETRIC}


@kernel
def clamp_accel(a, dec_max, clamp_code):
    hi = 0.0 if clamp_code == CLAMP_BRAKE_ONLY else dec_max
    if a < -dec_max:
        return -dec_max
    if a > hi:
        return hi
    return a


@kernel
def delay_ticks(reaction_time, dt):
    return int(math.floor(reaction_time / dt + 0.5))


@kernel
def hv_accel(alpha, v_pred_delayed, v_ego_delayed, dec_max, clamp_code):
    return clamp_accel(alpha * (v_pred_delayed - v_ego_delayed), dec_max, clamp_code)


@kernel
def db_accel(dec_max):
    return -dec_max


@kernel
def sd_accel(v_pred, v_ego, gap, t_thw, epsilon, dec_max):
    s_safe = t_thw * v_ego + epsilon
    if gap <= s_safe:
        return -dec_max
    a = (v_pred * v_pred - v_ego * v_ego) / (2.0 * (gap - s_safe))
    return clamp_accel(a, dec_max, CLAMP_BRAKE_ONLY)


@kernel
def smc_law(a_pred, a_lead, spacing_err, spacing_err_rate, v_ego, v_lead, c, omega_n, xi):
    """Unclamped sliding-mode law.

    ``spacing_err`` is positive when the ego is closer than its reference
    gap; ``spacing_err_rate`` is its time derivative (v_ego - v_pred).
    """
    root = xi + math.sqrt(xi * xi - 1.0)
    return ((1.0 - c) * a_pred + c * a_lead
            - (2.0 * xi - c * root) * omega_n * spacing_err_rate
            - root * omega_n * c * (v_ego - v_lead)
            - omega_n * omega_n * spacing_err)


@kernel
def smc_accel(a_pred, a_lead, gap, ref_gap, v_pred, v_ego, v_lead, c, omega_n, xi, dec_max):
    a = smc_law(a_pred, a_lead, ref_gap - gap, v_ego - v_pred, v_ego, v_lead, c, omega_n, xi)
    return clamp_accel(a, dec_max, CLAMP_BRAKE_ONLY)


# --- snapshot API ------------------------------------------------------------

@dataclass
class ControllerInput:
    """What one vehicle can see at one tick.

    ``history_v`` holds committed platoon speeds, one row per tick from 0 up
    to ``tick`` inclusive, columns in platoon order (lead first).
    """

    ego: VehicleState
    ego_spec: VehicleSpec
    predecessor: VehicleState | None
    predecessor_spec: VehicleSpec | None
    lead: VehicleState
    history_v: np.ndarray | None = None
    tick: int = 0
    dt: float = 0.1
    ref_gap: float | None = None  # SMC reference spacing

    @property
    def t(self) -> float:
        return self.tick * self.dt

    @property
    def gap(self) -> float:
        self._require_predecessor()
        return self.predecessor.x - self.predecessor_spec.length - self.ego.x

    def _require_predecessor(self):
        if self.predecessor is None or self.predecessor_spec is None:
            raise ValueError(f"vehicle {self.ego_spec.index} has no predecessor (lead runs no controller)")


def hv_desired_accel(inp: ControllerInput, clamp: str = "brake_only") -> float:
    inp._require_predecessor()
    lag = delay_ticks(inp.ego_spec.reaction_time, inp.dt)
    if inp.tick < lag:
        return 0.0
    if inp.history_v is None or inp.history_v.shape[0] <= inp.tick - lag:
        raise ValueError("history does not reach back to the delayed stimulus")
    row = inp.history_v[inp.tick - lag]
    v_pred = row[inp.predecessor_spec.index - 1]
    v_ego = row[inp.ego_spec.index - 1]
    return float(hv_accel(inp.ego_spec.sensitivity, v_pred, v_ego, inp.ego_spec.dec_max, CLAMP_CODES[clamp]))


def db_desired_accel(ego: VehicleSpec) -> float:
    return float(db_accel(ego.dec_max))


def sd_desired_accel(inp: ControllerInput, p: SdParams = SdParams()) -> float:
    gap = inp.gap
    if gap < 0:
        raise ValueError(f"negative gap {gap:.3f} m behind vehicle {inp.predecessor_spec.index}")
    return float(sd_accel(inp.predecessor.v, inp.ego.v, gap, p.t_thw, p.epsilon, inp.ego_spec.dec_max))


def smc_desired_accel(inp: ControllerInput, p: SmcParams = SmcParams()) -> float:
    gap = inp.gap
    ref = gap if inp.ref_gap is None else inp.ref_gap
    return float(smc_accel(inp.predecessor.a, inp.lead.a, gap, ref, inp.predecessor.v, inp.ego.v,
                           inp.lead.v, p.c, p.omega_n, p.xi, inp.ego_spec.dec_max))
