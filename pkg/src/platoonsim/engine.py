"""Tick loop for one emergency-braking episode.

Per tick: every vehicle computes a desired acceleration from the last
committed state, all vehicles advance through the first-order lag model,
then rear-end contacts are detected front to back and resolved with a
coefficient of restitution. Positions are not corrected after a contact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._jit import kernel
from .config import ALGORITHM_CODES, SimConfig
from .controllers import CLAMP_CODES, db_accel, delay_ticks, hv_accel, sd_accel, smc_accel
from .scenario import ScenarioInstance, VehicleState
from .tked import ORACLE_MAX_ICVS, OracleTooLarge, grid_search, projected_search

ALGO_DB, ALGO_SD, ALGO_SMC, ALGO_TKED = (ALGORITHM_CODES[k] for k in ("db", "sd", "smc", "tked"))
SOLVER_CODES = {"projected_search": 0, "grid_oracle": 1}

__all__ = [
    "VehicleState", "EngineParams", "CrashRecord", "IterationResult", "step_kinematics",
    "detect_collisions", "resolve_collision", "energy_loss", "run_iteration",
]


@dataclass(frozen=True)
class EngineParams:
    tau: float = 0.5
    dt: float = 0.1
    crash_gap: float = 0.05
    restitution: float = 0.0
    max_sim_time: float = 30.0

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "EngineParams":
        return cls(cfg.tau, cfg.dt, cfg.crash_gap_threshold, cfg.restitution, cfg.max_sim_time)


@dataclass(frozen=True)
class CrashRecord:
    pair: tuple[int, int]  # (struck, striking), 1-based
    tick: int
    v_before: tuple[float, float]  # (front, rear)
    v_after: tuple[float, float]
    e_loss: float
    iteration: int = 0

    @property
    def position(self) -> int:
        return self.pair[1]


@dataclass
class IterationResult:
    crashes: list[CrashRecord]
    total_e_loss: float
    crashed: np.ndarray  # bool per 1-based position 1..n (index 0 = lead, never set)
    duration_ticks: int
    trace: dict[str, np.ndarray] | None = field(default=None, repr=False)

    def trace_ndjson(self, dt: float) -> str:
        """One JSON object per committed tick."""
        if self.trace is None:
            raise ValueError("iteration was run without trace recording")
        lines = []
        X, V, A, D = (self.trace[k] for k in ("x", "v", "a", "a_des"))
        for k in range(self.duration_ticks + 1):
            vehicles = []
            for i in range(X.shape[1]):
                ad = D[k, i]
                vehicles.append({"x": float(X[k, i]), "v": float(V[k, i]), "a": float(A[k, i]),
                                 "a_des": None if np.isnan(ad) else float(ad)})
            lines.append(json.dumps({"tick": k, "t": round(k * dt, 10), "vehicles": vehicles}))
        return "\n".join(lines) + "\n"


# --- physics kernels -----------------------------------------------------------

@kernel
def step_state(x, v, a, a_des, dt, tau):
    x_next = x + v * dt
    v_next = v + a * dt
    a_next = (tau - dt) / tau * a + dt / tau * a_des
    if v_next <= 0.0:
        v_next = 0.0
        a_next = 0.0
    return x_next, v_next, a_next


@kernel
def restitution_velocities(v_front, v_rear, m_front, m_rear, c_r):
    total = m_front + m_rear
    vf = ((m_front - c_r * m_rear) * v_front + (1.0 + c_r) * m_rear * v_rear) / total
    vr = ((m_rear - c_r * m_front) * v_rear + (1.0 + c_r) * m_front * v_front) / total
    return vf, vr


@kernel
def kinetic_energy_loss(v_front, v_rear, vf_after, vr_after, m_front, m_rear):
    return 0.5 * (m_front * v_front * v_front + m_rear * v_rear * v_rear
                  - m_front * vf_after * vf_after - m_rear * vr_after * vr_after)


@kernel
def is_contact(gap, v_front, v_rear, crash_gap):
    return gap < crash_gap and v_rear > v_front


def step_kinematics(state: VehicleState, a_des: float, p: EngineParams = EngineParams()) -> VehicleState:
    return VehicleState(*step_state(state.x, state.v, state.a, a_des, p.dt, p.tau))


def resolve_collision(v_lead_before: float, v_follow_before: float, m_lead: float, m_follow: float,
                      c_r: float = 0.0) -> tuple[float, float]:
    if v_follow_before < v_lead_before:
        raise ValueError("follower is not closing on its predecessor")
    if m_lead <= 0 or m_follow <= 0:
        raise ValueError("masses must be positive")
    if not 0.0 <= c_r <= 1.0:
        raise ValueError("coefficient of restitution must be in [0,1]")
    vf, vr = restitution_velocities(v_lead_before, v_follow_before, m_lead, m_follow, c_r)
    return float(vf), float(vr)


def energy_loss(v_before, v_after, masses) -> float:
    return float(kinetic_energy_loss(v_before[0], v_before[1], v_after[0], v_after[1],
                                     masses[0], masses[1]))


def detect_collisions(states, specs, crashed=(), struck=(), crash_gap: float = 0.05):
    """Fresh contacts on a committed tick, front to back, as (i-1, i) pairs.

    ``crashed`` holds striking positions whose pair already crashed;
    ``struck`` holds positions already hit from behind (their contact with
    the vehicle ahead is ignored).
    """
    out = []
    for i in range(1, len(states)):
        pos = i + 1
        if pos in crashed or pos in struck:
            continue
        gap = states[i - 1].x - specs[i - 1].length - states[i].x
        if is_contact(gap, states[i - 1].v, states[i].v, crash_gap):
            out.append((pos - 1, pos))
    return out


# --- main loop -------------------------------------------------------------------

@kernel
def simulate(algo, mass, length, dec_max, alpha, reaction, is_icv, x0, v0, a0,
             dt, tau, n_ticks, crash_gap, c_r, hv_clamp,
             sd_t, sd_eps, smc_c, smc_w, smc_xi,
             tk_horizon, tk_floor, tk_alpha, tk_delay, tk_dec, tk_solver, tk_levels,
             X, V, A, D, crash_tick, crash_v, crash_e):
    """Run one episode in place. Returns the last committed tick.

    X, V, A are (n_ticks+1, n) state histories; D holds desired
    accelerations (NaN where not computed). crash_tick[i] is the tick at
    which follower i (0-based) struck i-1, or -1; crash_v[i] holds
    (front before, rear before, front after, rear after).
    """
    n = mass.shape[0]
    for i in range(n):
        X[0, i] = x0[i]
        V[0, i] = v0[i]
        A[0, i] = a0[i]
        crash_tick[i] = -1
        crash_e[i] = 0.0
    struck = np.zeros(n, dtype=np.bool_)
    ref_gap = np.zeros(n)
    for i in range(1, n):
        ref_gap[i] = x0[i - 1] - length[i - 1] - x0[i]
    lags = np.zeros(n, dtype=np.int64)
    for i in range(n):
        lags[i] = delay_ticks(reaction[i], dt)

    # TKED problem layout: fixed for the episode
    m_icv = 0
    for i in range(n):
        if is_icv[i]:
            m_icv += 1
    use_mpc = algo == 3 and m_icv > 0
    slot = np.full(n, -1, dtype=np.int64)
    in_c = np.zeros(n, dtype=np.bool_)
    pair_on = np.zeros(n, dtype=np.bool_)
    lower = np.zeros(m_icv)
    best_u = np.zeros(m_icv)
    k_slot = 0
    for i in range(n):
        if is_icv[i]:
            slot[i] = k_slot
            lower[k_slot] = -dec_max[i]
            k_slot += 1
            in_c[i] = True
            if i > 0:
                in_c[i - 1] = True
            if i < n - 1:
                in_c[i + 1] = True
    for i in range(1, n):
        pair_on[i] = in_c[i - 1] and in_c[i]
    px = np.zeros((tk_horizon + 1, n))
    pv = np.zeros((tk_horizon + 1, n))
    pa = np.zeros((tk_horizon + 1, n))

    last = n_ticks
    for k in range(n_ticks):
        icv_moving = False
        for i in range(n):
            if is_icv[i] and (V[k, i] > 0.0 or A[k, i] != 0.0):
                icv_moving = True
        if use_mpc and not icv_moving:
            for j in range(m_icv):
                best_u[j] = 0.0
        elif use_mpc:
            xk = X[k].copy()
            vk = V[k].copy()
            ak = A[k].copy()
            if tk_solver == 1:
                grid_search(lower, tk_levels, xk, vk, ak, V, k, mass, length, in_c, slot, pair_on,
                            tk_horizon, dt, tau, tk_alpha, tk_delay, tk_dec, tk_floor,
                            px, pv, pa, best_u)
            else:
                projected_search(lower, xk, vk, ak, V, k, mass, length, in_c, slot, pair_on,
                                 tk_horizon, dt, tau, tk_alpha, tk_delay, tk_dec, tk_floor,
                                 px, pv, pa, best_u)
        D[k, 0] = db_accel(dec_max[0])
        for i in range(1, n):
            if is_icv[i]:
                if algo == 0:
                    ad = db_accel(dec_max[i])
                elif algo == 1:
                    gap = X[k, i - 1] - length[i - 1] - X[k, i]
                    ad = sd_accel(V[k, i - 1], V[k, i], gap, sd_t, sd_eps, dec_max[i])
                elif algo == 2:
                    gap = X[k, i - 1] - length[i - 1] - X[k, i]
                    ad = smc_accel(A[k, i - 1], A[k, 0], gap, ref_gap[i], V[k, i - 1], V[k, i],
                                   V[k, 0], smc_c, smc_w, smc_xi, dec_max[i])
                else:
                    ad = best_u[slot[i]]
            else:
                lag = lags[i]
                if k < lag:
                    ad = 0.0
                else:
                    ad = hv_accel(alpha[i], V[k - lag, i - 1], V[k - lag, i], dec_max[i], hv_clamp)
            D[k, i] = ad

        moving = False
        for i in range(n):
            xn, vn, an = step_state(X[k, i], V[k, i], A[k, i], D[k, i], dt, tau)
            X[k + 1, i] = xn
            V[k + 1, i] = vn
            A[k + 1, i] = an

        for i in range(1, n):
            if crash_tick[i] >= 0 or struck[i]:
                continue
            gap = X[k + 1, i - 1] - length[i - 1] - X[k + 1, i]
            vf = V[k + 1, i - 1]
            vr = V[k + 1, i]
            if is_contact(gap, vf, vr, crash_gap):
                vfa, vra = restitution_velocities(vf, vr, mass[i - 1], mass[i], c_r)
                crash_tick[i] = k + 1
                crash_v[i, 0] = vf
                crash_v[i, 1] = vr
                crash_v[i, 2] = vfa
                crash_v[i, 3] = vra
                crash_e[i] = kinetic_energy_loss(vf, vr, vfa, vra, mass[i - 1], mass[i])
                V[k + 1, i - 1] = vfa if vfa > 0.0 else 0.0
                V[k + 1, i] = vra if vra > 0.0 else 0.0
                struck[i - 1] = True

        for i in range(n):
            if V[k + 1, i] > 0.0:
                moving = True
                break
        if not moving:
            last = k + 1
            break
    for i in range(n):
        D[last, i] = np.nan
    return last


def run_iteration(scenario: ScenarioInstance, algorithm: str, config: SimConfig | None = None,
                  trace: bool = False, iteration: int = 0) -> IterationResult:
    config = config or SimConfig()
    if algorithm not in ALGORITHM_CODES:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if len(scenario.specs) != config.n_vehicles:
        raise ValueError("scenario size does not match config.n_vehicles")
    tk = config.tked
    if (algorithm == "tked" and tk.solver == "grid_oracle"
            and len(scenario.icv_indices) > ORACLE_MAX_ICVS):
        raise OracleTooLarge(f"grid oracle limited to {ORACLE_MAX_ICVS} ICVs")
    arr = scenario.arrays()
    n = scenario.n
    T = config.n_ticks
    X = np.empty((T + 1, n))
    V = np.empty((T + 1, n))
    A = np.empty((T + 1, n))
    D = np.full((T + 1, n), np.nan)
    crash_tick = np.empty(n, dtype=np.int64)
    crash_v = np.zeros((n, 4))
    crash_e = np.zeros(n)
    last = simulate(
        ALGORITHM_CODES[algorithm], arr["mass"], arr["length"], arr["dec_max"], arr["alpha"],
        arr["reaction"], arr["is_icv"], arr["x0"], arr["v0"], arr["a0"],
        config.dt, config.tau, T, config.crash_gap_threshold, config.restitution,
        CLAMP_CODES[config.hv.clamp],
        config.sd.t_thw, config.sd.epsilon, config.smc.c, config.smc.omega_n, config.smc.xi,
        tk.horizon, tk.gap_floor, tk.hv_alpha, delay_ticks(tk.hv_reaction, config.dt), tk.hv_dec_max,
        SOLVER_CODES[tk.solver], tk.grid_levels,
        X, V, A, D, crash_tick, crash_v, crash_e,
    )
    crashes = []
    for i in range(1, n):
        if crash_tick[i] >= 0:
            cv = crash_v[i]
            crashes.append(CrashRecord((i, i + 1), int(crash_tick[i]), (float(cv[0]), float(cv[1])),
                                       (float(cv[2]), float(cv[3])), float(crash_e[i]), iteration))
    crashes.sort(key=lambda c: (c.tick, c.pair))
    crashed = np.zeros(n + 1, dtype=bool)
    for c in crashes:
        crashed[c.position] = True
    result = IterationResult(crashes, float(sum(c.e_loss for c in crashes)), crashed[1:], int(last))
    if trace:
        result.trace = {"x": X[: last + 1], "v": V[: last + 1], "a": A[: last + 1], "a_des": D[: last + 1]}
    return result
