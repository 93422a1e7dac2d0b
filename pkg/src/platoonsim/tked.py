"""Cooperative braking that minimizes total relative kinetic energy density.

Each tick the controller picks one constant desired acceleration per ICV and
scores it by rolling the lagged kinematics forward ``horizon`` ticks and
summing the energy density of every adjacent pair inside the considered set
(ICVs plus their immediate neighbours). Two solvers share the objective:

* ``projected_search``: coordinate line search + pattern search inside the
  box ``[-dec_max, 0]``, seeded with the zero and full-braking plans.
* ``grid_oracle``: exhaustive Cartesian grid, desk-scale validation only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._jit import kernel
from .config import TkedParams
from .controllers import delay_ticks
from .scenario import ICV, VehicleSpec, VehicleState

ORACLE_MAX_ICVS = 4


class OracleTooLarge(ValueError):
    pass


def build_considered_set(icv_indices, n: int) -> frozenset[int]:
    """ICVs plus the vehicle directly ahead of and behind each (1-based)."""
    out = set()
    for g in icv_indices:
        if not 2 <= g <= n:
            raise ValueError(f"ICV index {g} outside follower range 2..{n}")
        out.add(g)
        if g > 1:
            out.add(g - 1)
        if g < n:
            out.add(g + 1)
    return frozenset(out)


def considered_pairs(considered: frozenset[int]) -> list[tuple[int, int]]:
    return [(i, i + 1) for i in sorted(considered) if i + 1 in considered]


@kernel
def pair_energy_density(m_follower, gap, v_lead, v_follower, gap_floor):
    if v_lead > v_follower:
        return 0.0
    g = gap if gap > gap_floor else gap_floor
    dv = v_lead - v_follower
    return m_follower / (2.0 * g) * dv * dv


def tked_pair_f(m_follower: float, gap: float, v_lead: float, v_follower: float,
                delta: float = 0.05) -> float:
    return float(pair_energy_density(m_follower, gap, v_lead, v_follower, delta))


def tked_objective(states, specs, pairs, delta: float = 0.05, flags: list | None = None) -> float:
    """Sum of pair energy densities. Overlapping pairs are floored at ``delta``
    and, if ``flags`` is given, appended to it."""
    total = 0.0
    for i, j in pairs:
        front, back = states[i - 1], states[j - 1]
        gap = front.x - back.x - specs[i - 1].length
        if gap < 0 and flags is not None:
            flags.append((i, j))
        total += pair_energy_density(specs[j - 1].mass, gap, front.v, back.v, delta)
    return total


# --- kernels -----------------------------------------------------------------

@kernel
def rollout(u, x0, v0, a0, hist_v, tick, length, in_c, slot, horizon, dt, tau,
            hv_alpha, hv_delay, hv_dec_max, px, pv, pa):
    """Fill px/pv/pa (horizon+1, n) with the predicted trajectory under plan u.

    Lead holds its current acceleration; ICVs track u through the lag; HVs in
    the considered set follow the nominal delayed car-following law; every
    other vehicle keeps its current speed.
    """
    n = x0.shape[0]
    keep = (tau - dt) / tau
    gain = dt / tau
    for i in range(n):
        px[0, i] = x0[i]
        pv[0, i] = v0[i]
        pa[0, i] = a0[i]
    for k in range(horizon):
        for i in range(n):
            x = px[k, i]
            v = pv[k, i]
            a = pa[k, i]
            if i == 0:
                a_next = a
            elif slot[i] >= 0:
                a_next = keep * a + gain * u[slot[i]]
            elif in_c[i]:
                d = tick + k - hv_delay
                if d < 0:
                    a_des = 0.0
                elif d <= tick:
                    a_des = hv_alpha * (hist_v[d, i - 1] - hist_v[d, i])
                else:
                    a_des = hv_alpha * (pv[d - tick, i - 1] - pv[d - tick, i])
                if a_des > 0.0:
                    a_des = 0.0
                elif a_des < -hv_dec_max:
                    a_des = -hv_dec_max
                a_next = keep * a + gain * a_des
            else:
                a = 0.0
                a_next = 0.0
            v_next = v + a * dt
            if v_next <= 0.0:
                v_next = 0.0
                a_next = 0.0
            px[k + 1, i] = x + v * dt
            pv[k + 1, i] = v_next
            pa[k + 1, i] = a_next


@kernel
def horizon_objective(u, x0, v0, a0, hist_v, tick, mass, length, in_c, slot, pair_on,
                      horizon, dt, tau, hv_alpha, hv_delay, hv_dec_max, gap_floor,
                      px, pv, pa):
    rollout(u, x0, v0, a0, hist_v, tick, length, in_c, slot, horizon, dt, tau,
            hv_alpha, hv_delay, hv_dec_max, px, pv, pa)
    n = x0.shape[0]
    total = 0.0
    for k in range(1, horizon + 1):
        for i in range(1, n):
            if pair_on[i]:
                gap = px[k, i - 1] - px[k, i] - length[i - 1]
                total += pair_energy_density(mass[i], gap, pv[k, i - 1], pv[k, i], gap_floor)
    return total


@kernel
def grid_search(lower, levels, x0, v0, a0, hist_v, tick, mass, length, in_c, slot, pair_on,
                horizon, dt, tau, hv_alpha, hv_delay, hv_dec_max, gap_floor,
                px, pv, pa, best_u):
    """Exhaustive search over ``levels`` points per ICV. Level 0 is zero
    acceleration; the first ICV is the most significant digit, so strict
    improvement keeps the gentlest, front-most-lexicographic minimum."""
    m = lower.shape[0]
    idx = np.zeros(m, dtype=np.int64)
    u = np.zeros(m)
    best = np.inf
    total = 1
    for _ in range(m):
        total *= levels
    for _ in range(total):
        for j in range(m):
            u[j] = lower[j] * idx[j] / (levels - 1)
        f = horizon_objective(u, x0, v0, a0, hist_v, tick, mass, length, in_c, slot, pair_on,
                              horizon, dt, tau, hv_alpha, hv_delay, hv_dec_max, gap_floor,
                              px, pv, pa)
        if f < best:
            best = f
            for j in range(m):
                best_u[j] = u[j]
        # odometer increment, last ICV fastest
        j = m - 1
        while j >= 0:
            idx[j] += 1
            if idx[j] < levels:
                break
            idx[j] = 0
            j -= 1
    return best


@kernel
def projected_search(lower, x0, v0, a0, hist_v, tick, mass, length, in_c, slot, pair_on,
                     horizon, dt, tau, hv_alpha, hv_delay, hv_dec_max, gap_floor,
                     px, pv, pa, best_u):
    m = lower.shape[0]
    scan = 13
    max_sweeps = 3
    u = np.zeros(m)
    trial = np.zeros(m)
    best = horizon_objective(u, x0, v0, a0, hist_v, tick, mass, length, in_c, slot, pair_on,
                             horizon, dt, tau, hv_alpha, hv_delay, hv_dec_max, gap_floor,
                             px, pv, pa)
    for j in range(m):
        trial[j] = lower[j]
    f = horizon_objective(trial, x0, v0, a0, hist_v, tick, mass, length, in_c, slot, pair_on,
                          horizon, dt, tau, hv_alpha, hv_delay, hv_dec_max, gap_floor,
                          px, pv, pa)
    if f < best:
        best = f
        for j in range(m):
            u[j] = trial[j]

    # coordinate sweeps: coarse scan then golden-section refinement
    invphi = 0.6180339887498949
    for _ in range(max_sweeps):
        improved = False
        for j in range(m):
            for q in range(m):
                trial[q] = u[q]
            step = lower[j] / (scan - 1)
            best_l = -1
            best_f = best
            for l in range(scan):
                trial[j] = step * l
                f = horizon_objective(trial, x0, v0, a0, hist_v, tick, mass, length, in_c, slot,
                                      pair_on, horizon, dt, tau, hv_alpha, hv_delay, hv_dec_max,
                                      gap_floor, px, pv, pa)
                if f < best_f:
                    best_f = f
                    best_l = l
            centre = u[j] if best_l < 0 else step * best_l
            # bracket one scan step either side, inside the box
            lo = centre + step
            hi = centre - step
            if lo < lower[j]:
                lo = lower[j]
            if hi > 0.0:
                hi = 0.0
            c = hi - invphi * (hi - lo)
            d = lo + invphi * (hi - lo)
            trial[j] = c
            fc = horizon_objective(trial, x0, v0, a0, hist_v, tick, mass, length, in_c, slot,
                                   pair_on, horizon, dt, tau, hv_alpha, hv_delay, hv_dec_max,
                                   gap_floor, px, pv, pa)
            trial[j] = d
            fd = horizon_objective(trial, x0, v0, a0, hist_v, tick, mass, length, in_c, slot,
                                   pair_on, horizon, dt, tau, hv_alpha, hv_delay, hv_dec_max,
                                   gap_floor, px, pv, pa)
            for _it in range(16):
                if fc < fd:
                    hi = d
                    d = c
                    fd = fc
                    c = hi - invphi * (hi - lo)
                    trial[j] = c
                    fc = horizon_objective(trial, x0, v0, a0, hist_v, tick, mass, length, in_c,
                                           slot, pair_on, horizon, dt, tau, hv_alpha, hv_delay,
                                           hv_dec_max, gap_floor, px, pv, pa)
                else:
                    lo = c
                    c = d
                    fc = fd
                    d = lo + invphi * (hi - lo)
                    trial[j] = d
                    fd = horizon_objective(trial, x0, v0, a0, hist_v, tick, mass, length, in_c,
                                           slot, pair_on, horizon, dt, tau, hv_alpha, hv_delay,
                                           hv_dec_max, gap_floor, px, pv, pa)
            if fc < best_f:
                best_f = fc
                centre = c
            if fd < best_f:
                best_f = fd
                centre = d
            if best_f < best:
                if best - best_f > 1e-12 * (1.0 + best):
                    improved = True
                best = best_f
                u[j] = centre
        if not improved:
            break

    # pattern search for coupled directions the coordinate pass misses
    span = 0.0
    for j in range(m):
        if -lower[j] > span:
            span = -lower[j]
    step = span / 8.0
    rounds = 0
    while step > 1e-3 * span and rounds < 60:
        rounds += 1
        moved = False
        for j in range(m):
            for sgn in (-1.0, 1.0):
                for q in range(m):
                    trial[q] = u[q]
                t = u[j] + sgn * step
                if t < lower[j]:
                    t = lower[j]
                elif t > 0.0:
                    t = 0.0
                trial[j] = t
                f = horizon_objective(trial, x0, v0, a0, hist_v, tick, mass, length, in_c, slot,
                                      pair_on, horizon, dt, tau, hv_alpha, hv_delay, hv_dec_max,
                                      gap_floor, px, pv, pa)
                if f < best:
                    best = f
                    for q in range(m):
                        u[q] = trial[q]
                    moved = True
        if m > 1:
            # joint shift of every ICV: pile-ups usually want coordinated moves
            for sgn in (-1.0, 1.0):
                for q in range(m):
                    trial[q] = u[q] + sgn * step
                    if trial[q] < lower[q]:
                        trial[q] = lower[q]
                    elif trial[q] > 0.0:
                        trial[q] = 0.0
                f = horizon_objective(trial, x0, v0, a0, hist_v, tick, mass, length, in_c, slot,
                                      pair_on, horizon, dt, tau, hv_alpha, hv_delay, hv_dec_max,
                                      gap_floor, px, pv, pa)
                if f < best:
                    best = f
                    for q in range(m):
                        u[q] = trial[q]
                    moved = True
        if not moved:
            step *= 0.5
    for j in range(m):
        best_u[j] = u[j]
    return best


# --- problem assembly ----------------------------------------------------------

@dataclass
class ControlPlan:
    accelerations: dict[int, float]  # 1-based vehicle index -> desired accel
    objective: float

    def as_array(self, icv_order) -> np.ndarray:
        return np.array([self.accelerations[g] for g in icv_order])


@dataclass
class MpcProblem:
    """Array form of one receding-horizon solve."""

    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    hist_v: np.ndarray
    tick: int
    mass: np.ndarray
    length: np.ndarray
    lower: np.ndarray  # per ICV, -dec_max
    icv_order: tuple[int, ...]  # 1-based, front to back
    in_c: np.ndarray
    slot: np.ndarray
    pair_on: np.ndarray
    params: TkedParams
    dt: float = 0.1
    tau: float = 0.5
    buffers: tuple = field(default=(), repr=False)

    @classmethod
    def build(cls, states, specs, params: TkedParams, *, history_v=None, tick: int = 0,
              dt: float = 0.1, tau: float = 0.5) -> "MpcProblem":
        n = len(specs)
        icvs = tuple(s.index for s in specs if s.kind == ICV)
        if not icvs:
            raise ValueError("TKED solve needs at least one ICV")
        considered = build_considered_set(icvs, n)
        x = np.array([s.x for s in states], dtype=float)
        v = np.array([s.v for s in states], dtype=float)
        a = np.array([s.a for s in states], dtype=float)
        if history_v is None:
            # steady state before now
            history_v = np.tile(v, (tick + 1, 1))
        in_c = np.zeros(n, dtype=np.bool_)
        for c in considered:
            in_c[c - 1] = True
        slot = np.full(n, -1, dtype=np.int64)
        for k, g in enumerate(icvs):
            slot[g - 1] = k
        pair_on = np.zeros(n, dtype=np.bool_)
        for i, j in considered_pairs(considered):
            pair_on[j - 1] = True
        lower = np.array([-specs[g - 1].dec_max for g in icvs])
        return cls(x, v, a, np.asarray(history_v, dtype=float), int(tick),
                   np.array([s.mass for s in specs]), np.array([s.length for s in specs]),
                   lower, icvs, in_c, slot, pair_on, params, dt, tau,
                   _buffers(params.horizon, n))

    def _args(self):
        p = self.params
        return (self.x, self.v, self.a, self.hist_v, self.tick, self.mass, self.length,
                self.in_c, self.slot, self.pair_on, p.horizon, self.dt, self.tau, p.hv_alpha,
                delay_ticks(p.hv_reaction, self.dt), p.hv_dec_max, p.gap_floor)

    def objective(self, u) -> float:
        return float(horizon_objective(np.asarray(u, dtype=float), *self._args(), *self.buffers))

    def plan(self, u, objective: float) -> ControlPlan:
        return ControlPlan({g: float(val) for g, val in zip(self.icv_order, u)}, float(objective))


def _buffers(horizon: int, n: int):
    return (np.zeros((horizon + 1, n)), np.zeros((horizon + 1, n)), np.zeros((horizon + 1, n)))


def predict_horizon(states, plan: ControlPlan, params: TkedParams, specs, *, history_v=None,
                    tick: int = 0, dt: float = 0.1, tau: float = 0.5) -> np.ndarray:
    """Predicted (horizon+1, n, 3) array of x, v, a under ``plan``."""
    prob = MpcProblem.build(states, specs, params, history_v=history_v, tick=tick, dt=dt, tau=tau)
    if set(plan.accelerations) != set(prob.icv_order):
        raise ValueError("plan must cover exactly the ICV set")
    u = plan.as_array(prob.icv_order)
    p = params
    px, pv, pa = prob.buffers
    rollout(u, prob.x, prob.v, prob.a, prob.hist_v, prob.tick, prob.length, prob.in_c,
            prob.slot, p.horizon, dt, tau, p.hv_alpha, delay_ticks(p.hv_reaction, dt),
            p.hv_dec_max, px, pv, pa)
    return np.stack([px.copy(), pv.copy(), pa.copy()], axis=-1)


def _solve(prob: MpcProblem, solver: str) -> ControlPlan:
    best_u = np.zeros(len(prob.icv_order))
    if solver == "grid_oracle":
        if len(prob.icv_order) > ORACLE_MAX_ICVS:
            raise OracleTooLarge(
                f"grid oracle limited to {ORACLE_MAX_ICVS} ICVs, got {len(prob.icv_order)}")
        f = grid_search(prob.lower, prob.params.grid_levels, *prob._args(), *prob.buffers, best_u)
    else:
        f = projected_search(prob.lower, *prob._args(), *prob.buffers, best_u)
    return prob.plan(best_u, f)


def solve_tked(states, specs, params: TkedParams = TkedParams(), *, history_v=None,
               tick: int = 0, dt: float = 0.1, tau: float = 0.5) -> ControlPlan:
    prob = MpcProblem.build(states, specs, params, history_v=history_v, tick=tick, dt=dt, tau=tau)
    return _solve(prob, params.solver)


def grid_oracle(states, specs, params: TkedParams = TkedParams(), *, history_v=None,
                tick: int = 0, dt: float = 0.1, tau: float = 0.5) -> ControlPlan:
    prob = MpcProblem.build(states, specs, params, history_v=history_v, tick=tick, dt=dt, tau=tau)
    return _solve(prob, "grid_oracle")


def random_instance(rng: np.random.Generator, n_vehicles: int = 4, max_icvs: int = 3,
                    speed=(20.0, 32.0), gap=(0.5, 30.0)):
    """Random mid-braking platoon for solver-vs-oracle checks."""
    n_icv = int(rng.integers(1, max_icvs + 1))
    icv = set((rng.permutation(n_vehicles - 1)[:n_icv] + 2).tolist())
    specs, states = [], []
    x = 0.0
    for i in range(1, n_vehicles + 1):
        mass = float(rng.uniform(900, 2500))
        length = 3.5 + (mass - 900) / 1600 * 2.0
        specs.append(VehicleSpec(i, ICV if i in icv else "HV", mass, length,
                                 float(rng.uniform(4.0, 7.0)), 0.85, 1.1))
        if i > 1:
            x -= specs[i - 2].length + float(rng.uniform(*gap))
        states.append(VehicleState(x, float(rng.uniform(*speed)), float(rng.uniform(-5.0, 0.0))))
    return states, specs


def compare_with_oracle(n_instances: int = 100, seed: int = 0, params: TkedParams = TkedParams(),
                        n_vehicles: int = 4, max_icvs: int = 3) -> np.ndarray:
    """Relative objective gap (solver - oracle) / oracle on random instances.

    Negative entries mean the continuous solver beat the grid.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    gaps = np.empty(n_instances)
    for k in range(n_instances):
        states, specs = random_instance(rng, n_vehicles, max_icvs)
        prob = MpcProblem.build(states, specs, params)
        got = _solve(prob, "projected_search").objective
        ref = _solve(prob, "grid_oracle").objective
        gaps[k] = (got - ref) / ref if ref > 0 else (0.0 if got <= 0 else np.inf)
    return gaps
