import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from platoonsim.config import SdParams, SmcParams
from platoonsim.controllers import (
    ControllerInput, db_desired_accel, hv_accel, hv_desired_accel, sd_desired_accel, smc_accel,
    smc_desired_accel, smc_law,
)
from platoonsim.scenario import VehicleSpec, VehicleState

LEAD = VehicleSpec(1, "HV", 1500.0, 4.5, 5.5, 0.85, 1.1)


def spec(dec=5.5, alpha=0.85, react=1.1, idx=2, kind="ICV"):
    return VehicleSpec(idx, kind, 1500.0, 4.5, dec, alpha, react)


def snap(v_pred, v_ego, gap, dec=5.5, a_pred=0.0, lead=None, ref_gap=None):
    pred = VehicleState(0.0, v_pred, a_pred)
    ego = VehicleState(-LEAD.length - gap, v_ego, 0.0)
    return ControllerInput(ego, spec(dec), pred, LEAD, lead or pred, ref_gap=ref_gap)


def hv_input(history, tick, alpha=0.85, react=1.1, dec=5.5):
    ego_spec = spec(dec, alpha, react, kind="HV")
    return ControllerInput(VehicleState(-50, 30, 0), ego_spec, VehicleState(0, 30, 0), LEAD,
                           VehicleState(0, 30, 0), history_v=history, tick=tick)


# --- HV --------------------------------------------------------------------------

def test_hv_raw_stimulus():
    # 0.85 * (25 - 30)
    assert hv_accel(0.85, 25.0, 30.0, 5.5, 0) == pytest.approx(-4.25, abs=1e-12)


def test_hv_uses_delayed_speeds():
    hist = np.full((20, 2), 30.0)
    hist[:, 0] = 0.0
    hist[9, 0] = 25.0  # tick 20 - 11
    assert hv_desired_accel(hv_input(hist, 20)) == pytest.approx(-4.25, abs=1e-12)


def test_hv_equal_speeds_zero():
    hist = np.full((15, 2), 30.0)
    assert hv_desired_accel(hv_input(hist, 14)) == 0.0


def test_hv_clamps_to_dec_max():
    assert hv_accel(0.85, 20.0, 30.0, 5.5, 0) == -5.5
    hist = np.full((15, 2), 30.0)
    hist[3, 0] = 20.0
    assert hv_desired_accel(hv_input(hist, 14)) == -5.5


def test_hv_positive_stimulus_truncated():
    assert hv_accel(0.85, 32.0, 30.0, 5.5, 0) == 0.0
    assert hv_accel(0.85, 32.0, 30.0, 5.5, 1) == pytest.approx(1.7)


def test_hv_coasts_before_reaction():
    hist = np.zeros((11, 2))
    hist[:, 1] = 30.0
    assert hv_desired_accel(hv_input(hist, 10)) == 0.0  # 10 ticks < 1.1 s


def test_hv_requires_predecessor():
    inp = ControllerInput(VehicleState(0, 30, 0), LEAD, None, None, VehicleState(0, 30, 0))
    with pytest.raises(ValueError):
        hv_desired_accel(inp)


@given(st.lists(st.floats(0, 40), min_size=2, max_size=2), st.integers(11, 29),
       st.floats(0, 40))
@settings(max_examples=80, deadline=None)
def test_hv_causality(speeds, tick, noise):
    rng = np.random.default_rng(tick)
    hist = rng.uniform(0, 40, size=(tick + 1, 2))
    base = hv_desired_accel(hv_input(hist, tick))
    later = hist.copy()
    later[tick - 11 + 1:, :] = noise  # anything after t - reaction
    assert hv_desired_accel(hv_input(later, tick)) == base


# --- DB --------------------------------------------------------------------------

@pytest.mark.parametrize("dec", [5.5, 3.7])
def test_db_passthrough(dec):
    assert db_desired_accel(spec(dec)) == -dec
    assert db_desired_accel(spec(dec)) == db_desired_accel(spec(dec))


# --- SD --------------------------------------------------------------------------

def test_sd_formula_then_clamp():
    # s_safe = 31, raw = (400 - 900) / 60 = -8.33 -> -dec_max
    assert sd_desired_accel(snap(20, 30, 61), SdParams(1.0, 1.0)) == -5.5
    # gentler case inside the band: (625 - 900) / (2 * 50) = -2.75
    assert sd_desired_accel(snap(25, 30, 81)) == pytest.approx(-2.75, abs=1e-12)


def test_sd_equal_speeds():
    assert sd_desired_accel(snap(30, 30, 50)) == 0.0


def test_sd_unsafe_gap_brakes_fully():
    assert sd_desired_accel(snap(30, 30, 20, dec=6.1)) == -6.1
    assert sd_desired_accel(snap(30, 30, 31)) == -5.5  # boundary counts as unsafe


def test_sd_negative_gap_rejected():
    with pytest.raises(ValueError):
        sd_desired_accel(snap(30, 30, -0.5))


def test_sd_consistency_closed_form():
    """Applying the SD deceleration exactly (no lag, constant) brings the ego to
    the predecessor's speed after travelling exactly gap - s_safe."""
    v_e, g, p = 30.0, 80.0, SdParams()
    s_safe = p.t_thw * v_e + p.epsilon
    for v_p in (0.0, 10.0, 20.0):
        a = (v_p ** 2 - v_e ** 2) / (2 * (g - s_safe))
        t_match = (v_p - v_e) / a
        travelled = v_e * t_match + 0.5 * a * t_match ** 2
        assert travelled == pytest.approx(g - s_safe, rel=1e-12)
        # fine Euler integration of the same motion
        dt, x, v = 1e-5, 0.0, v_e
        while v > v_p:
            x += v * dt + 0.5 * a * dt * dt
            v += a * dt
        assert x == pytest.approx(g - s_safe, abs=1e-3)
    # stationary predecessor: the gap at standstill equals the initial s_safe
    a = -v_e ** 2 / (2 * (g - s_safe))
    assert g - (-v_e ** 2 / (2 * a)) == pytest.approx(s_safe, rel=1e-12)


# --- SMC -------------------------------------------------------------------------

def test_smc_equilibrium_passthrough():
    assert smc_law(-5.0, -5.0, 0.0, 0.0, 20.0, 20.0, 0.7, 0.8, 1.0) == pytest.approx(-5.0)


def test_smc_lead_speed_term():
    # xi=1 -> sqrt term vanishes: -(1)(0.8)(0.7)(2)
    assert smc_law(0.0, 0.0, 0.0, 0.0, 22.0, 20.0, 0.7, 0.8, 1.0) == pytest.approx(-1.12, abs=1e-12)


def test_smc_spacing_term_then_clamp():
    # -omega_n^2 * eps = +1.92 -> clamped to 0
    assert smc_law(0.0, 0.0, -3.0, 0.0, 20.0, 20.0, 0.7, 0.8, 1.0) == pytest.approx(1.92, abs=1e-12)
    inp = snap(20, 20, 33.0, ref_gap=30.0)  # 3 m further back than reference
    assert smc_desired_accel(inp) == 0.0


def test_smc_term_by_term_general_xi():
    c, w, xi = 0.6, 0.9, 1.5
    root = xi + np.sqrt(xi ** 2 - 1)
    a_pred, a_lead, e, de, v, vl = -2.0, -4.0, 1.5, 0.7, 25.0, 23.0
    expect = ((1 - c) * a_pred + c * a_lead - (2 * xi - c * root) * w * de
              - root * w * c * (v - vl) - w * w * e)
    assert smc_law(a_pred, a_lead, e, de, v, vl, c, w, xi) == pytest.approx(expect, rel=1e-12)


def test_smc_saturates_when_too_close_and_closing():
    inp = snap(10, 30, 5.0, dec=6.0, ref_gap=40.0, lead=VehicleState(100, 10, -5.5))
    assert smc_desired_accel(inp, SmcParams()) == -6.0


def test_smc_reads_errors_from_state():
    # ego 2 m closer than reference and 1 m/s faster than its predecessor
    lead = VehicleState(200.0, 20.0, -1.0)
    inp = snap(20.0, 21.0, 28.0, ref_gap=30.0, a_pred=-0.5, lead=lead)
    raw = smc_law(-0.5, -1.0, 2.0, 1.0, 21.0, 20.0, 0.7, 0.8, 1.0)
    assert smc_desired_accel(inp) == pytest.approx(max(-5.5, min(0.0, raw)), abs=1e-12)


# --- shared properties -------------------------------------------------------------

speeds = st.floats(0, 40, allow_nan=False)


@given(v_p=speeds, v_e=speeds, gap=st.floats(0, 200), dec=st.floats(3.7, 7.3),
       a_p=st.floats(-7, 0), a_l=st.floats(-7, 0), ref=st.floats(0, 100), v_l=speeds)
@settings(max_examples=300, deadline=None)
def test_outputs_in_braking_band(v_p, v_e, gap, dec, a_p, a_l, ref, v_l):
    sd = sd_desired_accel(snap(v_p, v_e, gap, dec))
    smc = smc_desired_accel(snap(v_p, v_e, gap, dec, a_pred=a_p, ref_gap=ref,
                                 lead=VehicleState(0, v_l, a_l)))
    hv = hv_accel(0.85, v_p, v_e, dec, 0)
    for a in (sd, smc, hv, db_desired_accel(spec(dec))):
        assert -dec <= a <= 0.0
    # statelessness
    assert sd_desired_accel(snap(v_p, v_e, gap, dec)) == sd
