"""Charging baselines: CC-CV, voltage-triggered bypass, discharge test."""

import dataclasses

import numpy as np
import pytest

from packcharge import cell as cm
from packcharge import pack as pk
from packcharge import protocols
from packcharge import sim
from packcharge.errors import ProtocolError

from conftest import rested_flat


CFG = sim.IntegratorConfig(substeps=400, sample_every=100)


def state_at(testbed, z0, T0=298.15):
    return pk.unflatten(rested_flat(testbed.plant, z0=z0, T0=T0),
                        testbed.plant)


@pytest.fixture(scope="module")
def cccv_result(testbed):
    return protocols.charge_cccv(testbed.initial_state(), testbed.cccv,
                                 testbed.integrator, testbed.plant)


@pytest.fixture(scope="module")
def vb_result(testbed):
    return protocols.charge_voltage_based(
        testbed.initial_state(), testbed.voltage_based, testbed.integrator,
        testbed.plant)


# --------------------------------------------------------------------------
# CC-CV
# --------------------------------------------------------------------------

def test_cccv_reaches_cutoff(cccv_result):
    assert cccv_result.trace.stop_reason == "cv_cutoff"


def test_cccv_cc_phase_holds_configured_current(testbed, cccv_result):
    I = cccv_result.trace.I_branch
    assert I[1] == pytest.approx(-testbed.cccv.I_cc)
    # the magnitude never exceeds the CC setpoint and ends below the cutoff
    assert np.all(I <= 1e-12)
    assert np.all(-I <= testbed.cccv.I_cc + 1e-9)
    # the run stops once the next CV current would fall below the cutoff;
    # the last applied current sits just above it
    assert -I[-1] <= 2.0 * testbed.cccv.I_cutoff


def test_cccv_cv_phase_respects_total_voltage(testbed, cccv_result):
    tr = cccv_result.trace
    total = tr.V.sum(axis=1)
    # after the CC phase the bisection holds the series voltage at the limit
    cv = total >= testbed.cccv.V_total_limit - 5e-3
    assert cv.any()
    assert np.all(total <= testbed.cccv.V_total_limit + 5e-3)


def test_cccv_records_overcharge_events(cccv_result):
    events = [e for e in cccv_result.trace.events
              if e["type"] == "overcharge"]
    assert len(events) >= 1
    assert np.max(cccv_result.trace.z) > 1.0


def test_cccv_rejects_pack_at_voltage_limit(testbed):
    st = state_at(testbed, 0.9)
    cfg = dataclasses.replace(testbed.cccv, V_total_limit=20.0)
    with pytest.raises(ProtocolError):
        protocols.charge_cccv(st, cfg, CFG, testbed.plant)


# --------------------------------------------------------------------------
# voltage-triggered bypass
# --------------------------------------------------------------------------

def test_voltage_based_bypasses_every_cell(testbed, vb_result):
    assert vb_result.trace.stop_reason == "all_bypassed"
    cells = {e["cell"] for e in vb_result.trace.events
             if e["type"] == "bypass"}
    assert cells == set(range(6))


def test_voltage_based_bypass_is_latched(vb_result):
    """Once a cell's duty goes to zero it never conducts again."""
    I_app = vb_result.trace.I_app
    for i in range(6):
        on = np.abs(I_app[:, i]) > 1e-12
        last_on = np.max(np.nonzero(on)[0])
        assert np.all(on[:last_on + 1] | ~on[:last_on + 1])  # contiguous head
        assert not on[last_on + 1:].any()


def test_voltage_based_respects_cell_ceiling(testbed, vb_result):
    # the ceiling is checked at sample boundaries; allow the one-sample
    # overshoot of the detection grid
    assert vb_result.trace.V.max() <= testbed.voltage_based.V_cell_max + 2e-3


def test_voltage_based_no_overcharge(vb_result):
    assert np.max(vb_result.trace.z) <= 1.0


def test_voltage_based_spread_below_cccv(cccv_result, vb_result):
    spread = lambda tr: tr.z[-1].max() - tr.z[-1].min()
    assert spread(vb_result.trace) < spread(cccv_result.trace)


# --------------------------------------------------------------------------
# discharge capacity test
# --------------------------------------------------------------------------

def test_discharge_extracts_expected_charge(testbed):
    st = state_at(testbed, 0.9)
    ah, res = protocols.discharge_capacity_test(st, testbed.plant,
                                               testbed.discharge,
                                               testbed.integrator)
    assert res.trace.stop_reason == "cutoff_voltage"
    # roughly 0.9 of the smallest capacity must come out before any cell
    # hits the cutoff, minus polarization losses
    assert 0.5 * 7.5 < ah < 0.95 * 8.83
    # discharge current is positive at the configured magnitude
    assert res.trace.I_branch[1] == pytest.approx(testbed.discharge.I_1C)


def test_discharge_of_empty_pack_yields_nothing(testbed):
    st = state_at(testbed, 0.01)
    ah, _ = protocols.discharge_capacity_test(st, testbed.plant,
                                              testbed.discharge,
                                              testbed.integrator)
    assert ah < 0.2


def test_identical_cells_stay_balanced():
    """Symmetry: equal cells on a symmetric network keep zero spread."""
    from packcharge import scenario as sc
    scn = sc.testbed_scenario(
        cells={"capacity_ah": 7.5, "film_resistance_mohm": 2.0,
               "soc_initial": 0.3},
        thermal={"contact_pairs": [], "sink_r_kpw": 2.5})
    st = scn.initial_state()
    res = protocols.charge_voltage_based(st, scn.voltage_based, CFG,
                                         scn.plant)
    assert res.trace.z[-1].max() - res.trace.z[-1].min() < 1e-9
    res2 = protocols.charge_cccv(st, scn.cccv, CFG, scn.plant)
    assert res2.trace.z[-1].max() - res2.trace.z[-1].min() < 1e-9
