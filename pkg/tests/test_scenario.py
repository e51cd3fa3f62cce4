"""Scenario files: schema validation, defaults, round-tripping."""

import numpy as np
import pytest
import yaml

import packcharge.scenario as sc
from packcharge import defaults
from packcharge.errors import ConfigError


MINIMAL = {
    "pack": {"n_cells": 2},
    "cells": {"capacity_ah": 7.5, "film_resistance_mohm": 2.0,
              "soc_initial": [0.2, 0.4]},
}


def write_doc(tmp_path, doc, name="scn.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_minimal_document_fills_defaults(tmp_path):
    scn = sc.load_scenario(write_doc(tmp_path, MINIMAL))
    assert scn.N == 2
    assert scn.plant.M == 10
    assert scn.control.M == 3
    np.testing.assert_allclose(scn.capacity0_as, 7.5 * 3600.0)
    np.testing.assert_allclose(scn.film_resistance0_ohm, 2e-3)
    np.testing.assert_allclose(scn.soc0, [0.2, 0.4])
    assert scn.T0 == 298.15
    assert scn.solver.H == 3
    assert scn.weights.alpha1 == 1e4
    assert scn.limits.P_max == 23.625
    assert scn.cccv.V_total_limit == pytest.approx(8.4)   # 4.2 V per cell


def test_scalar_values_broadcast_across_cells(tmp_path):
    doc = {"pack": {"n_cells": 4},
           "cells": {"capacity_ah": 6.0, "film_resistance_mohm": 2.0,
                     "soc_initial": 0.3}}
    scn = sc.load_scenario(write_doc(tmp_path, doc))
    assert scn.capacity0_as.shape == (4,)
    np.testing.assert_allclose(scn.soc0, 0.3)


def test_unknown_key_rejected_with_dotted_path(tmp_path):
    doc = dict(MINIMAL)
    doc["cells"] = dict(MINIMAL["cells"], capacity=7.5)
    with pytest.raises(ConfigError, match=r"cells\.capacity"):
        sc.load_scenario(write_doc(tmp_path, doc))


def test_unknown_toplevel_section_rejected(tmp_path):
    doc = dict(MINIMAL, extras={"x": 1})
    with pytest.raises(ConfigError, match="extras"):
        sc.load_scenario(write_doc(tmp_path, doc))


def test_missing_required_key_reported(tmp_path):
    doc = {"pack": {"n_cells": 2},
           "cells": {"capacity_ah": 7.5, "soc_initial": 0.5}}
    with pytest.raises(ConfigError, match=r"cells\.film_resistance_mohm"):
        sc.load_scenario(write_doc(tmp_path, doc))


def test_error_message_names_the_file(tmp_path):
    path = write_doc(tmp_path, {"pack": {"n_cells": 2}})
    with pytest.raises(ConfigError, match="scn.yaml"):
        sc.load_scenario(path)


def test_missing_file_is_config_error():
    with pytest.raises(ConfigError, match="not found"):
        sc.load_scenario("/nonexistent/scenario.yaml")


def test_wrong_vector_length_rejected(tmp_path):
    doc = {"pack": {"n_cells": 3},
           "cells": {"capacity_ah": [7.5, 7.5], "film_resistance_mohm": 2.0,
                     "soc_initial": 0.5}}
    with pytest.raises(ConfigError, match="expected 3 values"):
        sc.load_scenario(write_doc(tmp_path, doc))


@pytest.mark.parametrize("key,value,msg", [
    ("capacity_ah", -1.0, "positive"),
    ("soc_initial", 1.2, r"\[0, 1\]"),
    ("film_resistance_mohm", -0.1, "non-negative"),
])
def test_cell_value_ranges(tmp_path, key, value, msg):
    doc = {"pack": {"n_cells": 2}, "cells": dict(MINIMAL["cells"])}
    doc["cells"][key] = value
    with pytest.raises(ConfigError, match=msg):
        sc.load_scenario(write_doc(tmp_path, doc))


def test_type_errors_include_path(tmp_path):
    doc = dict(MINIMAL, integrator={"substeps": "fast"})
    with pytest.raises(ConfigError, match=r"integrator\.substeps"):
        sc.load_scenario(write_doc(tmp_path, doc))


def test_bad_contact_pair_rejected(tmp_path):
    doc = dict(MINIMAL, thermal={"contact_pairs": [[0, 5]]})
    with pytest.raises(ConfigError, match="bad pair"):
        sc.load_scenario(write_doc(tmp_path, doc))


def test_roundtrip_value_identical(tmp_path):
    doc = dict(MINIMAL, name="roundtrip", seed=7,
               nmpc={"horizon": 4, "weights": {"balancing": 2e5}})
    first = sc.load_scenario(write_doc(tmp_path, doc))
    out = tmp_path / "saved.yaml"
    sc.write_scenario(first, out)
    second = sc.load_scenario(str(out))
    assert second.raw == first.raw
    assert second.solver.H == 4
    assert second.weights.alpha7 == 2e5
    np.testing.assert_array_equal(second.soc0, first.soc0)


def test_testbed_matches_documented_cells():
    scn = sc.testbed_scenario()
    assert scn.N == 6
    np.testing.assert_allclose(scn.capacity0_as / 3600.0,
                               defaults.TESTBED_C0_AH)
    np.testing.assert_allclose(scn.film_resistance0_ohm,
                               defaults.TESTBED_RSEI0_OHM)
    np.testing.assert_allclose(scn.soc0, defaults.TESTBED_Z0)
    # thermal layout: two stacks of three cells, middle cells coupled worse
    # to the sink
    R = scn.plant.network.R_cell
    assert np.isfinite(R[0, 1]) and np.isfinite(R[4, 5])
    assert not np.isfinite(R[2, 3])
    np.testing.assert_allclose(scn.plant.network.R_sink,
                               [2.5, 6.0, 2.5, 2.5, 6.0, 2.5])


def test_testbed_initial_state_is_valid():
    scn = sc.testbed_scenario()
    st = scn.initial_state()
    assert np.all(np.asarray(st.cells.C) > 0)
    assert np.all(np.asarray(st.cells.T) == 298.15)
    assert st.T_sink == 298.15


def test_nmpc_config_wiring(tmp_path):
    doc = dict(MINIMAL)
    doc["nmpc"] = {"soc_target": 0.95, "soc_done": 0.9,
                   "limits": {"temperature_max_k": 310.0},
                   "solver": {"maxiter": 3, "maxfun": 7}}
    scn = sc.load_scenario(write_doc(tmp_path, doc))
    assert scn.weights.z_bar == 0.95
    assert scn.soc_done == 0.9
    assert scn.limits.T_max == 310.0
    assert scn.solver.maxiter == 3
    assert scn.solver.maxfun == 7
