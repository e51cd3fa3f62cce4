"""Scenario files: one YAML document describing a pack study end to end.

A scenario bundles the pack build (cell count, electrolyte discretization,
thermal couplings), per-cell initial conditions, integrator settings and the
configuration of every charging protocol, so that command-line runs are
reproducible from a single artifact.  Keys carry explicit units in their
names (``capacity_ah``, ``step_s``); unknown keys are rejected with the
full dotted path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numbers
import os

import numpy as np
import yaml

from . import cell as cm
from . import defaults
from . import nmpc
from . import pack as pk
from . import protocols
from . import sim
from .errors import ConfigError

__all__ = ["Scenario", "load_scenario", "write_scenario", "testbed_scenario"]


# --------------------------------------------------------------------------
# schema
# --------------------------------------------------------------------------
# Leaves are ("scalar" | "vector" | "int" | "bool" | "str", default).
# ``vector`` accepts a scalar and broadcasts it over the cells.
_REQUIRED = object()

_SCHEMA = {
    "name": ("str", "unnamed"),
    "seed": ("int", 0),
    "pack": {
        "n_cells": ("int", _REQUIRED),
        "plant_electrolyte_volumes": ("int", 10),
        "control_electrolyte_volumes": ("int", 3),
    },
    "cells": {
        "capacity_ah": ("vector", _REQUIRED),
        "film_resistance_mohm": ("vector", _REQUIRED),
        "soc_initial": ("vector", _REQUIRED),
        "temperature_k": ("scalar", 298.15),
    },
    "thermal": {
        "contact_pairs": ("pairs", None),
        "contact_r_kpw": ("scalar", 1.5),
        "sink_r_kpw": ("vector", None),
        "cell_heat_capacity_jpk": ("scalar", 120.0),
        "sink_heat_capacity_jpk": ("scalar", 800.0),
        "coolant_power_w": ("scalar", 5.0),
        "coolant_threshold_k": ("scalar", 298.15),
    },
    "integrator": {
        "substeps": ("int", 400),
        "sample_every": ("int", 100),
    },
    "cccv": {
        "current_a": ("scalar", 7.5),
        "pack_voltage_limit_v": ("scalar", None),
        "cutoff_current_a": ("scalar", 0.375),
        "step_s": ("scalar", 10.0),
        "max_hours": ("scalar", 10.0),
    },
    "voltage_based": {
        "current_a": ("scalar", 7.5),
        "cell_voltage_max_v": ("scalar", 4.2),
        "step_s": ("scalar", 10.0),
        "max_hours": ("scalar", 10.0),
    },
    "discharge": {
        "current_a": ("scalar", 7.5),
        "cutoff_voltage_v": ("scalar", 2.7),
        "step_s": ("scalar", 10.0),
        "max_hours": ("scalar", 10.0),
    },
    "nmpc": {
        "horizon": ("int", 3),
        "step_s": ("scalar", 10.0),
        "substeps": ("int", 25),
        "sigmoid_a": ("scalar", 5.0),
        "soc_target": ("scalar", 1.0),
        "soc_done": ("scalar", 0.99),
        "max_hours": ("scalar", 6.0),
        "current_max_a": ("scalar", 7.5),
        "weights": {
            "soc_tracking": ("scalar", 1.0e4),
            "temperature": ("scalar", 25.0),
            "duty": ("scalar", 0.0),
            "current": ("scalar", 1.0),
            "duty_rate": ("scalar", 1.0e-3),
            "current_rate": ("scalar", 1.0e-3),
            "balancing": ("scalar", 1.0e5),
            "slack_voltage": ("scalar", 1.0e15),
            "slack_temperature": ("scalar", 1.0e15),
            "slack_power": ("scalar", 1.0e15),
        },
        "limits": {
            "cell_voltage_max_v": ("scalar", 4.2),
            "temperature_max_k": ("scalar", 313.15),
            "charge_power_max_w": ("scalar", 23.625),
        },
        "solver": {
            "maxiter": ("int", 8),
            "maxfun": ("int", 15),
            "max_linesearch": ("int", 60),
            "ftol": ("scalar", 1.0e-7),
            "gtol": ("scalar", 1.0e-6),
            "fd_step_rel": ("scalar", 1.0e-4),
        },
    },
    "output": {
        "directory": ("str", "runs"),
    },
}


def _check_leaf(path, spec, value):
    kind, _ = spec
    if value is None:
        return None
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, numbers.Integral):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if kind == "scalar":
        if isinstance(value, bool) or not isinstance(value, numbers.Real):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if kind == "vector":
        if isinstance(value, numbers.Real) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, (list, tuple)) and all(
                isinstance(v, numbers.Real) and not isinstance(v, bool)
                for v in value):
            return [float(v) for v in value]
        raise ConfigError(f"{path}: expected a number or list of numbers, "
                          f"got {value!r}")
    if kind == "pairs":
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list of [i, j] pairs")
        out = []
        for item in value:
            if (not isinstance(item, (list, tuple)) or len(item) != 2
                    or any(isinstance(v, bool)
                           or not isinstance(v, numbers.Integral)
                           for v in item)):
                raise ConfigError(f"{path}: expected [i, j] integer pairs, "
                                  f"got {item!r}")
            out.append([int(item[0]), int(item[1])])
        return out
    raise AssertionError(kind)


def _apply_schema(path, schema, data):
    """Validate ``data`` against ``schema``; fill defaults; reject unknowns."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'document'}: expected a mapping")
    unknown = set(data) - set(schema)
    if unknown:
        key = sorted(unknown)[0]
        where = f"{path}.{key}" if path else key
        raise ConfigError(f"unknown key '{where}'")
    out = {}
    for key, spec in schema.items():
        sub = f"{path}.{key}" if path else key
        if isinstance(spec, dict):
            out[key] = _apply_schema(sub, spec, data.get(key))
        elif key in data:
            out[key] = _check_leaf(sub, spec, data[key])
        elif spec[1] is _REQUIRED:
            raise ConfigError(f"missing required key '{sub}'")
        else:
            out[key] = spec[1]
    return out


def _vector(path, value, n):
    if value is None:
        return None
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.full(n, float(arr[0]))
    if arr.size != n:
        raise ConfigError(f"{path}: expected {n} values, got {arr.size}")
    return arr


# --------------------------------------------------------------------------
# scenario object
# --------------------------------------------------------------------------

@dataclass
class Scenario:
    """A fully validated study description plus built parameter objects."""

    name: str
    seed: int
    raw: dict                       # normalized document (round-trip source)
    plant: pk.PackParams
    control: pk.PackParams
    capacity0_as: np.ndarray        # (N,) initial capacity, A·s
    film_resistance0_ohm: np.ndarray
    soc0: np.ndarray
    T0: float
    integrator: sim.IntegratorConfig
    cccv: protocols.CccvConfig
    voltage_based: protocols.VoltageBasedConfig
    discharge: protocols.DischargeConfig
    weights: nmpc.CostWeights
    limits: nmpc.ConstraintLimits
    solver: nmpc.SolverConfig
    soc_done: float
    nmpc_max_hours: float
    output_dir: str

    @property
    def N(self):
        return self.plant.N

    def initial_state(self) -> pk.PackState:
        cells = cm.rested_state(self.plant.cells, self.soc0,
                                self.capacity0_as,
                                self.film_resistance0_ohm, self.T0)
        return pk.PackState(cells=cells, T_sink=self.T0)


def _build_network(doc, n):
    th = doc["thermal"]
    pairs = th["contact_pairs"]
    if pairs is None:
        if n == 6:
            pairs = [[0, 1], [1, 2], [3, 4], [4, 5]]
        else:
            pairs = [[i, i + 1] for i in range(n - 1)]
    R = np.full((n, n), np.inf)
    for a, b in pairs:
        if not (0 <= a < n and 0 <= b < n) or a == b:
            raise ConfigError(f"thermal.contact_pairs: bad pair [{a}, {b}]")
        R[a, b] = R[b, a] = th["contact_r_kpw"]
    sink = _vector("thermal.sink_r_kpw", th["sink_r_kpw"], n)
    if sink is None:
        if n == 6:
            sink = np.array([2.5, 6.0, 2.5, 2.5, 6.0, 2.5])
        else:
            sink = np.full(n, 2.5)
    return pk.ThermalNetwork(
        R_cell=R, R_sink=sink,
        C_th=np.full(n, th["cell_heat_capacity_jpk"]),
        C_th_sink=th["sink_heat_capacity_jpk"],
        xi_power=th["coolant_power_w"],
        T_norm=th["coolant_threshold_k"])


def _from_document(doc: dict) -> Scenario:
    n = doc["pack"]["n_cells"]
    if n < 1:
        raise ConfigError("pack.n_cells: must be positive")
    cap = _vector("cells.capacity_ah", doc["cells"]["capacity_ah"], n)
    rsei = _vector("cells.film_resistance_mohm",
                   doc["cells"]["film_resistance_mohm"], n)
    z0 = _vector("cells.soc_initial", doc["cells"]["soc_initial"], n)
    if np.any(cap <= 0):
        raise ConfigError("cells.capacity_ah: must be positive")
    if np.any(rsei < 0):
        raise ConfigError("cells.film_resistance_mohm: must be non-negative")
    if np.any(z0 < 0) or np.any(z0 > 1):
        raise ConfigError("cells.soc_initial: values must lie in [0, 1]")

    network = _build_network(doc, n)
    Mp = doc["pack"]["plant_electrolyte_volumes"]
    Mc = doc["pack"]["control_electrolyte_volumes"]
    plant = pk.PackParams.from_cells([defaults.default_cell(Mp)] * n,
                                     network, T_env=298.15)
    control = pk.PackParams.from_cells([defaults.default_cell(Mc)] * n,
                                       network, T_env=298.15)

    d = doc["cccv"]
    vlim = d["pack_voltage_limit_v"]
    cccv = protocols.CccvConfig(
        I_cc=d["current_a"],
        V_total_limit=4.2 * n if vlim is None else vlim,
        I_cutoff=d["cutoff_current_a"], Ts=d["step_s"],
        max_hours=d["max_hours"])
    d = doc["voltage_based"]
    vb = protocols.VoltageBasedConfig(
        I_cc=d["current_a"], V_cell_max=d["cell_voltage_max_v"],
        Ts=d["step_s"], max_hours=d["max_hours"])
    d = doc["discharge"]
    dis = protocols.DischargeConfig(
        I_1C=d["current_a"], V_cutoff=d["cutoff_voltage_v"],
        Ts=d["step_s"], max_hours=d["max_hours"])

    d = doc["nmpc"]
    w = d["weights"]
    weights = nmpc.CostWeights(
        alpha1=w["soc_tracking"], alpha2=w["temperature"],
        alpha3=w["duty"], alpha4=w["current"],
        alpha5=w["duty_rate"], alpha6=w["current_rate"],
        alpha7=w["balancing"],
        alpha_s1=w["slack_voltage"], alpha_s2=w["slack_temperature"],
        alpha_s3=w["slack_power"],
        z_bar=d["soc_target"], I_max=d["current_max_a"])
    lims = d["limits"]
    limits = nmpc.ConstraintLimits(
        V_max=lims["cell_voltage_max_v"], T_max=lims["temperature_max_k"],
        P_max=lims["charge_power_max_w"])
    s = d["solver"]
    scfg = nmpc.SolverConfig(
        H=d["horizon"], Ts=d["step_s"], substeps=d["substeps"],
        sigmoid_a=d["sigmoid_a"], maxiter=s["maxiter"], maxfun=s["maxfun"],
        maxls=s["max_linesearch"], ftol=s["ftol"], gtol=s["gtol"],
        fd_step=s["fd_step_rel"])

    integ = sim.IntegratorConfig(substeps=doc["integrator"]["substeps"],
                                 sample_every=doc["integrator"]["sample_every"])
    return Scenario(
        name=doc["name"], seed=doc["seed"], raw=doc,
        plant=plant, control=control,
        capacity0_as=cap * 3600.0, film_resistance0_ohm=rsei * 1e-3,
        soc0=z0, T0=doc["cells"]["temperature_k"],
        integrator=integ, cccv=cccv, voltage_based=vb, discharge=dis,
        weights=weights, limits=limits, solver=scfg,
        soc_done=d["soc_done"], nmpc_max_hours=d["max_hours"],
        output_dir=doc["output"]["directory"])


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file."""
    if not os.path.exists(path):
        raise ConfigError(f"scenario file not found: {path}")
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    try:
        doc = _apply_schema("", _SCHEMA, data)
        return _from_document(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def write_scenario(scenario: Scenario, path) -> None:
    """Serialize the normalized document; reloading gives identical values."""
    with open(path, "w") as f:
        yaml.safe_dump(scenario.raw, f, sort_keys=False)


def testbed_scenario(**overrides) -> Scenario:
    """Six-cell desk-scale testbed with heterogeneous initial conditions."""
    doc = {
        "name": "testbed_table1",
        "pack": {"n_cells": 6},
        "cells": {
            "capacity_ah": list(defaults.TESTBED_C0_AH),
            "film_resistance_mohm": [1e3 * r for r in
                                     defaults.TESTBED_RSEI0_OHM],
            "soc_initial": list(defaults.TESTBED_Z0),
        },
    }
    doc.update(overrides)
    return _from_document(_apply_schema("", _SCHEMA, doc))
