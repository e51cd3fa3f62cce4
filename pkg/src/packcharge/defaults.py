"""Shipped default parameter set and the 6-cell testbed.

The electrochemical constants below are a documented SYNTHETIC set with
orders of magnitude typical of an NMC/graphite pouch cell (~7.5 Ah).  They
are NOT an identified parameterization of any commercial cell; every value
is overridable from the scenario file.  See docs/parameters.md.
"""

from __future__ import annotations

import math

import numpy as np

from .cell import (AgeingParams, ArrheniusParam, CellParams, ElectrodeParams,
                   SeparatorParams)
from .constants import GAS_CONSTANT
from .pack import PackParams, ThermalNetwork

T_REF = 298.15  # K, reference for the value-at-298 convention used below


def arrhenius_from_ref(value_at_ref: float, Ea: float) -> ArrheniusParam:
    """Build an Arrhenius parameter from its value at T_REF."""
    return ArrheniusParam(psi0=value_at_ref * math.exp(Ea / (GAS_CONSTANT * T_REF)),
                          Ea=Ea)


def default_cell(M: int = 3) -> CellParams:
    """Synthetic ~7.5 Ah NMC/graphite cell."""
    return CellParams(
        pos=ElectrodeParams(
            Rp=1.0e-5,
            cs_max=48000.0,
            theta_0pct=0.92,
            theta_100pct=0.26,
            Ds=arrhenius_from_ref(1.0e-13, 3.5e4),
            k_rate=arrhenius_from_ref(2.0e-11, 3.0e4),
            L=70e-6,
            eps=0.30,
            brug=1.5,
        ),
        neg=ElectrodeParams(
            Rp=1.0e-5,
            cs_max=30000.0,
            theta_0pct=0.03,
            theta_100pct=0.78,
            Ds=arrhenius_from_ref(8.0e-14, 3.5e4),
            k_rate=arrhenius_from_ref(2.0e-11, 3.0e4),
            L=75e-6,
            eps=0.30,
            brug=1.5,
        ),
        # separator thickness / De sized so the fastest electrolyte mode stays
        # inside the RK4 stability region at the shipped substep counts
        sep=SeparatorParams(L=30e-6, eps=0.5, brug=1.5),
        A=0.3155,
        t_plus=0.4,
        De=arrhenius_from_ref(1.5e-10, 1.7e4),
        M=M,
        ageing=AgeingParams(
            Mw=7.3e-2,
            rho_n=2100.0,
            nu=1.0e-5,
            i0_base=0.3,
            w=1.0,
            U_sei=0.4,
            I_1C=7.5,
        ),
        ce_init=1000.0,
        Ea_kappa=0.0,
    )


# Table-style testbed initial conditions for the shipped 6-cell scenario
TESTBED_C0_AH = [6.47, 7.62, 8.83, 8.68, 8.46, 7.22]
TESTBED_RSEI0_OHM = [2.09e-3, 2.36e-3, 2.22e-3, 2.36e-3, 2.12e-3, 1.76e-3]
TESTBED_Z0 = [0.39, 0.19, 0.21, 0.20, 0.34, 0.37]


def testbed_network() -> ThermalNetwork:
    """Two 3-cell stacks wrapped by the coolant; inner cells see a weaker sink.

    Conduction exists only between adjacent cells inside a stack.  Resistance
    values are synthetic defaults chosen to reproduce the qualitative
    behaviour (inner cells 2 and 5 run hottest under a uniform charge).
    """
    N = 6
    R = np.full((N, N), np.inf)
    for a, b in [(0, 1), (1, 2), (3, 4), (4, 5)]:
        R[a, b] = R[b, a] = 1.5
    R_sink = np.array([2.5, 6.0, 2.5, 2.5, 6.0, 2.5])
    return ThermalNetwork(
        R_cell=R,
        R_sink=R_sink,
        C_th=np.full(N, 120.0),
        C_th_sink=800.0,
        xi_power=5.0,
        T_norm=298.15,
    )


def testbed_pack(M: int = 10) -> PackParams:
    cells = [default_cell(M) for _ in range(6)]
    return PackParams.from_cells(cells, testbed_network(), T_env=298.15)
