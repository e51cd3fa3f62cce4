"""Compiled hot path for pack integration.

The numpy implementations in :mod:`packcharge.cell` / :mod:`packcharge.pack`
are the reference semantics; the kernels here re-implement the identical
math with explicit loops under numba for the integrator's inner loops.
Equivalence is asserted by tests/test_fastpath.py, and every result-bearing
quantity (traces, voltages, costs) is still produced through the reference
code at sample points.

State layout (flat vector, see pack.flatten):
``[theta_p(N), q_p(N), q_n(N), ce(N*3M), C(N), R_sei(N), T(N), T_sink]``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .constants import FARADAY as _F, GAS_CONSTANT as _R

# rows of the per-cell parameter matrix
(RP_P, CSMAX_P, TH0_P, TH100_P, DSPSI_P, DSEA_P, KPSI_P, KEA_P, L_P, EPS_P,
 BRUG_P, RP_N, CSMAX_N, TH0_N, TH100_N, DSPSI_N, DSEA_N, KPSI_N, KEA_N, L_N,
 EPS_N, BRUG_N, L_S, EPS_S, BRUG_S, AREA, TPLUS, DEPSI, DEEA, MW, RHON, NU,
 I0BASE, WEXP, USEI, I1C, EAKAPPA) = range(37)

_CLIP = 1e-9


def build_param_pack(pack_params):
    """Flatten a PackParams record into numba-friendly arrays (cached)."""
    cached = getattr(pack_params, "_fastpack", None)
    if cached is not None:
        return cached
    c = pack_params.cells
    N = pack_params.N
    P = np.empty((37, N))

    def row(idx, val):
        P[idx, :] = np.broadcast_to(np.asarray(val, dtype=float), (N,))

    row(RP_P, c.pos.Rp); row(CSMAX_P, c.pos.cs_max)
    row(TH0_P, c.pos.theta_0pct); row(TH100_P, c.pos.theta_100pct)
    row(DSPSI_P, c.pos.Ds.psi0); row(DSEA_P, c.pos.Ds.Ea)
    row(KPSI_P, c.pos.k_rate.psi0); row(KEA_P, c.pos.k_rate.Ea)
    row(L_P, c.pos.L); row(EPS_P, c.pos.eps); row(BRUG_P, c.pos.brug)
    row(RP_N, c.neg.Rp); row(CSMAX_N, c.neg.cs_max)
    row(TH0_N, c.neg.theta_0pct); row(TH100_N, c.neg.theta_100pct)
    row(DSPSI_N, c.neg.Ds.psi0); row(DSEA_N, c.neg.Ds.Ea)
    row(KPSI_N, c.neg.k_rate.psi0); row(KEA_N, c.neg.k_rate.Ea)
    row(L_N, c.neg.L); row(EPS_N, c.neg.eps); row(BRUG_N, c.neg.brug)
    row(L_S, c.sep.L); row(EPS_S, c.sep.eps); row(BRUG_S, c.sep.brug)
    row(AREA, c.A); row(TPLUS, c.t_plus)
    row(DEPSI, c.De.psi0); row(DEEA, c.De.Ea)
    row(MW, c.ageing.Mw); row(RHON, c.ageing.rho_n); row(NU, c.ageing.nu)
    row(I0BASE, c.ageing.i0_base); row(WEXP, c.ageing.w)
    row(USEI, c.ageing.U_sei); row(I1C, c.ageing.I_1C)
    row(EAKAPPA, c.Ea_kappa)

    net = pack_params.network
    pack = (P,
            np.asarray(c.ocp_pos_coeffs, dtype=float),
            np.asarray(c.ocp_neg_num, dtype=float),
            np.asarray(c.ocp_neg_den, dtype=float),
            np.asarray(c.kappa_coeffs, dtype=float),
            np.ascontiguousarray(net.G_cell),
            np.ascontiguousarray(net.G_sink),
            np.ascontiguousarray(net.C_th),
            float(net.C_th_sink), float(net.xi_power), float(net.T_norm),
            int(pack_params.M))
    object.__setattr__(pack_params, "_fastpack", pack)
    return pack


@njit(cache=True)
def _horner(coeffs, x):
    v = 0.0
    for c in coeffs:
        v = v * x + c
    return v


@njit(cache=True)
def _rhs(y, I, out, Q_out, P, ocp_p, neg_num, neg_den, kap,
         G, g_sink, C_th, C_sink, xi_p, T_norm, M):
    N = P.shape[1]
    M3 = 3 * M
    o_qp = N
    o_qn = 2 * N
    o_ce = 3 * N
    o_C = 3 * N + N * M3
    o_R = o_C + N
    o_T = o_R + N
    T_sink = y[o_T + N]

    for i in range(N):
        th_p = y[i]
        q_p = y[o_qp + i]
        q_n = y[o_qn + i]
        C = y[o_C + i]
        Rsei = y[o_R + i]
        T = y[o_T + i]
        Ii = I[i]
        ce0 = o_ce + i * M3

        dth_p = P[TH100_P, i] - P[TH0_P, i]
        dth_n = P[TH100_N, i] - P[TH0_N, i]
        th_n = P[TH0_N, i] + (th_p - P[TH0_P, i]) / dth_p * dth_n

        Ds_p = P[DSPSI_P, i] * np.exp(-P[DSEA_P, i] / (_R * T))
        Ds_n = P[DSPSI_N, i] * np.exp(-P[DSEA_N, i] / (_R * T))

        # solid dynamics
        out[i] = -dth_p / C * Ii
        out[o_qp + i] = (-30.0 * Ds_p / P[RP_P, i]**2 * q_p
                         - 45.0 * dth_p * P[CSMAX_P, i]
                         / (6.0 * P[RP_P, i] * C) * Ii)
        out[o_qn + i] = (-30.0 * Ds_n / P[RP_N, i]**2 * q_n
                         - 45.0 * dth_n * P[CSMAX_N, i]
                         / (6.0 * P[RP_N, i] * C) * Ii)

        # surface stoichiometries; clipped copies feed the kinetic terms,
        # raw values feed the OCPs (non-strict reference semantics)
        ths_p = (th_p + 8.0 * P[RP_P, i] * q_p / (35.0 * P[CSMAX_P, i])
                 - P[RP_P, i]**2 * dth_p / (105.0 * Ds_p * C) * Ii)
        ths_n = (th_n + 8.0 * P[RP_N, i] * q_n / (35.0 * P[CSMAX_N, i])
                 - P[RP_N, i]**2 * dth_n / (105.0 * Ds_n * C) * Ii)
        thc_p = min(max(ths_p, _CLIP), 1.0 - _CLIP)
        thc_n = min(max(ths_n, _CLIP), 1.0 - _CLIP)

        # electrolyte finite volumes
        dxp = P[L_P, i] / M
        dxs = P[L_S, i] / M
        dxn = P[L_N, i] / M
        De = P[DEPSI, i] * np.exp(-P[DEEA, i] / (_R * T))
        Dp = De * P[EPS_P, i]**P[BRUG_P, i]
        Dsep = De * P[EPS_S, i]**P[BRUG_S, i]
        Dn = De * P[EPS_N, i]**P[BRUG_N, i]
        D_ps = Dp * Dsep * (dxp + dxs) / (Dp * dxs + Dsep * dxp)
        D_sn = Dsep * Dn * (dxs + dxn) / (Dsep * dxn + Dn * dxs)

        src_p = -(1.0 - P[TPLUS, i]) / (_F * P[AREA, i] * P[L_P, i]) * Ii
        src_n = (1.0 - P[TPLUS, i]) / (_F * P[AREA, i] * P[L_N, i]) * Ii

        cbar_p = 0.0
        cbar_n = 0.0
        fl = 0.0  # flux at the left face of the current volume
        for v in range(M3):
            c_here = y[ce0 + v]
            if v < M:
                dx = dxp
                eps = P[EPS_P, i]
                src = src_p
                cbar_p += c_here
            elif v < 2 * M:
                dx = dxs
                eps = P[EPS_S, i]
                src = 0.0
            else:
                dx = dxn
                eps = P[EPS_N, i]
                src = src_n
                cbar_n += c_here
            if v == M3 - 1:
                fr = 0.0
            else:
                c_next = y[ce0 + v + 1]
                if v == M - 1:
                    fr = D_ps * (c_next - c_here) / (0.5 * (dxp + dxs))
                elif v == 2 * M - 1:
                    fr = D_sn * (c_next - c_here) / (0.5 * (dxs + dxn))
                elif v < M:
                    fr = Dp * (c_next - c_here) / dxp
                elif v < 2 * M:
                    fr = Dsep * (c_next - c_here) / dxs
                else:
                    fr = Dn * (c_next - c_here) / dxn
            out[ce0 + v] = ((fr - fl) / dx + src) / eps
            fl = fr
        cbar_p /= M
        cbar_n /= M
        if cbar_p < _CLIP:
            cbar_p = _CLIP
        if cbar_n < _CLIP:
            cbar_n = _CLIP

        # overpotentials
        k_p = P[KPSI_P, i] * np.exp(-P[KEA_P, i] / (_R * T))
        k_n = P[KPSI_N, i] * np.exp(-P[KEA_N, i] / (_R * T))
        i0_p = _F * k_p * np.sqrt(cbar_p * thc_p * (1.0 - thc_p))
        i0_n = _F * k_n * np.sqrt(cbar_n * thc_n * (1.0 - thc_n))
        arg_p = dth_p * _F * P[RP_P, i] / (6.0 * i0_p * C) * Ii
        arg_n = dth_n * _F * P[RP_N, i] / (6.0 * i0_n * C) * Ii
        eta_p = 2.0 * _R * T / _F * np.arcsinh(arg_p)
        eta_n = 2.0 * _R * T / _F * np.arcsinh(arg_n)

        # open-circuit potentials at the (raw) surface stoichiometries
        U_p = _horner(ocp_p, ths_p)
        U_n = _horner(neg_num, ths_n) / _horner(neg_den, ths_n)

        # electrolyte potential: ohmic drop + concentration term
        ekap = np.exp(-P[EAKAPPA, i] / (_R * T))
        phi_p = 0.0
        phi_s = 0.0
        phi_n = 0.0
        eb_p = P[EPS_P, i]**P[BRUG_P, i]
        eb_s = P[EPS_S, i]**P[BRUG_S, i]
        eb_n = P[EPS_N, i]**P[BRUG_N, i]
        for k in range(1, M + 1):
            kp = _horner(kap, 1e-3 * y[ce0 + k - 1]) * ekap
            ks = _horner(kap, 1e-3 * y[ce0 + M + k - 1]) * ekap
            kn = _horner(kap, 1e-3 * y[ce0 + 2 * M + k - 1]) * ekap
            if kp < 1e-6:
                kp = 1e-6
            if ks < 1e-6:
                ks = 1e-6
            if kn < 1e-6:
                kn = 1e-6
            phi_p += (2 * k - 1) / (kp * eb_p)
            phi_s += 1.0 / (ks * eb_s)
            phi_n += (2 * M - 2 * k + 1) / (kn * eb_n)
        phi_drop = -Ii / (2.0 * M) * (dxp * phi_p + 2.0 * dxs * phi_s
                                      + dxn * phi_n)
        c_left = y[ce0]
        c_right = y[ce0 + M3 - 1]
        if c_left < _CLIP:
            c_left = _CLIP
        if c_right < _CLIP:
            c_right = _CLIP
        dphi = phi_drop + 2.0 * _R * T / _F * (1.0 - P[TPLUS, i]) \
            * np.log(c_left / c_right)
        V = U_p - U_n + eta_p - eta_n + dphi + Ii * Rsei

        # ageing
        if Ii <= 0.0:
            i0_side = P[I0BASE, i] * (np.abs(Ii) / P[I1C, i])**P[WEXP, i]
        else:
            i0_side = 0.0
        U_n_c = _horner(neg_num, thc_n) / _horner(neg_den, thc_n)
        eta_side = eta_n + U_n_c - P[USEI, i]
        j_side = -(i0_side / _F) * np.exp(0.5 * _F / (_R * T) * eta_side)
        out[o_C + i] = (3.0 * C / (P[RP_N, i] * P[AREA, i] * dth_n
                                   * P[CSMAX_N, i]) * j_side)
        out[o_R + i] = -(P[MW, i] / (P[RHON, i] * P[NU, i])) * j_side

        Q_out[i] = np.abs(Ii) * np.abs(V - (U_p - U_n))

    # thermal network
    to_sink_sum = 0.0
    for i in range(N):
        exch = 0.0
        for j in range(N):
            exch += G[i, j] * (y[o_T + j] - y[o_T + i])
        to_sink = g_sink[i] * (y[o_T + i] - T_sink)
        to_sink_sum += to_sink
        out[o_T + i] = (Q_out[i] - to_sink + exch) / C_th[i]
    xi = xi_p if T_sink > T_norm else 0.0
    out[o_T + N] = (to_sink_sum - xi) / C_sink


@njit(cache=True)
def rhs_flat(y, I, P, ocp_p, neg_num, neg_den, kap,
             G, g_sink, C_th, C_sink, xi_p, T_norm, M):
    out = np.empty_like(y)
    Q = np.empty(P.shape[1])
    _rhs(y, I, out, Q, P, ocp_p, neg_num, neg_den, kap,
         G, g_sink, C_th, C_sink, xi_p, T_norm, M)
    return out


@njit(cache=True)
def _rk4_const_block(y, I_table, h, P, ocp_p, neg_num, neg_den, kap,
                     G, g_sink, C_th, C_sink, xi_p, T_norm, M):
    """Advance len(I_table) substeps with per-substep constant currents."""
    D = y.shape[0]
    N = P.shape[1]
    k1 = np.empty(D)
    k2 = np.empty(D)
    k3 = np.empty(D)
    k4 = np.empty(D)
    yt = np.empty(D)
    Q = np.empty(N)
    for s in range(I_table.shape[0]):
        I = I_table[s]
        _rhs(y, I, k1, Q, P, ocp_p, neg_num, neg_den, kap,
             G, g_sink, C_th, C_sink, xi_p, T_norm, M)
        for d in range(D):
            yt[d] = y[d] + 0.5 * h * k1[d]
        _rhs(yt, I, k2, Q, P, ocp_p, neg_num, neg_den, kap,
             G, g_sink, C_th, C_sink, xi_p, T_norm, M)
        for d in range(D):
            yt[d] = y[d] + 0.5 * h * k2[d]
        _rhs(yt, I, k3, Q, P, ocp_p, neg_num, neg_den, kap,
             G, g_sink, C_th, C_sink, xi_p, T_norm, M)
        for d in range(D):
            yt[d] = y[d] + h * k3[d]
        _rhs(yt, I, k4, Q, P, ocp_p, neg_num, neg_den, kap,
             G, g_sink, C_th, C_sink, xi_p, T_norm, M)
        for d in range(D):
            y[d] = y[d] + (h / 6.0) * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d]
                                       + k4[d])
    return y


@njit(cache=True)
def _sigmoid_I(I_branch, delta, a, offs, t_rel, out):
    for i in range(delta.shape[0]):
        out[i] = I_branch / (1.0 + np.exp(-a * (t_rel - offs[i])))


@njit(cache=True)
def _rk4_sigmoid_block(y, t_rel0, nsub, h, I_branch, delta, a, offs,
                       P, ocp_p, neg_num, neg_den, kap,
                       G, g_sink, C_th, C_sink, xi_p, T_norm, M):
    D = y.shape[0]
    N = P.shape[1]
    k1 = np.empty(D)
    k2 = np.empty(D)
    k3 = np.empty(D)
    k4 = np.empty(D)
    yt = np.empty(D)
    Q = np.empty(N)
    I1 = np.empty(N)
    Im = np.empty(N)
    I2 = np.empty(N)
    for s in range(nsub):
        t = t_rel0 + s * h
        _sigmoid_I(I_branch, delta, a, offs, t, I1)
        _sigmoid_I(I_branch, delta, a, offs, t + 0.5 * h, Im)
        _sigmoid_I(I_branch, delta, a, offs, t + h, I2)
        _rhs(y, I1, k1, Q, P, ocp_p, neg_num, neg_den, kap,
             G, g_sink, C_th, C_sink, xi_p, T_norm, M)
        for d in range(D):
            yt[d] = y[d] + 0.5 * h * k1[d]
        _rhs(yt, Im, k2, Q, P, ocp_p, neg_num, neg_den, kap,
             G, g_sink, C_th, C_sink, xi_p, T_norm, M)
        for d in range(D):
            yt[d] = y[d] + 0.5 * h * k2[d]
        _rhs(yt, Im, k3, Q, P, ocp_p, neg_num, neg_den, kap,
             G, g_sink, C_th, C_sink, xi_p, T_norm, M)
        for d in range(D):
            yt[d] = y[d] + h * k3[d]
        _rhs(yt, I2, k4, Q, P, ocp_p, neg_num, neg_den, kap,
             G, g_sink, C_th, C_sink, xi_p, T_norm, M)
        for d in range(D):
            y[d] = y[d] + (h / 6.0) * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d]
                                       + k4[d])
    return y


@njit(cache=True)
def predict_horizon_batch(y0, U, Ts, S, a, scale_offs,
                          P, ocp_p, neg_num, neg_den, kap,
                          G, g_sink, C_th, C_sink, xi_p, T_norm, M):
    """Sigmoid-mode horizon rollout for a batch of input sequences.

    ``U`` has shape (B, K, N+1) with columns [delta_1..delta_N, I]; returns
    boundary states of shape (B, K+1, D).  Only the first K inputs drive the
    dynamics (an optional trailing input in the decision vector does not).
    """
    B, K = U.shape[0], U.shape[1]
    N = P.shape[1]
    D = y0.shape[0]
    h = Ts / S
    traj = np.empty((B, K + 1, D))
    offs = np.empty(N)
    for b in range(B):
        y = y0.copy()
        traj[b, 0] = y
        for k in range(K):
            for i in range(N):
                offs[i] = (1.0 - U[b, k, i]) * (Ts if scale_offs else 1.0)
            y = _rk4_sigmoid_block(y, 0.0, S, h, U[b, k, N], U[b, k, :N],
                                   a, offs, P, ocp_p, neg_num, neg_den, kap,
                                   G, g_sink, C_th, C_sink, xi_p, T_norm, M)
            traj[b, k + 1] = y
    return traj
