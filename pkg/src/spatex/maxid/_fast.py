"""Compiled per-observation pair log-density (same quadrature as ``kernel``)."""

import math

import numpy as np
from numba import njit

_SQRT2PI = math.sqrt(2.0 * math.pi)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@njit(cache=True)
def _log_m_lo(beta, beta_eps):
    if beta < beta_eps:
        return -np.inf
    return -math.log1p(40.0 * beta) / beta


@njit(cache=True)
def _window(scale, beta, v_hi, floor, beta_eps):
    lv_hi = math.log(v_hi)
    lv_lo = max(math.log(floor), math.log(scale) + _log_m_lo(beta, beta_eps))
    lv_lo = min(lv_lo, lv_hi - 0.7)
    return lv_lo, lv_hi


@njit(cache=True)
def _log_q(lm, beta, beta_eps):
    # returns (log q(m), 1 + m^-beta)
    if beta < beta_eps:
        return 2.0 * lm, 2.0 - beta * lm
    e = math.expm1(-beta * lm)
    return lm - e / beta, 2.0 + e


@njit(cache=True)
def _side(za, ratio, beta, x, w, v_hi0, floor, beta_eps):
    # (int q phi Phi dv, -int q (1 + m^-beta) phi Phi dv / za) on the window of scale za
    vhi = v_hi0 / math.sqrt(1.0 + ratio * ratio) if ratio < 0 else v_hi0
    lo, hi = _window(za, beta, vhi, floor, beta_eps)
    half = 0.5 * (hi - lo)
    mid = lo + half
    lza = math.log(za)
    s0 = 0.0
    s1 = 0.0
    for j in range(x.size):
        t = mid + half * x[j]
        v = math.exp(t)
        lm = t - lza
        lq, fac = _log_q(lm, beta, beta_eps)
        base = math.exp(lq - 0.5 * v * v) / _SQRT2PI
        base *= 0.5 * math.erfc(-v * ratio * _INV_SQRT2) * half * w[j] * v
        s0 += base
        s1 += base * fac
    return s0, -s1 / za


@njit(cache=True)
def pair_terms(z1, z2, r, beta, x, w, v_hi0, floor, beta_eps):
    s = math.sqrt((1.0 - r) * (1.0 + r))
    c1 = (z2 - r * z1) / s
    c2 = (z1 - r * z2) / s
    a0, V1 = _side(z1, c1 / z1, beta, x, w, v_hi0, floor, beta_eps)
    b0, V2 = _side(z2, c2 / z2, beta, x, w, v_hi0, floor, beta_eps)
    Q = (z1 * z1 - 2.0 * r * z1 * z2 + z2 * z2) / (s * s)
    sq = math.sqrt(Q)
    lo, hi = _window(sq, beta, v_hi0, floor, beta_eps)
    half = 0.5 * (hi - lo)
    mid = lo + half
    lsq = math.log(sq)
    acc = 0.0
    for j in range(x.size):
        t = mid + half * x[j]
        v = math.exp(t)
        lm = t - lsq
        lq, fac = _log_q(lm, beta, beta_eps)
        term = math.exp(lq - 0.5 * v * v) / _SQRT2PI
        acc += term * fac * v * half * w[j] * v
    V12 = -acc / (_SQRT2PI * s * Q)
    return a0 + b0, V1, V2, V12


@njit(cache=True, nogil=True)
def pair_logc(z1, z2, lnu1, lnu2, lnD1, lnD2, r, beta, x, w, v_hi0, floor, beta_eps, rho_one, out):
    """Fill ``out`` with log copula densities; returns the number of floored terms."""
    n_floor = 0
    for i in range(z1.size):
        if r[i] >= rho_one:
            out[i] = math.log(1e-300)
            n_floor += 1
            continue
        V, V1, V2, V12 = pair_terms(z1[i], z2[i], r[i], beta[i], x, w, v_hi0, floor, beta_eps)
        dens = V1 * V2 - V12
        if not (dens > 0.0) or not math.isfinite(V):
            out[i] = math.log(1e-300)
            n_floor += 1
        else:
            out[i] = -V + math.log(dens) - lnu1[i] - lnu2[i] - lnD1[i] - lnD2[i]
    return n_floor
