"""Hot numeric kernels with a numba and a pure-numpy implementation.

The two workhorse loops of the estimators live here:

* ``projector_cost_batch`` -- residual power of the relaxed (per-subcarrier
  decoupled) least-squares fit, evaluated for a batch of candidate positions.
  This dominates the 2D grid search.
* ``concentrated_cost`` -- the joint likelihood concentrated over the two
  complex path gains, evaluated once per local-search iteration.

Backend selection happens once at import time from the ``RISLOC_BACKEND``
environment variable: ``auto`` (default, numba when importable), ``numba``
(fail if unavailable) or ``numpy``.  Both implementations of each kernel are
kept importable so tests and benchmarks can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

# Relative s_min/s_max of any per-subcarrier 2-column block below which the
# stacked model matrix is treated as rank deficient.
RANK_RTOL = 1e-12


def _numpy_projector_cost_batch(phi1, phi2, y):
    """Residual power of the per-subcarrier 2-column LS fit, batched.

    Parameters
    ----------
    phi1, phi2 : ndarray, shape (C, G, N), complex
        First/second column factors per candidate, transmission, subcarrier.
    y : ndarray, shape (G, N), complex
        Received samples.

    Returns
    -------
    costs : ndarray, shape (C,)
        Sum over subcarriers of the squared residual after projecting
        y[:, n] onto span{phi1[c, :, n], phi2[c, :, n]}.
    margins : ndarray, shape (C,)
        Minimum over subcarriers of s_min/s_max of the 2-column block,
        i.e. the worst-case reciprocal condition measure of the fit.
    """
    # Two-column modified Gram-Schmidt, vectorized over (candidate, subcarrier).
    r11 = np.sqrt(np.sum(np.abs(phi1) ** 2, axis=1))  # (C, N)
    safe11 = np.where(r11 > 0.0, r11, 1.0)
    q1 = np.where(r11[:, None, :] > 0.0, phi1 / safe11[:, None, :], 0.0)
    r12 = np.sum(np.conj(q1) * phi2, axis=1)  # (C, N)
    w = phi2 - q1 * r12[:, None, :]
    r22 = np.sqrt(np.sum(np.abs(w) ** 2, axis=1))  # (C, N)
    safe22 = np.where(r22 > 0.0, r22, 1.0)
    q2 = np.where(r22[:, None, :] > 0.0, w / safe22[:, None, :], 0.0)

    z1 = np.sum(np.conj(q1) * y[None, :, :], axis=1)  # (C, N)
    z2 = np.sum(np.conj(q2) * y[None, :, :], axis=1)
    # explicit residual (not the energy-difference shortcut, which loses
    # ~16 digits to cancellation at an exact fit)
    resid = y[None, :, :] - q1 * z1[:, None, :] - q2 * z2[:, None, :]
    costs = np.sum(np.abs(resid) ** 2, axis=(1, 2))

    # Singular values of R = [[r11, r12], [0, r22]] via its 2x2 Gram matrix.
    t = r11**2 + np.abs(r12) ** 2 + r22**2
    d = (r11 * r22) ** 2
    disc = np.sqrt(np.maximum(t * t - 4.0 * d, 0.0))
    lam_max = 0.5 * (t + disc)
    lam_min = 0.5 * (t - disc)
    ratio = np.where(lam_max > 0.0, lam_min / np.where(lam_max > 0.0, lam_max, 1.0), 0.0)
    margins = np.sqrt(np.maximum(ratio, 0.0)).min(axis=1)
    return costs, margins


def _numpy_concentrated_cost(w1, w2, ph1, ph2, y, sqrt_p):
    """Joint-likelihood cost concentrated over the two complex path gains.

    Parameters
    ----------
    w1, w2 : ndarray, shape (G, N), complex
        Array-projected pilot factors for the direct and reflected paths.
    ph1, ph2 : ndarray, shape (N,), complex
        Per-subcarrier delay phase ramps of each path.
    y : ndarray, shape (G, N), complex
    sqrt_p : float
        Square root of the transmit power.

    Returns
    -------
    (cost, gain1, gain2, rcond) : cost is the summed squared residual at the
    optimal gains; rcond is lam_min/lam_max of the 2x2 normal matrix.
    """
    b1 = w1 * ph1[None, :]
    b2 = w2 * ph2[None, :]
    b11 = float(np.sum(np.abs(b1) ** 2))
    b22 = float(np.sum(np.abs(b2) ** 2))
    b12 = complex(np.vdot(b1, b2))
    r1 = complex(np.vdot(b1, y))
    r2 = complex(np.vdot(b2, y))

    tr = b11 + b22
    det = b11 * b22 - (b12.real**2 + b12.imag**2)
    disc = np.sqrt(max(tr * tr - 4.0 * det, 0.0))
    lam_max = 0.5 * (tr + disc)
    lam_min = 0.5 * (tr - disc)
    rcond = lam_min / lam_max if lam_max > 0.0 else 0.0
    if det <= 0.0 or rcond <= 0.0:
        return np.inf, 0.0 + 0.0j, 0.0 + 0.0j, rcond

    gain1 = (b22 * r1 - b12 * r2) / det / sqrt_p
    gain2 = (b11 * r2 - np.conj(b12) * r1) / det / sqrt_p
    resid = y - sqrt_p * (gain1 * b1 + gain2 * b2)
    cost = float(np.sum(np.abs(resid) ** 2))
    return cost, gain1, gain2, rcond


def _build_numba_kernels():
    from numba import njit

    @njit(cache=True)
    def projector_cost_batch(phi1, phi2, y):  # pragma: no cover - jitted
        C, G, N = phi1.shape
        costs = np.zeros(C)
        margins = np.empty(C)
        q1 = np.empty(G, np.complex128)
        wv = np.empty(G, np.complex128)
        for c in range(C):
            total = 0.0
            mmin = np.inf
            for n in range(N):
                a11 = 0.0
                for g in range(G):
                    v = phi1[c, g, n]
                    a11 += v.real * v.real + v.imag * v.imag
                r11 = np.sqrt(a11)
                r12 = 0.0 + 0.0j
                z1 = 0.0 + 0.0j
                for g in range(G):
                    if r11 > 0.0:
                        q1[g] = phi1[c, g, n] / r11
                    else:
                        q1[g] = 0.0 + 0.0j
                    r12 += np.conj(q1[g]) * phi2[c, g, n]
                    z1 += np.conj(q1[g]) * y[g, n]
                a22 = 0.0
                for g in range(G):
                    wv[g] = phi2[c, g, n] - q1[g] * r12
                    a22 += wv[g].real * wv[g].real + wv[g].imag * wv[g].imag
                r22 = np.sqrt(a22)
                z2 = 0.0 + 0.0j
                if r22 > 0.0:
                    for g in range(G):
                        wv[g] = wv[g] / r22
                        z2 += np.conj(wv[g]) * y[g, n]
                # explicit residual to stay accurate at an exact fit
                for g in range(G):
                    res = y[g, n] - q1[g] * z1 - wv[g] * z2
                    total += res.real * res.real + res.imag * res.imag

                t = r11 * r11 + (r12.real * r12.real + r12.imag * r12.imag) + r22 * r22
                d = (r11 * r22) ** 2
                disc2 = t * t - 4.0 * d
                if disc2 < 0.0:
                    disc2 = 0.0
                disc = np.sqrt(disc2)
                lam_max = 0.5 * (t + disc)
                lam_min = 0.5 * (t - disc)
                if lam_max > 0.0:
                    ratio = lam_min / lam_max
                    if ratio < 0.0:
                        ratio = 0.0
                    m = np.sqrt(ratio)
                else:
                    m = 0.0
                if m < mmin:
                    mmin = m
            costs[c] = total
            margins[c] = mmin
        return costs, margins

    @njit(cache=True)
    def concentrated_cost(w1, w2, ph1, ph2, y, sqrt_p):  # pragma: no cover - jitted
        G, N = w1.shape
        b11 = 0.0
        b22 = 0.0
        b12 = 0.0 + 0.0j
        r1 = 0.0 + 0.0j
        r2 = 0.0 + 0.0j
        for g in range(G):
            for n in range(N):
                v1 = w1[g, n] * ph1[n]
                v2 = w2[g, n] * ph2[n]
                b11 += v1.real * v1.real + v1.imag * v1.imag
                b22 += v2.real * v2.real + v2.imag * v2.imag
                b12 += np.conj(v1) * v2
                r1 += np.conj(v1) * y[g, n]
                r2 += np.conj(v2) * y[g, n]
        tr = b11 + b22
        det = b11 * b22 - (b12.real * b12.real + b12.imag * b12.imag)
        disc2 = tr * tr - 4.0 * det
        if disc2 < 0.0:
            disc2 = 0.0
        disc = np.sqrt(disc2)
        lam_max = 0.5 * (tr + disc)
        lam_min = 0.5 * (tr - disc)
        rcond = lam_min / lam_max if lam_max > 0.0 else 0.0
        if det <= 0.0 or rcond <= 0.0:
            return np.inf, 0.0 + 0.0j, 0.0 + 0.0j, rcond
        gain1 = (b22 * r1 - b12 * r2) / det / sqrt_p
        gain2 = (b11 * r2 - np.conj(b12) * r1) / det / sqrt_p
        cost = 0.0
        for g in range(G):
            for n in range(N):
                v1 = w1[g, n] * ph1[n]
                v2 = w2[g, n] * ph2[n]
                res = y[g, n] - sqrt_p * (gain1 * v1 + gain2 * v2)
                cost += res.real * res.real + res.imag * res.imag
        return cost, gain1, gain2, rcond

    return projector_cost_batch, concentrated_cost


def _select_backend(choice):
    """Resolve the backend name; raises if numba is demanded but missing."""
    choice = (choice or "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"RISLOC_BACKEND must be auto/numba/numpy, got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


ACTIVE_BACKEND = _select_backend(os.environ.get("RISLOC_BACKEND", "auto"))

if ACTIVE_BACKEND == "numba":
    _numba_projector_cost_batch, _numba_concentrated_cost = _build_numba_kernels()
    projector_cost_batch = _numba_projector_cost_batch
    concentrated_cost = _numba_concentrated_cost
else:
    projector_cost_batch = _numpy_projector_cost_batch
    concentrated_cost = _numpy_concentrated_cost
