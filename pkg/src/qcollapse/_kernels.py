"""Banded double-sum kernels for the nonlocal interaction.

Each kernel has a numba implementation and a pure-numpy one with the same
signature. The numba path is used unless numba is missing or the
environment sets ``QCOLLAPSE_DISABLE_NUMBA=1``; :func:`use_backend` switches
at runtime (tests and the benchmark use it).

Shared argument conventions:

``C``      complex (N, M) coefficients on the grid
``w``      real (N,) trapezoid weights
``fband``  real (band+1,) kernel values at separations d*dt, d = 0..band
``phase``  complex (2*band+1, M, M), ``phase[d+band, a, b] = exp(-i w_ab d dt)``
           with ``w_ab = (E_a - E_b) / hbar``
``ephase`` complex (2*band+1, M), ``ephase[d+band, a] = exp(-i E_a d dt / hbar)``
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

_DISABLED = os.environ.get("QCOLLAPSE_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")


# ---------------------------------------------------------------- numpy path


def _nonlocal_integrals_np(C, w, fband, phase, band):
    N, M = C.shape
    out = np.zeros((N, M, M), dtype=np.complex128)
    for d in range(-band, band + 1):
        f = fband[abs(d)]
        lo, hi = max(0, -d), min(N, N - d)
        if hi <= lo:
            continue
        q = slice(lo + d, hi + d)
        cq = C[q] * (w[q] * f)[:, None]
        # out[n, a, b] += wf * C[q, a] * conj(C[q, b]) * phase[a, b]
        out[lo:hi] += cq[:, :, None] * np.conj(C[q])[:, None, :] * phase[d + band][None]
    return out


def _ri_sum_np(C, w, fband, ephase, G, band):
    N, M = C.shape
    total = 0.0
    for d in range(0, band + 1):
        f = fband[d]
        if d >= N:
            continue
        # P[n, a] = conj(C[n, a]) C[n+d, a] exp(-i E_a d dt)
        P = np.conj(C[: N - d]) * C[d:] * ephase[d + band][None, :]
        r = np.einsum("na,ab,nb->n", P, G, np.conj(P)).real
        s = np.dot(w[: N - d] * w[d:], r) * f
        total += s if d == 0 else 2.0 * s
    return total


def _jacobian_blocks_np(C, w, fband, phase, G, band):
    N, M = C.shape
    width = 2 * band + 1
    anl = np.zeros((N, width, M), dtype=np.complex128)
    bnl = np.zeros((N, width, M, M), dtype=np.complex128)
    for d in range(-band, band + 1):
        f = fband[abs(d)]
        lo, hi = max(0, -d), min(N, N - d)
        if hi <= lo:
            continue
        q = slice(lo + d, hi + d)
        wf = (w[q] * f)[:, None, None]
        K = G[None] * phase[d + band][None] * wf  # (n, a, b)
        cn = C[lo:hi]
        cq = C[q]
        anl[lo:hi, d + band] = np.einsum("nab,nb->na", K, cn * np.conj(cq))
        bnl[lo:hi, d + band] = K * cn[:, None, :] * cq[:, :, None]
    return anl, bnl


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _nonlocal_integrals_nb(C, w, fband, phase, band):
        N, M = C.shape
        out = np.zeros((N, M, M), dtype=np.complex128)
        for n in range(N):
            lo = max(0, n - band)
            hi = min(N - 1, n + band)
            for q in range(lo, hi + 1):
                d = q - n
                wf = w[q] * fband[abs(d)]
                for a in range(M):
                    ca = C[q, a] * wf
                    for b in range(M):
                        out[n, a, b] += ca * np.conj(C[q, b]) * phase[d + band, a, b]
        return out

    @njit(cache=True)
    def _ri_sum_nb(C, w, fband, ephase, G, band):
        N, M = C.shape
        P = np.empty(M, dtype=np.complex128)
        total = 0.0
        for d in range(0, min(band, N - 1) + 1):
            f = fband[d]
            s = 0.0
            for n in range(N - d):
                for a in range(M):
                    P[a] = np.conj(C[n, a]) * C[n + d, a] * ephase[d + band, a]
                r = 0.0
                for a in range(M):
                    acc = 0.0 + 0.0j
                    for b in range(M):
                        acc += G[a, b] * np.conj(P[b])
                    r += (P[a] * acc).real
                s += w[n] * w[n + d] * r
            s *= f
            if d == 0:
                total += s
            else:
                total += 2.0 * s
        return total

    @njit(cache=True)
    def _jacobian_blocks_nb(C, w, fband, phase, G, band):
        N, M = C.shape
        width = 2 * band + 1
        anl = np.zeros((N, width, M), dtype=np.complex128)
        bnl = np.zeros((N, width, M, M), dtype=np.complex128)
        for n in range(N):
            lo = max(0, n - band)
            hi = min(N - 1, n + band)
            for q in range(lo, hi + 1):
                d = q - n
                wf = w[q] * fband[abs(d)]
                for a in range(M):
                    acc = 0.0 + 0.0j
                    for b in range(M):
                        k = G[a, b] * phase[d + band, a, b] * wf
                        acc += k * C[n, b] * np.conj(C[q, b])
                        bnl[n, d + band, a, b] = k * C[n, b] * C[q, a]
                    anl[n, d + band, a] = acc
        return anl, bnl


# ---------------------------------------------------------------- dispatch

_IMPLS = {
    "numpy": (_nonlocal_integrals_np, _ri_sum_np, _jacobian_blocks_np),
}
if HAVE_NUMBA:
    _IMPLS["numba"] = (_nonlocal_integrals_nb, _ri_sum_nb, _jacobian_blocks_nb)

_active = "numba" if (HAVE_NUMBA and not _DISABLED) else "numpy"


def backend() -> str:
    return _active


def use_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend name."""
    global _active
    if name not in _IMPLS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(_IMPLS)}")
    prev, _active = _active, name
    return prev


def _prep(C, w, fband):
    return (
        np.ascontiguousarray(C, dtype=np.complex128),
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(fband, dtype=np.float64),
    )


def nonlocal_integrals(C, w, fband, phase, band):
    """I[n, a, b] = sum_q w_q f(t_n - t_q) conj(C_b(q)) C_a(q) exp(-i w_ab (t_q - t_n))."""
    C, w, fband = _prep(C, w, fband)
    return _IMPLS[_active][0](C, w, fband, np.ascontiguousarray(phase), int(band))


def ri_sum(C, w, fband, ephase, G, band):
    """sum_{n,q} w_n w_q f(t_n - t_q) r(t_n, t_q) / nu over the kernel band (real)."""
    C, w, fband = _prep(C, w, fband)
    return float(
        _IMPLS[_active][1](
            C, w, fband, np.ascontiguousarray(ephase), np.ascontiguousarray(G, dtype=np.float64), int(band)
        )
    )


def jacobian_blocks(C, w, fband, phase, G, band):
    """Wirtinger derivatives of the nonlocal term with respect to off-node coefficients.

    Returns ``(anl, bnl)`` where ``anl[n, d+band, a]`` is d Ctilde_a(n) / d C_a(n+d)
    and ``bnl[n, d+band, a, b]`` is d Ctilde_a(n) / d conj(C_b(n+d)). The on-node
    holomorphic part G_ab I_ab(n) is not included.
    """
    C, w, fband = _prep(C, w, fband)
    return _IMPLS[_active][2](
        C, w, fband, np.ascontiguousarray(phase), np.ascontiguousarray(G, dtype=np.float64), int(band)
    )
