"""Inner-loop kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``WGBRINKMAN_NUMBA`` is not
set to ``0``.  Both paths produce identical results up to rounding; the
test suite runs each of them.
"""

from __future__ import annotations

import os

import numpy as np


def _env_wants_numba() -> bool:
    return os.environ.get("WGBRINKMAN_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _env_wants_numba()


def exponents(degree: int) -> np.ndarray:
    """Graded-lex exponent pairs: 1, x, y, x^2, xy, y^2, ..."""
    out = [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]
    return np.array(out, dtype=np.int64).reshape(-1, 2)


# ---------------------------------------------------------------- numpy path


def _np_monomials(pts, center, scale, degree):
    s = (pts - center) / scale
    ex = exponents(degree)
    return s[None, :, 0] ** ex[:, 0, None] * s[None, :, 1] ** ex[:, 1, None]


def _np_monomial_grads(pts, center, scale, degree):
    s = (pts - center) / scale
    ex = exponents(degree)
    a, b = ex[:, 0, None], ex[:, 1, None]
    sx, sy = s[None, :, 0], s[None, :, 1]
    # a * sx**(a-1) with the a == 0 rows forced to zero
    dx = np.where(a > 0, a * sx ** np.maximum(a - 1, 0), 0.0) * sy**b
    dy = np.where(b > 0, b * sy ** np.maximum(b - 1, 0), 0.0) * sx**a
    return np.stack([dx, dy]) / scale


def _np_powers(t, degree):
    return t[None, :] ** np.arange(degree + 1)[:, None]


def _np_weighted_gram(a, w, b):
    # BLAS beats a compiled triple loop here, so both backends use this one
    return (a * w) @ b.T


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _nb_monomials(pts, center, scale, degree):
        nb = (degree + 1) * (degree + 2) // 2
        npts = pts.shape[0]
        out = np.empty((nb, npts))
        px = np.empty(degree + 1)
        py = np.empty(degree + 1)
        for q in range(npts):
            sx = (pts[q, 0] - center[0]) / scale
            sy = (pts[q, 1] - center[1]) / scale
            px[0] = 1.0
            py[0] = 1.0
            for i in range(1, degree + 1):
                px[i] = px[i - 1] * sx
                py[i] = py[i - 1] * sy
            m = 0
            for d in range(degree + 1):
                for j in range(d + 1):
                    out[m, q] = px[d - j] * py[j]
                    m += 1
        return out

    @numba.njit(cache=True)
    def _nb_monomial_grads(pts, center, scale, degree):
        nb = (degree + 1) * (degree + 2) // 2
        npts = pts.shape[0]
        out = np.zeros((2, nb, npts))
        px = np.empty(degree + 1)
        py = np.empty(degree + 1)
        for q in range(npts):
            sx = (pts[q, 0] - center[0]) / scale
            sy = (pts[q, 1] - center[1]) / scale
            px[0] = 1.0
            py[0] = 1.0
            for i in range(1, degree + 1):
                px[i] = px[i - 1] * sx
                py[i] = py[i - 1] * sy
            m = 0
            for d in range(degree + 1):
                for j in range(d + 1):
                    a = d - j
                    if a > 0:
                        out[0, m, q] = a * px[a - 1] * py[j] / scale
                    if j > 0:
                        out[1, m, q] = j * px[a] * py[j - 1] / scale
                    m += 1
        return out

    @numba.njit(cache=True)
    def _nb_powers(t, degree):
        out = np.empty((degree + 1, t.shape[0]))
        for q in range(t.shape[0]):
            v = 1.0
            for i in range(degree + 1):
                out[i, q] = v
                v *= t[q]
        return out


def _pick(nb_fn_name, np_fn):
    if USE_NUMBA:
        return globals()[nb_fn_name]
    return np_fn


def monomials(pts, center, scale, degree):
    """Scaled monomials ((x - center)/scale)^alpha at ``pts``; shape (nbasis, npts)."""
    pts = np.ascontiguousarray(pts, dtype=float)
    center = np.ascontiguousarray(center, dtype=float)
    return _monomials(pts, center, float(scale), int(degree))


def monomial_grads(pts, center, scale, degree):
    """Gradients of the scaled monomials; shape (2, nbasis, npts)."""
    pts = np.ascontiguousarray(pts, dtype=float)
    center = np.ascontiguousarray(center, dtype=float)
    return _monomial_grads(pts, center, float(scale), int(degree))


def powers(t, degree):
    """1D monomials t^i, i = 0..degree; shape (degree+1, npts)."""
    return _powers(np.ascontiguousarray(t, dtype=float), int(degree))


def weighted_gram(a, w, b):
    """sum_q a[i, q] w[q] b[j, q]."""
    return _weighted_gram(
        np.ascontiguousarray(a, dtype=float),
        np.ascontiguousarray(w, dtype=float),
        np.ascontiguousarray(b, dtype=float),
    )


def set_backend(use_numba: bool) -> None:
    """Switch kernels at runtime (tests and the benchmark use this)."""
    global USE_NUMBA, _monomials, _monomial_grads, _powers, _weighted_gram
    if use_numba and not HAVE_NUMBA:
        raise RuntimeError("numba is not available")
    USE_NUMBA = bool(use_numba)
    _monomials = _pick("_nb_monomials", _np_monomials)
    _monomial_grads = _pick("_nb_monomial_grads", _np_monomial_grads)
    _powers = _pick("_nb_powers", _np_powers)
    _weighted_gram = _np_weighted_gram


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


set_backend(USE_NUMBA)
