"""Numpy implementations of the distance kernels.

Used when the compiled extension is unavailable or when
``CLAN_PURE_PYTHON=1`` is set. Results match the compiled kernels to
rounding; both accumulate in float64.
"""
import numpy as np

_CHUNK = 1 << 20  # elements of the (rows, base, q) difference block per pass


def _norms(x):
    x64 = x.astype(np.float64, copy=False)
    return np.sqrt(np.einsum("ij,ij->i", x64, x64))


def sq_euclidean(a, b):
    a64 = a.astype(np.float64, copy=False)
    b64 = b.astype(np.float64, copy=False)
    diff = a64[:, None, :] - b64[None, :, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)
    return out.astype(a.dtype, copy=False)


def _unit(x):
    x64 = x.astype(np.float64, copy=False)
    return x64 * (1.0 / _norms(x64))[:, None]


def cosine(a, b):
    # 1 - cos == |a/|a| - b/|b||^2 / 2: exact zero for equal rows, no cancellation
    an, bn = _unit(a), _unit(b)
    diff = an[:, None, :] - bn[None, :, :]
    out = np.clip(0.5 * np.einsum("ijk,ijk->ij", diff, diff), 0.0, 2.0)
    return out.astype(a.dtype, copy=False)


def min_sq_euclidean(queries, base):
    q64 = queries.astype(np.float64, copy=False)
    b64 = base.astype(np.float64, copy=False)
    out = np.empty(len(q64), dtype=np.float64)
    step = max(1, _CHUNK // max(1, b64.size))
    for start in range(0, len(q64), step):
        block = q64[start:start + step]
        diff = block[:, None, :] - b64[None, :, :]
        out[start:start + step] = np.einsum("ijk,ijk->ij", diff, diff).min(axis=1)
    return out


def min_cosine(queries, base):
    return np.minimum(0.5 * min_sq_euclidean(_unit(queries), _unit(base)), 2.0)
