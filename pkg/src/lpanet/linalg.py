"""Dense float64 kernel and the vec/Kronecker conversion apparatus.

Matrices are plain C-contiguous (row-major) ``float64`` numpy arrays of
ndim 2, vectors are ndim 1.  ``as_matrix``/``as_vector`` validate and
coerce; every public operation returns a fresh array and never mutates
its arguments.

``vec`` is column stacking: for X = [[1, 2], [3, 4]], vec(X) = [1, 3, 2, 4].
With that convention the three product conversions are

    vec(X W)       = (W^T kron I_m) vec(X)     X is m x n
    vec(W X)       = (I_n kron W)   vec(X)     X is m x n
    vec(W_L X W_R) = (W_R^T kron W_L) vec(X)
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "as_matrix",
    "as_vector",
    "identity",
    "matmul",
    "vec",
    "unvec",
    "kron",
    "right_mul_conversion",
    "left_mul_conversion",
    "bidirectional_conversion",
    "right_mul_bias",
    "fused_readout_chain",
    "relative_error",
    "IDENTITY_NAMES",
    "check_identities",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible or empty."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"{name} must be non-empty, got shape {m.shape}")
    return m


def as_vector(v, name: str = "vector") -> np.ndarray:
    x = np.ascontiguousarray(v, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {x.shape}")
    if x.shape[0] < 1:
        raise DimensionError(f"{name} must be non-empty")
    return x


def identity(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"identity size must be >= 1, got {n}")
    return np.eye(n, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def vec(m) -> np.ndarray:
    """Stack the columns of ``m`` into one vector (column 1 first)."""
    m = as_matrix(m)
    return m.T.reshape(-1).copy()


def unvec(v, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec` for a ``rows x cols`` matrix."""
    v = as_vector(v)
    if rows < 1 or cols < 1 or v.shape[0] != rows * cols:
        raise DimensionError(f"cannot reshape length {v.shape[0]} into {rows}x{cols}")
    return np.ascontiguousarray(v.reshape(cols, rows).T)


def kron(a, b) -> np.ndarray:
    """Kronecker product; block (i, j) of the result is ``a[i, j] * b``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    p, q = a.shape
    r, s = b.shape
    out = a[:, None, :, None] * b[None, :, None, :]
    return out.reshape(p * r, q * s)


def right_mul_conversion(w, m: int) -> np.ndarray:
    """Return ``W' = W^T kron I_m`` so that vec(X W) = W' vec(X) for X of m rows."""
    w = as_matrix(w, "w")
    if int(m) < 1:
        raise ValueError(f"row count m must be >= 1, got {m}")
    return kron(w.T, identity(int(m)))


def left_mul_conversion(w, n: int) -> np.ndarray:
    """Return ``W' = I_n kron W`` so that vec(W X) = W' vec(X) for X of n columns."""
    w = as_matrix(w, "w")
    if int(n) < 1:
        raise ValueError(f"column count n must be >= 1, got {n}")
    return kron(identity(int(n)), w)


def bidirectional_conversion(wl, wr) -> np.ndarray:
    """Return ``W' = W_R^T kron W_L`` so that vec(W_L X W_R) = W' vec(X)."""
    wl = as_matrix(wl, "wl")
    wr = as_matrix(wr, "wr")
    return kron(wr.T, wl)


def right_mul_bias(bias, m: int) -> np.ndarray:
    """Vectorised bias for ``Y = X W + 1_m bias^T``.

    ``bias`` has one entry per output column (length p) and is added to
    each of the m rows; the matching vector term is ``bias kron 1_m``.
    """
    bias = as_vector(bias, "bias")
    if int(m) < 1:
        raise ValueError(f"row count m must be >= 1, got {m}")
    return kron(bias[:, None], np.ones((int(m), 1))).reshape(-1)


def fused_readout_chain(projections: Sequence, readout) -> np.ndarray:
    """Fuse ``readout @ P_k @ ... @ P_1`` into one matrix.

    ``projections`` is given in application order: ``projections[0]`` acts
    on the state first.  The product is accumulated from the readout side.
    """
    acc = as_matrix(readout, "readout")
    mats = [as_matrix(p, f"projections[{k}]") for k, p in enumerate(projections)]
    for k in range(len(mats) - 1):
        if mats[k + 1].shape[1] != mats[k].shape[0]:
            raise DimensionError(
                f"chain link {k}: projection {k} outputs {mats[k].shape[0]} rows but "
                f"projection {k + 1} expects {mats[k + 1].shape[1]} columns"
            )
    if mats and acc.shape[1] != mats[-1].shape[0]:
        raise DimensionError(
            f"chain link {len(mats) - 1}: readout expects {acc.shape[1]} columns but "
            f"projection {len(mats) - 1} outputs {mats[-1].shape[0]} rows"
        )
    for p in reversed(mats):
        acc = acc @ p
    return acc


def relative_error(actual, expected) -> float:
    """Max-norm relative error ``|actual - expected|_inf / |expected|_inf``."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    if actual.shape != expected.shape:
        raise DimensionError(f"shape {actual.shape} differs from {expected.shape}")
    scale = float(np.max(np.abs(expected), initial=0.0))
    diff = float(np.max(np.abs(actual - expected), initial=0.0))
    if scale == 0.0:
        return diff
    return diff / scale


IDENTITY_NAMES = ("vec_roundtrip", "right_mul", "left_mul", "bidirectional", "bias", "mixed_product", "kron_identity")


def check_identities(trials: int = 1000, seed: int = 0, max_dim: int = 8) -> dict:
    """Run seeded random trials of every conversion identity.

    Each trial draws fresh shapes in ``1..max_dim`` and standard-uniform
    entries in [-1, 1).  Returns the worst relative error per identity,
    keyed by ``IDENTITY_NAMES``.
    """
    from .rng import Xoshiro256pp

    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if max_dim < 1:
        raise ValueError(f"max_dim must be >= 1, got {max_dim}")
    rng = Xoshiro256pp(seed)

    def dim():
        return 1 + rng.bounded(max_dim)

    def mat(r, c):
        return rng.uniform(r * c, -1.0, 1.0).reshape(r, c)

    worst = dict.fromkeys(IDENTITY_NAMES, 0.0)

    def record(name, actual, expected):
        worst[name] = max(worst[name], relative_error(actual, expected))

    for _ in range(trials):
        m, n, p, q = dim(), dim(), dim(), dim()
        x = mat(m, n)
        record("vec_roundtrip", unvec(vec(x), m, n), x)

        w = mat(n, p)
        record("right_mul", right_mul_conversion(w, m) @ vec(x), vec(x @ w))

        wl = mat(q, m)
        record("left_mul", left_mul_conversion(wl, n) @ vec(x), vec(wl @ x))
        record("bidirectional", bidirectional_conversion(wl, w) @ vec(x), vec(wl @ x @ w))

        bias = rng.uniform(p, -1.0, 1.0)
        y = x @ w + bias[None, :]
        record("bias", right_mul_conversion(w, m) @ vec(x) + right_mul_bias(bias, m), vec(y))

        a, c = mat(m, n), mat(n, p)
        b = mat(q, dim())
        d = mat(b.shape[1], dim())
        record("mixed_product", kron(a, b) @ kron(c, d), kron(a @ c, b @ d))

        record("kron_identity", kron(identity(m), identity(n)), identity(m * n))
    return worst
