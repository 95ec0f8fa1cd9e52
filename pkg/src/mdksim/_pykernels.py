"""Pure-numpy fallback for the compiled kernels.

Every reduction runs strictly left to right (``cumsum`` is sequential), so the
results do not depend on how many heads or rows a node happens to hold.
"""

import numpy as np


def matvec_i8(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    if w.shape[1] != v.shape[0]:
        raise ValueError(f"inner dimensions differ: {w.shape[1]} vs {v.shape[0]}")
    # integer matmul is exact; int32 cannot overflow below ~133k columns
    return w.astype(np.int32) @ v.astype(np.int32)


def sum_ltr(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    return float(np.cumsum(x)[-1])


def attend_head(k, v, q, scale, t, valid):
    if t < 1:
        raise ValueError("empty cache")
    k = k[:t]
    s = np.cumsum(k * q, axis=1)[:, -1] * scale
    if valid < t:
        s[valid:] = s[valid:] + (-1e30)
    e = np.exp(s - s.max())
    p = e / np.cumsum(e)[-1]
    return np.cumsum(p[:, None] * v[:t], axis=0)[-1]
