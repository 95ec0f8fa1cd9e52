"""W8A8 integer kernels and the float operations around them.

Quantization is symmetric per-tensor: ``value = data * scale`` with data in
[-127, 127]. Rounding is half-away-from-zero everywhere so the integer path
and the float oracle agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

QMAX = 127


class QuantError(ValueError):
    pass


@dataclass(frozen=True)
class QTensor:
    data: np.ndarray
    scale: float

    def __post_init__(self):
        if self.data.dtype != np.int8:
            raise QuantError(f"QTensor data must be int8, got {self.data.dtype}")
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise QuantError(f"scale must be positive and finite, got {self.scale}")
        if self.data.size and int(self.data.min()) < -QMAX:
            raise QuantError("int8 payload contains -128")

    @property
    def shape(self):
        return self.data.shape

    def dequantize(self) -> np.ndarray:
        return self.data.astype(np.float64) * self.scale


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def maxabs_scale(x: np.ndarray) -> float:
    """Max-abs calibration: the largest magnitude maps to 127."""
    m = float(np.max(np.abs(x))) if np.size(x) else 0.0
    return m / QMAX if m > 0 else 1.0 / QMAX


def _saturate(x: np.ndarray) -> np.ndarray:
    return np.clip(round_half_away(x), -QMAX, QMAX).astype(np.int8)


def quantize(x, scale: float) -> QTensor:
    x = np.asarray(x, dtype=np.float64)
    if not (scale > 0):
        raise QuantError(f"scale must be positive, got {scale}")
    if not np.all(np.isfinite(x)):
        raise QuantError("cannot quantize non-finite values")
    return QTensor(_saturate(x / scale), float(scale))


def matvec_i8(w: QTensor, v: QTensor) -> np.ndarray:
    """int8 x int8 matrix-vector product with exact int32 accumulation."""
    wd, vd = w.data, v.data
    if wd.ndim != 2 or vd.ndim != 1 or wd.shape[1] != vd.shape[0]:
        raise QuantError(f"shape mismatch: W{wd.shape} @ v{vd.shape}")
    return kernels.matvec_i8(np.ascontiguousarray(wd), np.ascontiguousarray(vd))


def bias_requant(acc, bias, in_scale: float, w_scale: float, out_scale: float) -> QTensor:
    acc = np.asarray(acc)
    bias = np.asarray(bias, dtype=np.float64)
    if acc.shape != bias.shape:
        raise QuantError(f"shape mismatch: acc{acc.shape} vs bias{bias.shape}")
    if not (in_scale > 0 and w_scale > 0 and out_scale > 0):
        raise QuantError("scales must be positive")
    real = acc.astype(np.float64) * in_scale * w_scale + bias
    return QTensor(_saturate(real / out_scale), float(out_scale))


def linear_i8(w: QTensor, bias, v: QTensor, out_scale: float) -> QTensor:
    """Fused MP kernel datapath for one tile: MAC array then quantization unit."""
    return bias_requant(matvec_i8(w, v), bias, v.scale, w.scale, out_scale)


def layernorm(x, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    mean = kernels.sum_ltr(np.ascontiguousarray(x)) / d
    c = x - mean
    var = kernels.sum_ltr(np.ascontiguousarray(c * c)) / d
    return c / np.sqrt(var + eps) * gamma + beta


def fused_ln_res(x, res, gamma, beta, eps: float = 1e-5):
    """Residual add then layernorm; returns (normed, new_residual).

    Fusion only changes timing, so this is exactly the sequential composition.
    """
    x = np.asarray(x, dtype=np.float64)
    res = np.asarray(res, dtype=np.float64)
    if x.shape != res.shape:
        raise QuantError(f"shape mismatch: {x.shape} vs {res.shape}")
    new_res = x + res
    return layernorm(new_res, gamma, beta, eps), new_res


def softmax_2pass(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.size < 1:
        raise QuantError("softmax of empty vector")
    e = np.exp(s - s.max())
    # pass 1: global sum of exponents; pass 2: normalize
    total = kernels.sum_ltr(np.ascontiguousarray(e))
    return e / total


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))


def cosine(a, b) -> float:
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def dequant_full(data: np.ndarray, scale: float) -> np.ndarray:
    return data.astype(np.float64) * scale
