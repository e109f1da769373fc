"""Tensor helpers, seeded sampling and the differentiable layer kernels.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Every kernel
comes as a forward/backward pair; backward functions return exact gradients
for the given upstream gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ParameterError, ShapeError

DTYPE = np.float64

_MASK64 = (1 << 64) - 1


def tensor(data, shape: Sequence[int] | None = None, checked: bool = True) -> np.ndarray:
    """Build a float64 tensor, optionally reshaping and rejecting NaN/Inf."""
    arr = np.array(data, dtype=DTYPE)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ShapeError(f"shape entries must be positive, got {shape}")
        if int(np.prod(shape)) != arr.size:
            raise ShapeError(f"data of length {arr.size} does not fill shape {shape}")
        arr = arr.reshape(shape)
    if checked and not np.all(np.isfinite(arr)):
        raise ParameterError("tensor contains NaN or Inf")
    return arr


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass
class RngStream:
    """Counter-based random stream identified by ``(seed, stream_id)``.

    Backed by Philox, so a stream's output depends only on its identity and
    on how many values were drawn from it, never on other streams.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.seed = int(self.seed) & _MASK64
        self.stream_id = int(self.stream_id) & _MASK64

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32,
                                         self.stream_id & 0xFFFFFFFF, self.stream_id >> 32])
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def substream(self, key: int | str) -> "RngStream":
        """Fresh independent stream derived from this one and ``key``."""
        if isinstance(key, str):
            k = 0
            for ch in key.encode("utf-8"):
                k = _splitmix64(k ^ ch)
        else:
            k = int(key) & _MASK64
        return RngStream(self.seed, _splitmix64(self.stream_id ^ _splitmix64(k)))


def _check_shape(shape) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape),)
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s <= 0 for s in shape):
        raise ShapeError(f"shape must be a nonempty list of positive integers, got {shape}")
    return shape


def sample_gaussian(rng: RngStream, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if not np.isfinite(std) or std < 0:
        raise ParameterError(f"std must be finite and >= 0, got {std}")
    shape = _check_shape(shape)
    z = rng.generator.standard_normal(shape)
    return mean + std * z


def sample_rademacher(rng: RngStream, shape) -> np.ndarray:
    shape = _check_shape(shape)
    bits = rng.generator.integers(0, 2, size=shape, dtype=np.int8)
    return (2.0 * bits - 1.0).astype(DTYPE)


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------

def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _check_conv(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None, stride: int, pad: int):
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got input {x.shape} and kernel {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    if x.shape[1] != cin or kh != kw:
        raise ShapeError(f"conv2d channel/kernel mismatch: input {x.shape}, kernel {kernel.shape}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match kernel {kernel.shape}")
    if stride < 1 or pad < 0:
        raise ParameterError(f"invalid stride={stride} or pad={pad}")
    if kh > x.shape[2] + 2 * pad or kw > x.shape[3] + 2 * pad:
        raise ShapeError(f"kernel {kernel.shape} larger than padded input {x.shape} (pad={pad})")


def _im2col(x: np.ndarray, k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    """Column matrix of shape ``(Cin*k*k, B*Ho*Wo)``; rows ordered (c, di, dj)."""
    b, c = x.shape[:2]
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, k, k, b, ho, wo), dtype=DTYPE)
    xt = x.transpose(1, 0, 2, 3)
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj] = xt[:, :, di:di + stride * ho:stride, dj:dj + stride * wo:stride]
    return cols.reshape(c * k * k, b * ho * wo)


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None,
           stride: int = 1, pad: int = 0) -> np.ndarray:
    """2-d cross-correlation of ``x[B,Cin,H,W]`` with ``kernel[Cout,Cin,k,k]``."""
    out, _ = conv2d_forward(x, kernel, bias, stride, pad)
    return out


def conv2d_forward(x, kernel, bias=None, stride=1, pad=0):
    """Like :func:`conv2d` but also returns the im2col matrix for reuse in backward."""
    _check_conv(x, kernel, bias, stride, pad)
    b = x.shape[0]
    cout, _, k, _ = kernel.shape
    ho = conv_output_size(x.shape[2], k, stride, pad)
    wo = conv_output_size(x.shape[3], k, stride, pad)
    cols = _im2col(x, k, stride, pad, ho, wo)
    out = kernel.reshape(cout, -1) @ cols
    if bias is not None:
        out += bias[:, None]
    out = out.reshape(cout, b, ho, wo).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), cols


def conv2d_backward(grad: np.ndarray, x: np.ndarray, kernel: np.ndarray, stride: int = 1,
                    pad: int = 0, cols: np.ndarray | None = None, need_input: bool = True):
    """Gradients ``(d_input, d_kernel, d_bias)`` of :func:`conv2d`.

    ``d_input`` is ``None`` when ``need_input`` is false (first layer).
    """
    _check_conv(x, kernel, None, stride, pad)
    b, cin, h, w = x.shape
    cout, _, k, _ = kernel.shape
    ho = conv_output_size(h, k, stride, pad)
    wo = conv_output_size(w, k, stride, pad)
    if grad.shape != (b, cout, ho, wo):
        raise ShapeError(f"upstream gradient {grad.shape} does not match conv output {(b, cout, ho, wo)}")
    if cols is None:
        cols = _im2col(x, k, stride, pad, ho, wo)
    g2 = np.ascontiguousarray(grad.transpose(1, 0, 2, 3)).reshape(cout, -1)
    d_kernel = (g2 @ cols.T).reshape(kernel.shape)
    d_bias = g2.sum(axis=1)
    if not need_input:
        return None, d_kernel, d_bias
    dcols = (kernel.reshape(cout, -1).T @ g2).reshape(cin, k, k, b, ho, wo)
    dxp = np.zeros((cin, b, h + 2 * pad, w + 2 * pad), dtype=DTYPE)
    for di in range(k):
        for dj in range(k):
            dxp[:, :, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += dcols[:, di, dj]
    d_input = dxp[:, :, pad:pad + h, pad:pad + w].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(d_input), d_kernel, d_bias


# --------------------------------------------------------------------------
# pooling
# --------------------------------------------------------------------------

def _check_pool(x: np.ndarray, size: int) -> None:
    if x.ndim < 2:
        raise ShapeError(f"pool2d needs at least 2 spatial dims, got shape {x.shape}")
    if size < 1:
        raise ParameterError(f"pool size must be >= 1, got {size}")
    h, w = x.shape[-2:]
    if h % size or w % size:
        raise ShapeError(f"pool2d: spatial dims {(h, w)} of input {x.shape} not divisible by size {size}")


def pool2d(x: np.ndarray, kind: str = "max", size: int = 2) -> np.ndarray:
    _check_pool(x, size)
    if kind not in ("max", "avg"):
        raise ParameterError(f"unknown pool kind {kind!r}; expected 'max' or 'avg'")
    out = np.array(x[..., 0::size, 0::size], dtype=DTYPE)
    for di in range(size):
        for dj in range(size):
            if di == 0 and dj == 0:
                continue
            win = x[..., di::size, dj::size]
            if kind == "max":
                np.maximum(out, win, out=out)
            else:
                out += win
    if kind == "avg":
        out /= size * size
    return out


def pool2d_backward(grad: np.ndarray, x: np.ndarray, kind: str = "max", size: int = 2,
                    out: np.ndarray | None = None) -> np.ndarray:
    """Gradient of :func:`pool2d`; ``out`` is the forward result if already known.

    Max pooling routes each window's gradient to its first maximum in
    row-major order.
    """
    _check_pool(x, size)
    h, w = x.shape[-2:]
    out_shape = x.shape[:-2] + (h // size, w // size)
    if grad.shape != out_shape:
        raise ShapeError(f"upstream gradient {grad.shape} does not match pool output {out_shape}")
    dx = np.zeros_like(x, dtype=DTYPE)
    if kind == "avg":
        for di in range(size):
            for dj in range(size):
                dx[..., di::size, dj::size] = grad / (size * size)
        return dx
    if kind != "max":
        raise ParameterError(f"unknown pool kind {kind!r}; expected 'max' or 'avg'")
    peak = pool2d(x, "max", size) if out is None else out
    taken = np.zeros(out_shape, dtype=bool)
    hit = np.empty(out_shape, dtype=bool)
    for di in range(size):
        for dj in range(size):
            np.equal(x[..., di::size, dj::size], peak, out=hit)
            np.greater(hit, taken, out=hit)  # hit and not taken
            np.copyto(dx[..., di::size, dj::size], grad, where=hit)
            taken |= hit
    return dx


# --------------------------------------------------------------------------
# dense
# --------------------------------------------------------------------------

def _check_dense(x, weight, bias):
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense shape mismatch: input {x.shape}, weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"dense bias shape {bias.shape} does not match weight {weight.shape}")


def dense(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """``x @ weight.T + bias`` for ``x[B,n]`` and ``weight[m,n]``."""
    _check_dense(x, weight, bias)
    out = x @ weight.T
    if bias is not None:
        out += bias
    return out


def dense_backward(grad: np.ndarray, x: np.ndarray, weight: np.ndarray):
    _check_dense(x, weight, None)
    if grad.shape != (x.shape[0], weight.shape[0]):
        raise ShapeError(f"upstream gradient {grad.shape} does not match dense output {(x.shape[0], weight.shape[0])}")
    return grad @ weight, grad.T @ x, grad.sum(axis=0)
