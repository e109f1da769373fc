"""Curvature diagnostics: Hessian-vector products, Hutchinson trace, Lanczos
top eigenvalues and stochastic Lanczos quadrature.

Every estimator talks to the model only through a gradient oracle, a
callable mapping a flat parameter vector to ``(loss, gradient)``.  For a
spiking network the gradient is the surrogate BPTT gradient, so the
"Hessian" probed here is the Jacobian of that gradient, approximated by
central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import numerics as nx
from .data import Dataset
from .errors import ParameterError, ShapeError
from .network import Network, backward, flatten_grads, forward
from .train import mse_loss

DEFAULT_REL_EPS = 1e-3


class GradientOracle(Protocol):
    dim: int

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]: ...


class QuadraticOracle:
    """``L(θ) = ½ θᵀAθ + bᵀθ`` for an explicit symmetric matrix ``A``."""

    def __init__(self, A, b=None):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError(f"A must be square, got {A.shape}")
        self.A = 0.5 * (A + A.T)
        self.b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
        self.dim = A.shape[0]

    def __call__(self, theta):
        g = self.A @ theta + self.b
        return float(0.5 * theta @ (self.A @ theta) + self.b @ theta), g


class NetworkOracle:
    """MSE loss and BPTT gradient of a network on a fixed batch.

    The oracle works on a private copy of ``net``; the caller's network is
    never modified.  Poisson encoding uses the same random stream on every
    call, so the oracle is deterministic.  The batch is processed in chunks
    of ``chunk_size`` rows (small chunks stay in cache) and the chunk
    losses and gradients are combined with weights ``n_chunk / n``.
    """

    def __init__(self, net: Network, images: np.ndarray, labels: np.ndarray,
                 mode: str = "spiking", seed: int = 0, chunk_size: int = 16):
        if len(images) == 0:
            raise ParameterError("curvature batch is empty")
        if chunk_size < 1:
            raise ParameterError(f"chunk_size must be >= 1, got {chunk_size}")
        self.chunk_size = chunk_size
        self.net = net.copy()
        self.images = np.asarray(images, dtype=np.float64)
        self.labels = np.asarray(labels)
        self.mode = mode
        self.seed = seed
        self.dim = self.net.param_count
        self.calls = 0

    def __call__(self, theta):
        self.net.set_flat(theta)
        n = len(self.labels)
        loss, grad = 0.0, np.zeros(self.dim)
        for c, start in enumerate(range(0, n, self.chunk_size)):
            sl = slice(start, start + self.chunk_size)
            rng = nx.RngStream(self.seed).substream(f"encode/{c}")
            rates, tape = forward(self.net, self.images[sl], self.mode, rng)
            part, d_rates = mse_loss(rates, self.labels[sl])
            w = rates.shape[0] / n
            loss += w * part
            grad += flatten_grads(backward(self.net, tape, w * d_rates))
        self.calls += 1
        return loss, grad


def curvature_batch(dataset: Dataset, n: int = 512, seed: int = 0) -> Dataset:
    """Fixed, class-stratified evaluation batch for curvature estimates."""
    from .data import subset
    return subset(dataset, min(n, len(dataset)), seed)


def default_eps(theta: np.ndarray, rel: float = DEFAULT_REL_EPS) -> float:
    norm = float(np.linalg.norm(theta))
    return rel * norm if norm > 0 else rel


def _check_vec(theta, v, dim):
    if theta.shape != (dim,) or v.shape != (dim,):
        raise ShapeError(f"theta {theta.shape} and v {v.shape} must both have shape ({dim},)")


def hvp(oracle: GradientOracle, theta: np.ndarray, v: np.ndarray, eps: float | None = None) -> np.ndarray:
    """Central-difference Hessian-vector product along ``v/‖v‖``, rescaled by ``‖v‖``."""
    theta = np.asarray(theta, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_vec(theta, v, oracle.dim)
    if eps is None:
        eps = default_eps(theta)
    if not eps > 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(v)
    step = (eps / norm) * v
    _, g_plus = oracle(theta + step)
    _, g_minus = oracle(theta - step)
    return (g_plus - g_minus) * (norm / (2.0 * eps))


def hutchinson_trace(oracle: GradientOracle, theta: np.ndarray, n_probes: int,
                     rng: nx.RngStream, eps: float | None = None) -> tuple[float, float]:
    """Mean and standard error of ``vᵀHv`` over Rademacher probes."""
    if n_probes < 2:
        raise ParameterError(f"n_probes must be >= 2, got {n_probes}")
    samples = np.empty(n_probes)
    for j in range(n_probes):
        v = nx.sample_rademacher(rng.substream(f"hutchinson/{j}"), oracle.dim)
        samples[j] = v @ hvp(oracle, theta, v, eps)
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n_probes))


@dataclass
class LanczosResult:
    alphas: np.ndarray
    betas: np.ndarray  # off-diagonal of the tridiagonal matrix, zero at restarts
    basis: np.ndarray

    def ritz(self) -> tuple[np.ndarray, np.ndarray]:
        """Ritz values (ascending) and eigenvectors of the tridiagonal matrix."""
        Tm = np.diag(self.alphas) + np.diag(self.betas, 1) + np.diag(self.betas, -1)
        return np.linalg.eigh(Tm)


def lanczos(matvec: Callable[[np.ndarray], np.ndarray], v0: np.ndarray, steps: int,
            restart_rng: np.random.Generator | None = None,
            callback: Callable[[LanczosResult], bool] | None = None) -> LanczosResult:
    """Lanczos with full reorthogonalization.

    On breakdown (invariant subspace found) the iteration restarts from a
    random vector orthogonal to the basis if ``restart_rng`` is given and
    stops otherwise.  ``callback`` is called after every step and may
    return True to stop early.
    """
    dim = v0.shape[0]
    steps = min(steps, dim)
    Q = np.zeros((steps, dim))
    alphas, betas = [], []
    q = v0 / np.linalg.norm(v0)
    for j in range(steps):
        Q[j] = q
        w = matvec(q)
        a = float(q @ w)
        scale = float(np.linalg.norm(w))
        w = w - Q[:j + 1].T @ (Q[:j + 1] @ w)
        w = w - Q[:j + 1].T @ (Q[:j + 1] @ w)
        alphas.append(a)
        b = float(np.linalg.norm(w))
        done = j + 1 == steps
        if b <= 1e-10 * max(scale, abs(a), 1e-300):
            if done or restart_rng is None:
                res = LanczosResult(np.array(alphas), np.array(betas), Q[:j + 1])
                if callback is not None:
                    callback(res)
                return res
            w = restart_rng.standard_normal(dim)
            w = w - Q[:j + 1].T @ (Q[:j + 1] @ w)
            w = w - Q[:j + 1].T @ (Q[:j + 1] @ w)
            q = w / np.linalg.norm(w)
            b = 0.0
        else:
            q = w / b
        res = LanczosResult(np.array(alphas), np.array(betas), Q[:j + 1])
        if callback is not None and callback(res):
            return res
        if not done:
            betas.append(b)
    return LanczosResult(np.array(alphas), np.array(betas), Q[:len(alphas)])


def top_eigenvalues(oracle: GradientOracle, theta: np.ndarray, k: int, max_iters: int = 100,
                    tol: float = 1e-6, rng: nx.RngStream | None = None,
                    eps: float | None = None) -> list[float]:
    """Largest ``k`` Hessian eigenvalues, descending.

    Stops once every one of the current top-``k`` Ritz values moved by less
    than ``tol * max(1, |λ₁|)`` in the last step, or after ``max_iters``.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    theta = np.asarray(theta, dtype=np.float64)
    rng = rng or nx.RngStream(0)
    v0 = rng.substream("lanczos/start").generator.standard_normal(oracle.dim)
    prev: list[np.ndarray] = []

    def converged(res: LanczosResult) -> bool:
        top = res.ritz()[0][::-1][:k]
        stop = (len(prev) > 0 and top.size == k and prev[-1].size == k
                and np.max(np.abs(top - prev[-1])) < tol * max(1.0, abs(top[0])))
        prev.append(top)
        return bool(stop)

    res = lanczos(lambda x: hvp(oracle, theta, x, eps), v0, max_iters,
                  restart_rng=rng.substream("lanczos/restart").generator, callback=converged)
    if len(res.alphas) < k:
        raise ParameterError(f"k={k} exceeds the {len(res.alphas)} Lanczos iterations performed "
                             f"(max_iters={max_iters}, dim={oracle.dim})")
    vals = res.ritz()[0][::-1][:k]
    return [float(x) for x in vals]


def _merge_nodes(nodes: np.ndarray, weights: np.ndarray, rtol: float = 1e-9):
    order = np.argsort(nodes, kind="stable")
    nodes, weights = nodes[order], weights[order]
    scale = max(1.0, float(np.max(np.abs(nodes)))) if nodes.size else 1.0
    out_n, out_w = [], []
    for x, w in zip(nodes, weights):
        if out_n and abs(x - out_n[-1]) <= rtol * scale:
            total = out_w[-1] + w
            if total > 0:
                out_n[-1] = (out_n[-1] * out_w[-1] + x * w) / total
            out_w[-1] = total
        else:
            out_n.append(float(x))
            out_w.append(float(w))
    return np.array(out_n), np.array(out_w)


def spectral_density(oracle: GradientOracle, theta: np.ndarray, lanczos_steps: int, n_probes: int,
                     rng: nx.RngStream, eps: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stochastic Lanczos quadrature of the Hessian eigenvalue density.

    Returns sorted ``(nodes, weights)`` with weights summing to one; the
    first moment ``Σ wᵢ·nodeᵢ`` estimates ``Tr(H)/P``.
    """
    if lanczos_steps < 2:
        raise ParameterError(f"lanczos_steps must be >= 2, got {lanczos_steps}")
    if n_probes < 1:
        raise ParameterError(f"n_probes must be >= 1, got {n_probes}")
    theta = np.asarray(theta, dtype=np.float64)
    all_nodes, all_weights = [], []
    for j in range(n_probes):
        v = nx.sample_rademacher(rng.substream(f"slq/{j}"), oracle.dim)
        res = lanczos(lambda x: hvp(oracle, theta, x, eps), v, lanczos_steps)
        vals, vecs = res.ritz()
        all_nodes.append(vals)
        all_weights.append(vecs[0] ** 2 / n_probes)
    nodes, weights = _merge_nodes(np.concatenate(all_nodes), np.concatenate(all_weights))
    return nodes, weights / weights.sum()


@dataclass
class HessianReport:
    trace_estimate: float
    trace_stderr: float
    top_eigenvalues: list
    density_nodes: list = field(default_factory=list)
    density_weights: list = field(default_factory=list)
    param_count: int = 0
    n_probes: int = 0

    def to_json(self) -> dict:
        return {
            "trace": self.trace_estimate,
            "trace_stderr": self.trace_stderr,
            "top_eigenvalues": list(self.top_eigenvalues),
            "density": [{"node": float(n), "weight": float(w)}
                        for n, w in zip(self.density_nodes, self.density_weights)],
            "param_count": self.param_count,
            "n_probes": self.n_probes,
        }


def hessian_report(oracle: GradientOracle, theta: np.ndarray, rng: nx.RngStream, k: int = 50,
                   n_probes: int = 100, max_iters: int = 100, tol: float = 1e-4,
                   lanczos_steps: int = 30, density_probes: int = 1,
                   eps: float | None = None) -> HessianReport:
    """Trace, top eigenvalues and density in one call.

    ``density_probes = 0`` skips the density estimate.
    """
    theta = np.asarray(theta, dtype=np.float64)
    trace, stderr = hutchinson_trace(oracle, theta, n_probes, rng.substream("trace"), eps)
    top = top_eigenvalues(oracle, theta, k, max_iters, tol, rng.substream("top"), eps)
    nodes, weights = (np.array([]), np.array([]))
    if density_probes > 0:
        nodes, weights = spectral_density(oracle, theta, lanczos_steps, density_probes,
                                          rng.substream("density"), eps)
    return HessianReport(trace, stderr, top, nodes.tolist(), weights.tolist(), oracle.dim, n_probes)
