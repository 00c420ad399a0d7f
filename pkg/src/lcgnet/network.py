"""Unfolded conjugate-gradient network: parameters and forward passes.

One layer mirrors one CG iteration with the data-dependent step-sizes replaced
by learned values, either a scalar pair (alpha, beta) per layer or a vector
pair applied elementwise (Hadamard). Starting from s=0, r=d=b, layer i applies

    s <- s + alpha_i * d
    r <- r - alpha_i * (A d)
    d <- r + beta_i * d

so the map b -> s is linear for fixed A and parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detectors import LinearSystem, build_system
from .mimo import SymbolAlphabet, demap_min_distance

MODES = ("scalar", "vector")


@dataclass
class NetworkParams:
    """Per-layer step-sizes; alphas/betas have shape (L,) or (L, 2*nt)."""

    mode: str
    nt: int
    alphas: np.ndarray
    betas: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.alphas = np.asarray(self.alphas, dtype=float)
        self.betas = np.asarray(self.betas, dtype=float)
        expected_ndim = 1 if self.mode == "scalar" else 2
        if self.alphas.ndim != expected_ndim or self.alphas.shape != self.betas.shape:
            raise ValueError(
                f"{self.mode} parameters need shape "
                f"{'(L,)' if expected_ndim == 1 else '(L, 2*nt)'}; "
                f"got alphas {self.alphas.shape}, betas {self.betas.shape}"
            )
        if self.mode == "vector" and self.alphas.shape[1] != 2 * self.nt:
            raise ValueError(
                f"vector step-sizes must have length {2 * self.nt}, got {self.alphas.shape[1]}"
            )
        if not (np.isfinite(self.alphas).all() and np.isfinite(self.betas).all()):
            raise ValueError("step-sizes must be finite")

    @property
    def num_layers(self) -> int:
        return self.alphas.shape[0]

    @classmethod
    def zeros(cls, mode: str, nt: int, num_layers: int, meta: dict | None = None):
        shape = (num_layers,) if mode == "scalar" else (num_layers, 2 * nt)
        return cls(mode, nt, np.zeros(shape), np.zeros(shape), meta or {})

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.mode, self.nt, self.alphas.copy(), self.betas.copy(), dict(self.meta)
        )

    def prefix(self, num_layers: int) -> "NetworkParams":
        """The sub-network made of the first ``num_layers`` layers."""
        return NetworkParams(
            self.mode,
            self.nt,
            self.alphas[:num_layers].copy(),
            self.betas[:num_layers].copy(),
            dict(self.meta),
        )


@dataclass
class ForwardTrace:
    """All intermediates of one forward pass: 4*(L+1) vectors of length 2*nt."""

    s_hist: np.ndarray  # (L+1, K) iterates
    r_hist: np.ndarray  # (L+1, K) residual-like states
    d_hist: np.ndarray  # (L+1, K) directions
    ad_hist: np.ndarray  # (L+1, K) A @ d at every stage

    @property
    def num_layers(self) -> int:
        return self.s_hist.shape[0] - 1


def _check_dims(params: NetworkParams, system: LinearSystem):
    k = 2 * params.nt
    if system.b.shape != (k,) or system.a.shape != (k, k):
        raise ValueError(
            f"system of size {system.b.shape} does not match 2*nt = {k}"
        )


def _run_layers(alphas, betas, a, b):
    s = np.zeros_like(b)
    r = b.copy()
    d = b.copy()
    for alpha, beta in zip(alphas, betas):
        ad = a @ d
        s = s + alpha * d
        r = r - alpha * ad
        d = r + beta * d
    return s


def forward_scalar(params: NetworkParams, system: LinearSystem) -> np.ndarray:
    if params.mode != "scalar":
        raise ValueError("forward_scalar requires scalar-mode parameters")
    _check_dims(params, system)
    return _run_layers(params.alphas, params.betas, system.a, system.b)


def forward_vector(params: NetworkParams, system: LinearSystem) -> np.ndarray:
    if params.mode != "vector":
        raise ValueError("forward_vector requires vector-mode parameters")
    _check_dims(params, system)
    return _run_layers(params.alphas, params.betas, system.a, system.b)


def forward(params: NetworkParams, system: LinearSystem) -> np.ndarray:
    _check_dims(params, system)
    return _run_layers(params.alphas, params.betas, system.a, system.b)


def forward_with_trace(params: NetworkParams, system: LinearSystem):
    """Forward pass recording every intermediate needed by the adjoint pass."""
    _check_dims(params, system)
    a, b = system.a, system.b
    n = params.num_layers
    k = b.shape[0]
    s_hist = np.zeros((n + 1, k))
    r_hist = np.zeros((n + 1, k))
    d_hist = np.zeros((n + 1, k))
    ad_hist = np.zeros((n + 1, k))
    s = np.zeros_like(b)
    r = b.copy()
    d = b.copy()
    s_hist[0], r_hist[0], d_hist[0] = s, r, d
    for i in range(n):
        ad = a @ d
        ad_hist[i] = ad
        s = s + params.alphas[i] * d
        r = r - params.alphas[i] * ad
        d = r + params.betas[i] * d
        s_hist[i + 1], r_hist[i + 1], d_hist[i + 1] = s, r, d
    ad_hist[n] = a @ d
    return s, ForwardTrace(s_hist, r_hist, d_hist, ad_hist)


def forward_batch(params: NetworkParams, a: np.ndarray, b: np.ndarray, want_trace=False):
    """Vectorized forward over stacked systems a (M,K,K), b (M,K).

    With ``want_trace`` also returns the per-layer (d, A d) stacks consumed by
    the batched adjoint.
    """
    n = params.num_layers
    s = np.zeros_like(b)
    r = b.copy()
    d = b.copy()
    d_hist = np.zeros((n,) + b.shape) if want_trace else None
    ad_hist = np.zeros((n,) + b.shape) if want_trace else None
    for i in range(n):
        ad = np.matmul(a, d[..., None])[..., 0]
        if want_trace:
            d_hist[i] = d
            ad_hist[i] = ad
        alpha, beta = params.alphas[i], params.betas[i]
        s = s + alpha * d
        r = r - alpha * ad
        d = r + beta * d
    if want_trace:
        return s, d_hist, ad_hist
    return s


def detect(
    params: NetworkParams,
    h_r: np.ndarray,
    y_r: np.ndarray,
    sigma2: float,
    alph: SymbolAlphabet,
):
    """End-to-end pipeline: normal equations, forward pass, hard decisions.

    Returns (bits, raw estimate).
    """
    system = build_system(h_r, y_r, sigma2)
    s_hat = forward(params, system)
    _, bits = demap_min_distance(s_hat, alph)
    return bits, s_hat
