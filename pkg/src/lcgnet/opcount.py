"""Operation and memory accounting for the detectors.

Counts are real-multiplication tallies under the usual conversion: one complex
multiplication = 4 real multiplications, one complex division = 4 real
multiplications + 1 real division (RDiv), and scaling a complex entry by a
real scalar = 2 real multiplications. The per-iteration CG cost books each
update formula independently, so the matrix-vector product A d is charged in
both the step-size row and the residual row; the instrumented executions below
perform exactly the operations they charge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detectors import LinearSystem
from .network import NetworkParams


@dataclass(frozen=True)
class OpCount:
    real_mults: int
    real_divs: int

    def __add__(self, other: "OpCount") -> "OpCount":
        return OpCount(self.real_mults + other.real_mults, self.real_divs + other.real_divs)


def count_ops(detector: str, nt: int, layers_or_iters: int) -> OpCount:
    """Closed-form per-detection cost of LMMSE, CG (L iterations) or LcgNet (L layers)."""
    name = detector.lower()
    n = layers_or_iters
    if name == "lmmse":
        return OpCount(8 * nt**3 + 4 * nt**2, 0)
    if name == "cg":
        return OpCount(n * (8 * nt**2 + 14 * nt + 8), 2 * n)
    if name == "lcgnet":
        return OpCount(n * (4 * nt**2 + 6 * nt), 0)
    raise ValueError(f"unknown detector {detector!r}; choose lmmse, cg or lcgnet")


def cg_detect_counted(a: np.ndarray, b: np.ndarray, n_iters: int):
    """Complex-domain CG with an exact operation tally.

    ``a`` is Hermitian positive definite (Nt x Nt) and ``b`` complex. Executes
    the five update formulas of one iteration as separate steps — so A d is
    computed twice, once for the step-size and once for the residual — and
    charges each at the real-multiplication equivalents stated in the module
    docstring. The residual energy ||r||^2 is booked where it is produced, in
    the beta update; the initial ||b||^2 belongs to no iteration and is free.
    Returns (solution, OpCount).
    """
    k = b.shape[0]
    mults = 0
    divs = 0
    s = np.zeros(k, dtype=complex)
    r = b.astype(complex).copy()
    d = r.copy()
    rho = np.vdot(r, r).real
    for _ in range(n_iters):
        # alpha = r^H r / r^H A d: one matrix-vector product, one inner product, one division
        ad = a @ d
        mults += 4 * k * k
        denom = np.vdot(r, ad).real
        mults += 4 * k
        alpha = rho / denom
        mults += 4
        divs += 1
        # iterate update with a real step-size
        s = s + alpha * d
        mults += 2 * k
        # residual update, charged with its own matrix-vector product
        ad = a @ d
        mults += 4 * k * k
        r = r - alpha * ad
        mults += 2 * k
        # beta = ||r_new||^2 / ||r_old||^2
        rho_next = np.vdot(r, r).real
        mults += 4 * k
        beta = rho_next / rho
        mults += 4
        divs += 1
        # direction update
        d = r + beta * d
        mults += 2 * k
        rho = rho_next
    return s, OpCount(mults, divs)


def forward_counted(params: NetworkParams, system: LinearSystem):
    """Forward pass tallying the real multiplications it actually performs.

    Per layer: one K x K matrix-vector product (K^2 mults, K = 2*nt) and three
    vector scalings/Hadamard products (K mults each) — identical in scalar and
    vector mode. Returns (output, OpCount).
    """
    a, b = system.a, system.b
    k = b.shape[0]
    mults = 0
    s = np.zeros_like(b)
    r = b.copy()
    d = b.copy()
    for alpha, beta in zip(params.alphas, params.betas):
        ad = a @ d
        mults += k * k
        s = s + alpha * d
        mults += k
        r = r - alpha * ad
        mults += k
        d = r + beta * d
        mults += k
    return s, OpCount(mults, 0)


@dataclass(frozen=True)
class MemoryCost:
    """Per-detection working-set sizes in bits, plus parameter-only storage."""

    cg_bits: int
    scalar_net_bits: int
    vector_net_bits: int
    scalar_params_only_bits: int
    vector_params_only_bits: int


def memory_cost(nt: int, num_layers: int, bits_per_real: int) -> MemoryCost:
    """Storage accounting: CG keeps only (s, r, d, A); the networks add their step-sizes."""
    base = 6 * nt + 4 * nt**2
    return MemoryCost(
        cg_bits=base * bits_per_real,
        scalar_net_bits=(base + 4 * num_layers) * bits_per_real,
        vector_net_bits=(base + 4 * num_layers * nt) * bits_per_real,
        scalar_params_only_bits=4 * num_layers * bits_per_real,
        vector_params_only_bits=4 * num_layers * nt * bits_per_real,
    )
