"""Classical baseline detectors: ZF, LMMSE, conjugate-gradient, and brute-force ML.

All detectors operate on the real embedding. The LMMSE normal equations are
a = H_r^T H_r + sigma^2 I (symmetrized explicitly) and b = H_r^T y_r; the CG
detector solves them iteratively and matches the LMMSE solution after at most
2Nt iterations on well-conditioned systems.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .mimo import SymbolAlphabet, real_embed_vector

ZF_CONDITION_LIMIT = 1e12
ML_SEARCH_LIMIT = 2**20


class CgBreakdownError(RuntimeError):
    """Raised when the CG curvature term r^T A d turns non-positive (A not PD)."""


@dataclass
class LinearSystem:
    a: np.ndarray  # (K, K) symmetric positive definite
    b: np.ndarray  # (K,)
    sigma2: float = 0.0


@dataclass
class CgState:
    s_hat: np.ndarray
    residual: np.ndarray
    direction: np.ndarray
    iter: int


@dataclass
class CgTrace:
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    res_norms: list = field(default_factory=list)
    states: list = field(default_factory=list)

    @property
    def n_iters(self) -> int:
        return len(self.alphas)


def build_system(h_r: np.ndarray, y_r: np.ndarray, sigma2: float) -> LinearSystem:
    """Normal equations of the LMMSE filter in real form."""
    h_r = np.asarray(h_r, dtype=float)
    y_r = np.asarray(y_r, dtype=float)
    if h_r.ndim != 2 or y_r.shape != (h_r.shape[0],):
        raise ValueError(f"shape mismatch: h {h_r.shape}, y {y_r.shape}")
    if not (np.isfinite(h_r).all() and np.isfinite(y_r).all()):
        raise ValueError("non-finite entries in h or y")
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    a = h_r.T @ h_r
    a[np.diag_indices_from(a)] += sigma2
    a = 0.5 * (a + a.T)
    return LinearSystem(a, h_r.T @ y_r, sigma2)


def build_systems(h: np.ndarray, y: np.ndarray, sigma2) -> tuple[np.ndarray, np.ndarray]:
    """Batched (a, b) arrays for stacked channels h (M,2Nr,2Nt) and outputs y (M,2Nr)."""
    a = np.einsum("mij,mik->mjk", h, h)
    k = a.shape[1]
    sig = np.broadcast_to(np.asarray(sigma2, dtype=float), (a.shape[0],))
    a[:, np.arange(k), np.arange(k)] += sig[:, None]
    a = 0.5 * (a + np.swapaxes(a, 1, 2))
    b = np.einsum("mij,mi->mj", h, y)
    return a, b


def zf_detect(h_r: np.ndarray, y_r: np.ndarray) -> np.ndarray:
    """Zero-forcing estimate (H^T H)^-1 H^T y via Cholesky, guarded by a condition check."""
    h_r = np.asarray(h_r, dtype=float)
    hth = h_r.T @ h_r
    cond = np.linalg.cond(hth)
    if not np.isfinite(cond) or cond > ZF_CONDITION_LIMIT:
        raise np.linalg.LinAlgError(f"H^T H condition estimate {cond:.3e} exceeds limit")
    return cho_solve(cho_factor(hth), h_r.T @ y_r)


def lmmse_detect(h_r: np.ndarray, y_r: np.ndarray, sigma2: float) -> np.ndarray:
    """LMMSE estimate, the direct solve of the normal equations."""
    return lmmse_solve(build_system(h_r, y_r, sigma2))


def lmmse_solve(system: LinearSystem) -> np.ndarray:
    # cho_factor raises LinAlgError when the filtering matrix is not PD
    return cho_solve(cho_factor(system.a), system.b)


def cg_detect(
    system: LinearSystem,
    max_iters: int,
    tol: float = 1e-10,
    keep_states: bool = False,
    check_residuals: bool = False,
) -> tuple[np.ndarray, CgTrace]:
    """Conjugate-gradient solve of a SPD system.

    Starts from s=0, r=d=b and stops after ``max_iters`` iterations or once
    ||r|| <= tol * ||b||. Returns the estimate plus a per-iteration trace of
    (alpha, beta, ||r||); with ``keep_states`` the full iterates are recorded.
    ``check_residuals`` re-verifies r = b - A s at every step (debug aid).
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    a, b = system.a, system.b
    s = np.zeros_like(b)
    r = b.copy()
    d = r.copy()
    trace = CgTrace()
    if keep_states:
        trace.states.append(CgState(s.copy(), r.copy(), d.copy(), 0))
    b_norm = float(np.linalg.norm(b))
    rho = float(r @ r)
    for i in range(max_iters):
        if np.sqrt(rho) <= tol * b_norm:
            break
        ad = a @ d
        curvature = float(r @ ad)
        if curvature <= 0.0:
            raise CgBreakdownError(
                f"r^T A d = {curvature:.3e} at iteration {i}; system is not positive definite"
            )
        alpha = rho / curvature
        s = s + alpha * d
        r = r - alpha * ad
        rho_next = float(r @ r)
        beta = rho_next / rho if rho > 0 else 0.0
        d = r + beta * d
        rho = rho_next
        trace.alphas.append(alpha)
        trace.betas.append(beta)
        trace.res_norms.append(float(np.sqrt(rho_next)))
        if keep_states:
            trace.states.append(CgState(s.copy(), r.copy(), d.copy(), i + 1))
        if check_residuals:
            drift = np.linalg.norm(b - a @ s - r)
            assert drift <= 1e-8 * max(b_norm, 1e-300), f"residual drift {drift:.3e}"
    return s, trace


def cg_solve_batch(a: np.ndarray, b: np.ndarray, n_iters: int) -> np.ndarray:
    """Fixed-iteration CG on stacked systems a (M,K,K), b (M,K).

    Samples whose residual energy underflows are frozen instead of dividing
    by zero; intended for Monte-Carlo sweeps, not for breakdown diagnosis.
    """
    s = np.zeros_like(b)
    r = b.copy()
    d = r.copy()
    rho = np.einsum("mk,mk->m", r, r)
    for _ in range(n_iters):
        ad = np.matmul(a, d[..., None])[..., 0]
        curv = np.einsum("mk,mk->m", r, ad)
        live = (rho > 1e-300) & (curv > 0)
        alpha = np.where(live, rho / np.where(curv == 0, 1.0, curv), 0.0)
        s = s + alpha[:, None] * d
        r = r - alpha[:, None] * ad
        rho_next = np.einsum("mk,mk->m", r, r)
        beta = np.where(live, rho_next / np.where(rho == 0, 1.0, rho), 0.0)
        d = r + beta[:, None] * d
        rho = rho_next
    return s


def solve_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct solve of stacked systems (the batched LMMSE path)."""
    return np.linalg.solve(a, b[..., None])[..., 0]


def ml_detect(
    h_r: np.ndarray, y_r: np.ndarray, alph: SymbolAlphabet, nt: int
) -> np.ndarray:
    """Exhaustive maximum-likelihood search over all |A|^Nt symbol vectors.

    Returns the real-embedded minimizer of ||y - H s||^2; ties resolve to the
    lexicographically first candidate in symbol-index order.
    """
    n_points = len(alph.points)
    n_candidates = n_points**nt
    if n_candidates > ML_SEARCH_LIMIT:
        raise ValueError(f"search space {n_candidates} exceeds limit {ML_SEARCH_LIMIT}")
    h_r = np.asarray(h_r, dtype=float)
    y_r = np.asarray(y_r, dtype=float)
    best_cost = np.inf
    best = None
    chunk = 4096
    candidates = itertools.product(range(n_points), repeat=nt)
    while True:
        block = list(itertools.islice(candidates, chunk))
        if not block:
            break
        s_c = alph.points[np.asarray(block)]  # (C, nt) complex
        s_r = np.concatenate([s_c.real, s_c.imag], axis=1)
        resid = y_r[None, :] - s_r @ h_r.T
        costs = np.einsum("ck,ck->c", resid, resid)
        j = int(np.argmin(costs))
        if costs[j] < best_cost:  # strict: first minimum wins overall
            best_cost = float(costs[j])
            best = s_r[j].copy()
    return best


def genie_detect(s_true: np.ndarray) -> np.ndarray:
    """Oracle detector that returns the transmitted label (for harness sanity checks)."""
    return np.asarray(s_true, dtype=float).copy()


def coinflip_detect(nt: int, alph: SymbolAlphabet, rng) -> np.ndarray:
    """Chance-level detector drawing a uniformly random symbol vector."""
    idx = rng.integers(0, len(alph.points), size=nt)
    return real_embed_vector(alph.points[idx])
