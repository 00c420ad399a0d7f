"""Channel generation, modulation, noise injection and the real-valued embedding.

Complex quantities live in C^{Nr x Nt}; every detector and network in this
package works on the equivalent real embedding

    H_r = [[Re H, -Im H], [Im H, Re H]]   (2Nr x 2Nt)
    v_r = [Re v; Im v]                    (stacked halves)

which is linear: embed(H) @ embed(s) == embed(H @ s), and maps conjugate
transposition to plain transposition.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

# ---------------------------------------------------------------------------
# real <-> complex embedding
# ---------------------------------------------------------------------------


def real_embed_matrix(h: np.ndarray) -> np.ndarray:
    """Real 2Nr x 2Nt block embedding of a complex Nr x Nt matrix."""
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {h.shape}")
    re, im = h.real, h.imag
    return np.block([[re, -im], [im, re]])


def real_embed_vector(v: np.ndarray) -> np.ndarray:
    """Stack [Re(v); Im(v)] of a complex vector."""
    v = np.asarray(v, dtype=complex)
    return np.concatenate([v.real, v.imag], axis=-1)


def complex_from_real(v_r: np.ndarray) -> np.ndarray:
    """Inverse of real_embed_vector; works on the last axis of batched input."""
    v_r = np.asarray(v_r, dtype=float)
    n = v_r.shape[-1]
    if n % 2:
        raise ValueError("real-embedded vectors have even length")
    half = n // 2
    return v_r[..., :half] + 1j * v_r[..., half:]


# ---------------------------------------------------------------------------
# modulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SymbolAlphabet:
    """Unit-energy constellation; ``points[k]`` encodes bit pattern k (MSB first).

    The index order is also the canonical tie-break order for demapping.
    """

    name: str
    points: np.ndarray
    bits_per_symbol: int


_SQ2 = 1.0 / math.sqrt(2.0)

BPSK = SymbolAlphabet("bpsk", np.array([1.0 + 0.0j, -1.0 + 0.0j]), 1)
# Gray map: first bit sets the real sign, second bit the imaginary sign.
QPSK = SymbolAlphabet(
    "qpsk",
    np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) * _SQ2,
    2,
)

_ALPHABETS = {"bpsk": BPSK, "qpsk": QPSK}


def alphabet(name: str) -> SymbolAlphabet:
    try:
        return _ALPHABETS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown modulation {name!r}; choose from {sorted(_ALPHABETS)}")


def modulate(bits: np.ndarray, alph: SymbolAlphabet) -> np.ndarray:
    """Map a bit sequence to constellation symbols (MSB-first within a symbol)."""
    bits = np.asarray(bits, dtype=int)
    k = alph.bits_per_symbol
    if bits.size % k:
        raise ValueError(f"bit count {bits.size} not divisible by {k}")
    groups = bits.reshape(-1, k)
    weights = 1 << np.arange(k - 1, -1, -1)
    return alph.points[groups @ weights]


def bits_from_indices(idx: np.ndarray, alph: SymbolAlphabet) -> np.ndarray:
    """Expand symbol indices back into bits, inverse of the modulate() grouping."""
    k = alph.bits_per_symbol
    shifts = np.arange(k - 1, -1, -1)
    out = (idx[..., None] >> shifts) & 1
    return out.reshape(*idx.shape[:-1], -1) if idx.ndim > 1 else out.ravel()


def nearest_symbol_indices(z: np.ndarray, alph: SymbolAlphabet) -> np.ndarray:
    """Index of the closest constellation point; ties go to the lowest index."""
    d2 = np.abs(z[..., None] - alph.points) ** 2
    return np.argmin(d2, axis=-1)


def demap_min_distance(s_hat_r: np.ndarray, alph: SymbolAlphabet):
    """Hard decisions for a real-embedded estimate.

    Re-pairs the two halves of ``s_hat_r`` into Nt complex estimates, maps each
    to the nearest constellation point and returns (symbols, bits).
    """
    z = complex_from_real(s_hat_r)
    idx = nearest_symbol_indices(z, alph)
    return alph.points[idx], bits_from_indices(idx, alph)


# ---------------------------------------------------------------------------
# SNR convention and noise
# ---------------------------------------------------------------------------


def noise_variance(snr_db: float, nt: int, nr: int, symbol_energy: float = 1.0) -> float:
    """Per-entry complex noise variance for SNR = E||s||^2 / E||n||^2.

    With Nt unit-energy symbols and Nr receive antennas this pins
    sigma_n^2 = Nt * Es / (Nr * 10^(snr_db/10)); infinite SNR gives 0.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return nt * symbol_energy / (nr * 10.0 ** (snr_db / 10.0))


@dataclass(frozen=True)
class SnrSpec:
    snr_db: float
    sigma2: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("noise variance must be non-negative")

    @classmethod
    def for_system(cls, snr_db: float, nt: int, nr: int, symbol_energy: float = 1.0):
        return cls(snr_db, noise_variance(snr_db, nt, nr, symbol_energy))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def add_noise(y: np.ndarray, snr: SnrSpec, seed) -> np.ndarray:
    """Add circularly-symmetric complex Gaussian noise (variance snr.sigma2 per entry)."""
    y = np.asarray(y, dtype=complex)
    if snr.sigma2 == 0.0:
        return y.copy()
    rng = _as_rng(seed)
    scale = math.sqrt(snr.sigma2 / 2.0)
    return y + scale * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))


# ---------------------------------------------------------------------------
# channel models
# ---------------------------------------------------------------------------


def gen_rayleigh(nt: int, nr: int, seed) -> np.ndarray:
    """i.i.d. CN(0, 1/Nt) channel matrix of shape (nr, nt)."""
    if nt < 1 or nr < 1:
        raise ValueError("antenna counts must be positive")
    if nt > nr:
        warnings.warn(f"nt={nt} > nr={nr}: under-determined system", stacklevel=2)
    rng = _as_rng(seed)
    scale = math.sqrt(1.0 / (2.0 * nt))
    re = rng.standard_normal((nr, nt))
    im = rng.standard_normal((nr, nt))
    return scale * (re + 1j * im)


def exp_correlation(n: int, r: complex) -> np.ndarray:
    """Exponential correlation matrix with entries r^(j-i) above the diagonal.

    Hermitian with unit diagonal; positive semi-definite for |r| <= 1.
    """
    if abs(r) > 1:
        raise ValueError(f"|r| = {abs(r)} exceeds 1")
    powers = np.asarray(r, dtype=complex) ** np.arange(n)
    return toeplitz(np.conj(powers), powers)


def matrix_sqrt_psd(m: np.ndarray) -> np.ndarray:
    """Hermitian square root via eigendecomposition, clamping negative eigenvalues to 0."""
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def gen_correlated(nt: int, nr: int, r: complex, seed) -> np.ndarray:
    """Kronecker-correlated channel R_r^(1/2) U R_t^(1/2) with U i.i.d. CN(0, 1/Nt)."""
    if abs(r) >= 1:
        raise ValueError("correlation coefficient must satisfy |r| < 1")
    u = gen_rayleigh(nt, nr, seed)
    if r == 0:
        return u  # both correlation matrices are exactly the identity
    sq_r = matrix_sqrt_psd(exp_correlation(nr, r))
    sq_t = matrix_sqrt_psd(exp_correlation(nt, r))
    return sq_r @ u @ sq_t


def hardening_ratio(h: np.ndarray) -> float:
    """Mean |diag| over mean |off-diag| of H^H H; +inf when there is no off-diagonal mass.

    Scale-invariant; grows with the receive-array size as the Gram matrix
    concentrates toward a scaled identity.
    """
    h = np.asarray(h, dtype=complex)
    gram = np.abs(h.conj().T @ h)
    n = gram.shape[0]
    diag_mean = float(np.trace(gram)) / n
    if n == 1:
        return math.inf
    off_mean = float(gram.sum() - np.trace(gram)) / (n * n - n)
    if off_mean == 0.0:
        return math.inf
    return diag_mean / off_mean
