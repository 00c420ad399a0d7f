"""Hard staircase quantizer, the smooth TanhSum staircase, and the learnable
soft quantizer that compresses trained vector step-sizes.

A hard quantizer with 2l+1 levels {-l G, ..., -G, 0, G, ..., l G} switches at
thresholds (t - 1/2) G and saturates beyond the bound Gb = l G - G/2. The
TanhSum staircase

    (Gb / 2l) * sum_{t=1}^{2l} tanh(sigma (x + Gb - (t-1) G))

is smooth, strictly increasing, odd, and converges pointwise (away from the
thresholds) to a hard staircase as sigma grows. Giving every tanh term its own
gain/shift parameters {w1, w2, b1, b2} yields a nonuniform quantizer whose
shape is trained by gradient descent through the network, annealing sigma
upward until the staircase is effectively discrete.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .network import NetworkParams, forward_batch
from .training import TrainingDivergedError, _backward_arrays, adam_delta, nmse

# ---------------------------------------------------------------------------
# hard quantizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HardQuantizerSpec:
    """Uniform staircase with 2l+1 levels spaced G apart."""

    l: int
    step: float

    def __post_init__(self):
        if self.l < 1 or self.step <= 0:
            raise ValueError("need l >= 1 and a positive step length")

    @property
    def bound(self) -> float:
        return self.l * self.step - self.step / 2.0

    @property
    def levels(self) -> np.ndarray:
        return self.step * np.arange(1, self.l + 1)

    @property
    def thresholds(self) -> np.ndarray:
        # T_1 = G/2, T_t = (G_{t-1} + G_t)/2; the closing threshold is +inf
        return self.step * (np.arange(1, self.l + 1) - 0.5)

    @classmethod
    def from_bound(cls, l: int, bound: float) -> "HardQuantizerSpec":
        return cls(l, 2.0 * bound / (2 * l - 1))


def hard_quantize(x, spec: HardQuantizerSpec):
    """Map to the nearest level; |x| <= G/2 maps to 0. Odd, monotone, idempotent."""
    x = np.asarray(x, dtype=float)
    mag = np.abs(x)
    # number of thresholds strictly below |x|; |x| == T_t belongs to the lower stair
    idx = np.searchsorted(spec.thresholds, mag, side="left")
    levels = np.concatenate([[0.0], spec.levels])
    out = np.sign(x) * levels[idx]
    return out if out.shape else float(out)


# ---------------------------------------------------------------------------
# smooth staircases
# ---------------------------------------------------------------------------


def tanh_sum(x, sigma: float, l: int, bound: float):
    """Smooth staircase of 2l shifted tanh steps with total amplitude ``bound``."""
    if sigma <= 0 or l < 1:
        raise ValueError("need sigma > 0 and l >= 1")
    x = np.asarray(x, dtype=float)
    step = 2.0 * bound / (2 * l - 1)
    offsets = bound - np.arange(2 * l) * step
    out = (bound / (2 * l)) * np.tanh(sigma * (x[..., None] + offsets)).sum(axis=-1)
    return out if out.shape else float(out)


def tanh_sum_limit(x, l: int, bound: float):
    """Pointwise sigma -> inf limit of tanh_sum: the hard staircase it approaches."""
    x = np.asarray(x, dtype=float)
    step = 2.0 * bound / (2 * l - 1)
    offsets = bound - np.arange(2 * l) * step
    out = (bound / (2 * l)) * np.sign(x[..., None] + offsets).sum(axis=-1)
    return out if out.shape else float(out)


@dataclass
class SoftQuantizerParams:
    """Per-segment shape parameters of the learnable staircase."""

    w1: np.ndarray
    w2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    sigma: float
    l: int
    bound: float

    def __post_init__(self):
        n = 2 * self.l
        for name in ("w1", "w2", "b1", "b2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
            setattr(self, name, arr)

    @property
    def step(self) -> float:
        return 2.0 * self.bound / (2 * self.l - 1)

    @property
    def offsets(self) -> np.ndarray:
        return self.bound - np.arange(2 * self.l) * self.step

    @classmethod
    def tanh_sum_shape(cls, l: int, bound: float, sigma: float) -> "SoftQuantizerParams":
        """Initialization that makes the soft quantizer coincide with tanh_sum."""
        n = 2 * l
        return cls(
            np.full(n, bound / (2 * l)),
            np.ones(n),
            np.zeros(n),
            np.zeros(n),
            sigma,
            l,
            bound,
        )

    def copy(self) -> "SoftQuantizerParams":
        return replace(
            self, w1=self.w1.copy(), w2=self.w2.copy(), b1=self.b1.copy(), b2=self.b2.copy()
        )


def _soft_args(x, phi: SoftQuantizerParams):
    x = np.asarray(x, dtype=float)
    return phi.sigma * (phi.w2 * x[..., None] + phi.offsets + phi.b1)


def soft_quantize(x, phi: SoftQuantizerParams):
    """sum_t w1_t tanh(sigma (w2_t x + Gb - (t-1) G + b1_t)) + b2_t, elementwise in x."""
    out = (phi.w1 * np.tanh(_soft_args(x, phi)) + phi.b2).sum(axis=-1)
    return out if out.shape else float(out)


def soft_quantize_partials(x, phi: SoftQuantizerParams):
    """Partial derivatives of soft_quantize w.r.t. each of {w1, w2, b1, b2}.

    Returns four arrays of shape x.shape + (2l,).
    """
    x = np.asarray(x, dtype=float)
    t = np.tanh(_soft_args(x, phi))
    sech2 = 1.0 - t**2
    d_w1 = t
    d_b1 = phi.w1 * sech2 * phi.sigma
    d_w2 = d_b1 * x[..., None]
    d_b2 = np.ones_like(t)
    return d_w1, d_w2, d_b1, d_b2


# ---------------------------------------------------------------------------
# snapping the converged soft quantizer to a discrete staircase
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SnappedQuantizer:
    """Piecewise-constant staircase: len(levels) == len(thresholds) + 1."""

    thresholds: np.ndarray
    levels: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.levels[np.searchsorted(self.thresholds, x, side="left")]
        return out if out.shape else float(out)


def snap_soft_quantizer(phi: SoftQuantizerParams) -> SnappedQuantizer:
    """The sigma -> inf limit of a trained soft quantizer.

    Each tanh term switches where its argument crosses zero, i.e. at
    x_t = ((t-1) G - Gb - b1_t) / w2_t; between consecutive switch points the
    limit is constant, so the plateau levels are read off midway between them.
    """
    usable = np.abs(phi.w2) > 1e-12
    thresholds = np.sort((-phi.offsets[usable] - phi.b1[usable]) / phi.w2[usable])
    if thresholds.size == 0:
        return SnappedQuantizer(np.array([]), np.array([float(np.sum(phi.b2))]))
    pad = max(phi.step, 1.0)
    probes = np.concatenate(
        [
            [thresholds[0] - pad],
            (thresholds[:-1] + thresholds[1:]) / 2.0,
            [thresholds[-1] + pad],
        ]
    )
    signs = np.sign(phi.w2 * probes[:, None] + phi.offsets + phi.b1)
    levels = (phi.w1 * signs + phi.b2).sum(axis=1)
    return SnappedQuantizer(thresholds, levels)


def quantize_network(params: NetworkParams, q) -> NetworkParams:
    """Pass every step-size entry through the quantizer function ``q``."""
    out = params.copy()
    out.alphas = np.asarray(q(out.alphas), dtype=float)
    out.betas = np.asarray(q(out.betas), dtype=float)
    return out


# ---------------------------------------------------------------------------
# annealed quantizer training
# ---------------------------------------------------------------------------


def _flatten_params(params: NetworkParams) -> np.ndarray:
    return np.concatenate([params.alphas.ravel(), params.betas.ravel()])


def _unflatten_params(flat: np.ndarray, params: NetworkParams) -> NetworkParams:
    n = params.alphas.size
    out = params.copy()
    out.alphas = flat[:n].reshape(params.alphas.shape)
    out.betas = flat[n:].reshape(params.betas.shape)
    return out


def _quantized_val_nmse_db(theta, phi, template, a, b, labels) -> float:
    q_params = _unflatten_params(soft_quantize(theta, phi), template)
    return nmse(forward_batch(q_params, a, b), labels).db


def train_quantizer(
    net_params: NetworkParams,
    data,
    l: int,
    bound: float | None = None,
    anneal_sigmas: tuple = (10.0, 50.0, 100.0),
    learning_rates: tuple = (1e-4, 5e-5, 1e-5),
    batch_size: int = 500,
    validation_fraction: float = 0.1,
    patience: int = 3,
    min_delta_db: float = 0.01,
    max_epochs_per_stage: int = 20,
    seed: int = 0,
    log_hook=None,
):
    """Learn the soft-quantizer shape for a trained vector-step network.

    The step-sizes stay fixed; only the staircase parameters move, minimizing
    the MSE of the network run with soft-quantized step-sizes. Annealing visits
    (sigma, lr) pairs in order, each stage stopping when validation NMSE stops
    decreasing. The converged staircase is snapped to its discrete limit, which
    is applied to the step-sizes to produce the quantized network.

    ``data`` is (a, b, labels) arrays or a Dataset. Returns
    (phi, quantized params, snapped staircase, log records).
    """
    if net_params.mode != "vector":
        raise ValueError("quantizer training expects vector-mode parameters")
    if len(anneal_sigmas) != len(learning_rates):
        raise ValueError("need one learning rate per annealing stage")
    from .datasets import Dataset, dataset_systems

    a, b, labels = dataset_systems(data) if isinstance(data, Dataset) else data
    theta = _flatten_params(net_params)
    if bound is None:
        bound = float(np.max(np.abs(theta)))
        if bound == 0:
            raise ValueError("all step-sizes are zero; nothing to quantize")
    phi = SoftQuantizerParams.tanh_sum_shape(l, bound, anneal_sigmas[0])
    log: list[dict] = []

    def emit(record):
        log.append(record)
        if log_hook is not None:
            log_hook(record)

    m = b.shape[0]
    n_val = max(1, int(round(m * validation_fraction)))
    perm = np.random.default_rng([seed, 7919]).permutation(m)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    a_tr, b_tr, s_tr = a[train_idx], b[train_idx], labels[train_idx]
    a_va, b_va, s_va = a[val_idx], b[val_idx], labels[val_idx]

    for stage, (sigma, lr) in enumerate(zip(anneal_sigmas, learning_rates)):
        phi.sigma = sigma
        moments = {name: (np.zeros(2 * l), np.zeros(2 * l)) for name in "w1 w2 b1 b2".split()}
        adam_t = 0
        best_db = _quantized_val_nmse_db(theta, phi, net_params, a_va, b_va, s_va)
        best = phi.copy()
        bad_epochs = 0
        epoch_rng = np.random.default_rng([seed, stage])
        for epoch in range(1, max_epochs_per_stage + 1):
            order = epoch_rng.permutation(len(train_idx))
            for start in range(0, len(order), batch_size):
                sel = order[start : start + batch_size]
                theta_q = soft_quantize(theta, phi)
                q_params = _unflatten_params(theta_q, net_params)
                out, d_hist, ad_hist = forward_batch(
                    q_params, a_tr[sel], b_tr[sel], want_trace=True
                )
                if not np.isfinite(out).all():
                    raise TrainingDivergedError(
                        f"non-finite activations at sigma={sigma}, epoch {epoch}"
                    )
                g_a, g_b = _backward_arrays(
                    q_params.alphas,
                    q_params.betas,
                    False,
                    a_tr[sel],
                    s_tr[sel],
                    out,
                    d_hist,
                    ad_hist,
                )
                d_theta_q = np.concatenate([g_a.ravel(), g_b.ravel()])
                partials = soft_quantize_partials(theta, phi)
                adam_t += 1
                for name, part in zip(("w1", "w2", "b1", "b2"), partials):
                    grad = part.T @ d_theta_q  # chain rule summed over parameter entries
                    m_t, v_t = moments[name]
                    setattr(
                        phi, name, getattr(phi, name) - adam_delta(m_t, v_t, grad, lr, adam_t)
                    )
            val_db = _quantized_val_nmse_db(theta, phi, net_params, a_va, b_va, s_va)
            emit(
                {
                    "event": "quantizer_epoch",
                    "sigma": sigma,
                    "lr": lr,
                    "epoch": epoch,
                    "val_nmse_db": val_db,
                }
            )
            if val_db < best_db - min_delta_db:
                best_db = val_db
                best = phi.copy()
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= patience:
                    break
        phi = best
        emit({"event": "quantizer_stage_done", "sigma": sigma, "val_nmse_db": best_db})

    snapped = snap_soft_quantizer(phi)
    quantized = quantize_network(net_params, snapped)
    distinct = np.unique(np.concatenate([quantized.alphas.ravel(), quantized.betas.ravel()]))
    if distinct.size <= 1:
        warnings.warn("quantizer collapsed all step-sizes onto a single level")
    quantized.meta.update({"quantizer": {"l": l, "bound": bound, "sigma_final": phi.sigma}})
    return phi, quantized, snapped, log
