"""Loss, hand-derived reverse-mode gradients, Adam, and the layer-wise curriculum.

The adjoint runs the layer recursion backwards. Writing g_s, g_r, g_d for the
cotangents of (s, r, d) after layer i and W = g_r + g_d (the cotangent reaching
the freshly updated residual), one layer back-propagates as

    d_alpha_i = d_i . g_s  -  (A d_i) . W          (elementwise in vector mode)
    d_beta_i  = d_i . g_d
    g_d <- alpha_i * g_s - A (alpha_i * W) + beta_i * g_d
    g_r <- W

with g_s = 2 (s_L - label) constant across layers because the iterate only
accumulates. Only d_i and A d_i are needed from the forward trace, so storing
A d avoids recomputing the dominant matrix-vector product.
"""

from __future__ import annotations

import json
import math
from collections import namedtuple
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .datasets import Dataset, dataset_systems
from .detectors import LinearSystem, build_system
from .mimo import noise_variance
from .network import ForwardTrace, NetworkParams, forward_batch


class TrainingDivergedError(RuntimeError):
    """Raised when the loss or a gradient turns non-finite during training."""


# ---------------------------------------------------------------------------
# losses and metrics
# ---------------------------------------------------------------------------


def _batch_arrays(batch):
    """Accept a Dataset or a sequence of Samples; return stacked (a, b, labels)."""
    if isinstance(batch, Dataset):
        return dataset_systems(batch)
    samples = list(batch)
    if not samples:
        raise ValueError("empty batch")
    systems = []
    for sm in samples:
        nt = sm.s_r.shape[0] // 2
        nr = sm.y_r.shape[0] // 2
        sig = noise_variance(sm.snr_db, nt, nr)
        systems.append(build_system(sm.h_r, sm.y_r, sig))
    a = np.stack([sy.a for sy in systems])
    b = np.stack([sy.b for sy in systems])
    labels = np.stack([sm.s_r for sm in samples])
    return a, b, labels


def mse_loss(params: NetworkParams, batch) -> float:
    """Mean squared error (1/M) sum ||s_m - s_hat_m||^2 over a batch of samples."""
    a, b, labels = _batch_arrays(batch)
    out = forward_batch(params, a, b)
    return float(np.mean(np.sum((labels - out) ** 2, axis=1)))


NmseResult = namedtuple("NmseResult", ["linear", "db"])


def nmse(estimates: np.ndarray, labels: np.ndarray) -> NmseResult:
    """Per-sample-averaged E[||s_hat - s||^2 / ||s||^2], linear and in dB.

    A perfect estimate reports -inf dB.
    """
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    labels = np.atleast_2d(np.asarray(labels, dtype=float))
    if estimates.shape != labels.shape:
        raise ValueError(f"shape mismatch {estimates.shape} vs {labels.shape}")
    label_energy = np.sum(labels**2, axis=1)
    if np.any(label_energy == 0):
        raise ValueError("zero-norm label")
    ratio = np.sum((estimates - labels) ** 2, axis=1) / label_energy
    linear = float(np.mean(ratio))
    db = 10.0 * math.log10(linear) if linear > 0 else -math.inf
    return NmseResult(linear, db)


# ---------------------------------------------------------------------------
# reverse-mode gradients
# ---------------------------------------------------------------------------


@dataclass
class GradientSet:
    d_alphas: np.ndarray
    d_betas: np.ndarray


def _backward_arrays(alphas, betas, scalar_mode, a, labels, s_out, d_hist, ad_hist):
    """Batch-mean gradients of (1/M) sum ||label - s_L||^2; batched over axis 0."""
    n = len(alphas)
    g_s = 2.0 * (s_out - labels)
    g_r = np.zeros_like(g_s)
    g_d = np.zeros_like(g_s)
    d_alphas = np.zeros_like(np.asarray(alphas, dtype=float))
    d_betas = np.zeros_like(d_alphas)
    for i in range(n - 1, -1, -1):
        w = g_r + g_d
        contrib_a = d_hist[i] * g_s - ad_hist[i] * w
        contrib_b = d_hist[i] * g_d
        if scalar_mode:
            d_alphas[i] = contrib_a.sum(axis=-1).mean(axis=0)
            d_betas[i] = contrib_b.sum(axis=-1).mean(axis=0)
        else:
            d_alphas[i] = contrib_a.mean(axis=0)
            d_betas[i] = contrib_b.mean(axis=0)
        aw = np.matmul(a, (alphas[i] * w)[..., None])[..., 0]
        g_d = alphas[i] * g_s - aw + betas[i] * g_d
        g_r = w
    return d_alphas, d_betas


def backward(
    params: NetworkParams,
    system: LinearSystem,
    label: np.ndarray,
    trace: ForwardTrace,
) -> GradientSet:
    """Exact gradients of the per-sample squared error ||label - s_L||^2."""
    if trace.num_layers != params.num_layers:
        raise ValueError(
            f"trace has {trace.num_layers} layers, params {params.num_layers}"
        )
    if trace.s_hist.shape[1] != 2 * params.nt:
        raise ValueError("trace dimension does not match params")
    d_alphas, d_betas = _backward_arrays(
        params.alphas,
        params.betas,
        params.mode == "scalar",
        system.a[None],
        np.asarray(label, dtype=float)[None],
        trace.s_hist[-1][None],
        trace.d_hist[:-1, None, :],
        trace.ad_hist[:-1, None, :],
    )
    return GradientSet(d_alphas, d_betas)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Moment estimates shaped like the (alphas, betas) arrays they update."""

    m_alphas: np.ndarray
    v_alphas: np.ndarray
    m_betas: np.ndarray
    v_betas: np.ndarray
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    @classmethod
    def for_params(cls, params: NetworkParams, lr: float, **hyper):
        return cls(
            np.zeros_like(params.alphas),
            np.zeros_like(params.alphas),
            np.zeros_like(params.betas),
            np.zeros_like(params.betas),
            lr,
            **hyper,
        )


def adam_delta(m, v, grad, lr, t, beta1=0.9, beta2=0.999, epsilon=1e-8):
    """Bias-corrected Adam increment; updates the moment buffers in place."""
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad**2
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return lr * m_hat / (np.sqrt(v_hat) + epsilon)


def _adam_update(state, m, v, grad):
    return adam_delta(
        m, v, grad, state.lr, state.step_count, state.beta1, state.beta2, state.epsilon
    )


def adam_step(state: AdamState, params: NetworkParams, grads: GradientSet):
    """One bias-corrected Adam update; mutates and returns (state, params)."""
    if not (np.isfinite(grads.d_alphas).all() and np.isfinite(grads.d_betas).all()):
        raise TrainingDivergedError("non-finite gradients")
    state.step_count += 1
    params.alphas -= _adam_update(state, state.m_alphas, state.v_alphas, grads.d_alphas)
    params.betas -= _adam_update(state, state.m_betas, state.v_betas, grads.d_betas)
    return state, params


# ---------------------------------------------------------------------------
# layer-wise curriculum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Curriculum:
    """Training schedule: SNR stages, two-phase layer growth, early stopping."""

    snr_schedule_db: tuple = (30.0, 25.0, 20.0, 15.0, 10.0, 5.0, 0.0)
    new_layer_lr: float = 1e-3
    finetune_lr_initial: float = 5e-4
    finetune_lr_halving: bool = True
    patience: int = 3
    min_delta_db: float = 0.01
    batch_size: int = 500
    validation_fraction: float = 0.1
    max_epochs_per_phase: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.snr_schedule_db:
            raise ValueError("SNR schedule must be non-empty")
        if self.new_layer_lr <= 0 or self.finetune_lr_initial <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation fraction must lie in (0, 1)")


def _val_nmse_db(params, a, b, labels) -> float:
    out = forward_batch(params, a, b)
    return nmse(out, labels).db


def _stage_data(datasets, snr_db: float):
    if callable(datasets):
        return datasets(snr_db)
    if isinstance(datasets, Mapping):
        ds = datasets.get(snr_db)
        if ds is None:
            raise ValueError(f"no dataset covers the {snr_db} dB stage")
        return dataset_systems(ds) if isinstance(ds, Dataset) else ds
    raise TypeError("datasets must be a mapping snr_db -> Dataset or a callable")


def train_layerwise(
    curriculum: Curriculum,
    datasets,
    mode: str,
    nt: int,
    num_layers: int,
    out_dir=None,
    log_hook: Callable[[dict], None] | None = None,
):
    """Grow and train the network one layer at a time across the SNR schedule.

    ``datasets`` is either a mapping snr_db -> Dataset or a callable
    snr_db -> (a, b, labels) arrays. For every SNR stage and every layer count
    l = 1..num_layers, phase "grow" trains the new layer's step-sizes with the
    earlier layers frozen, then phase "finetune" trains all of them with the
    halving learning-rate schedule. Each phase keeps the best-validation
    parameters and stops once validation NMSE has not improved by
    ``min_delta_db`` for ``patience`` consecutive epochs. Adam moments are
    reset at every phase boundary. Returns (params, log records).
    """
    params = NetworkParams.zeros(mode, nt, num_layers)
    log: list[dict] = []

    def emit(record):
        log.append(record)
        if log_hook is not None:
            log_hook(record)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for stage_idx, stage_snr in enumerate(curriculum.snr_schedule_db):
        a, b, labels = _stage_data(datasets, stage_snr)
        m = b.shape[0]
        n_val = max(1, int(round(m * curriculum.validation_fraction)))
        split_rng = np.random.default_rng([curriculum.seed, stage_idx, 7919])
        perm = split_rng.permutation(m)
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        a_tr, b_tr, s_tr = a[train_idx], b[train_idx], labels[train_idx]
        a_va, b_va, s_va = a[val_idx], b[val_idx], labels[val_idx]

        for layer in range(1, num_layers + 1):
            for phase in ("grow", "finetune"):
                lr = (
                    curriculum.new_layer_lr
                    if phase == "grow"
                    else curriculum.finetune_lr_initial
                )
                active = params.prefix(layer)
                state = AdamState.for_params(active, lr)
                best_db = _val_nmse_db(active, a_va, b_va, s_va)
                best = active.copy()
                bad_epochs = 0
                epoch_rng = np.random.default_rng(
                    [curriculum.seed, stage_idx, layer, 0 if phase == "grow" else 1]
                )
                for epoch in range(1, curriculum.max_epochs_per_phase + 1):
                    state.lr = lr
                    order = epoch_rng.permutation(len(train_idx))
                    err_sum = 0.0
                    sig_sum = 0.0
                    for start in range(0, len(order), curriculum.batch_size):
                        sel = order[start : start + curriculum.batch_size]
                        ab, bb, sb = a_tr[sel], b_tr[sel], s_tr[sel]
                        out, d_hist, ad_hist = forward_batch(active, ab, bb, want_trace=True)
                        if not np.isfinite(out).all():
                            raise TrainingDivergedError(
                                f"non-finite activations at stage {stage_snr} dB, "
                                f"layer {layer}, phase {phase}"
                            )
                        g_a, g_b = _backward_arrays(
                            active.alphas,
                            active.betas,
                            mode == "scalar",
                            ab,
                            sb,
                            out,
                            d_hist,
                            ad_hist,
                        )
                        if phase == "grow":  # earlier layers stay frozen
                            g_a[: layer - 1] = 0.0
                            g_b[: layer - 1] = 0.0
                        adam_step(state, active, GradientSet(g_a, g_b))
                        err_sum += float(np.sum((sb - out) ** 2))
                        sig_sum += float(np.sum(sb**2))
                    train_db = (
                        10.0 * math.log10(err_sum / sig_sum) if err_sum > 0 else -math.inf
                    )
                    val_db = _val_nmse_db(active, a_va, b_va, s_va)
                    emit(
                        {
                            "event": "epoch",
                            "stage_snr_db": stage_snr,
                            "layer": layer,
                            "phase": phase,
                            "epoch": epoch,
                            "lr": lr,
                            "train_nmse_db": train_db,
                            "val_nmse_db": val_db,
                            "adam_moments_reset": epoch == 1,
                        }
                    )
                    if val_db < best_db - curriculum.min_delta_db:
                        best_db = val_db
                        best = active.copy()
                        bad_epochs = 0
                    else:
                        bad_epochs += 1
                        if bad_epochs >= curriculum.patience:
                            break
                    if phase == "finetune" and curriculum.finetune_lr_halving:
                        lr *= 0.5
                params.alphas[:layer] = best.alphas
                params.betas[:layer] = best.betas
            emit(
                {
                    "event": "layer_accepted",
                    "stage_snr_db": stage_snr,
                    "layer": layer,
                    "val_nmse_db": best_db,
                }
            )
            if out_dir is not None:
                from .modelio import save_model

                ckpt = params.copy()
                ckpt.meta.update(
                    {"checkpoint": {"stage_snr_db": stage_snr, "layer": layer}}
                )
                save_model(ckpt, out_dir / f"ckpt_snr{stage_snr:g}_layer{layer}.json")

    params.meta.update(
        {
            "mode": mode,
            "snr_schedule_db": list(curriculum.snr_schedule_db),
            "seed": curriculum.seed,
            "final_val_nmse_db": log[-1]["val_nmse_db"] if log else None,
        }
    )
    if out_dir is not None:
        with (out_dir / "training_log.jsonl").open("w") as fh:
            for record in log:
                fh.write(json.dumps(record) + "\n")
    return params, log
