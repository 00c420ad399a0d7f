"""Monte-Carlo BER/NMSE evaluation and CSV emission.

Every trial draws a fresh (H, s, n) triple; all detectors in a run see the
same draws, so comparisons are paired. Randomness is derived from
(seed, snr index, batch index), which makes reports byte-reproducible for a
fixed configuration. A BER point carries a low-confidence flag when it
accumulated fewer than 50 symbol errors.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .datasets import ChannelSpec
from .detectors import cg_solve_batch, solve_batch
from .mimo import (
    SymbolAlphabet,
    alphabet,
    bits_from_indices,
    modulate,
    nearest_symbol_indices,
    noise_variance,
    real_embed_matrix,
)
from .network import NetworkParams, forward_batch
from .opcount import count_ops

LOW_CONFIDENCE_ERRORS = 50


@dataclass(frozen=True)
class StopRule:
    min_symbol_errors: int = 200
    max_symbols: int = 1_000_000

    def __post_init__(self):
        if self.min_symbol_errors < 1 or self.max_symbols < 1:
            raise ValueError("stop rule must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    nt: int
    nr: int
    snr_db: tuple
    detectors: tuple  # names: zf, lmmse, cg, ml, net, genie, coinflip
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    modulation: str = "bpsk"
    stop: StopRule = field(default_factory=StopRule)
    cg_iters: int = 32
    model: NetworkParams | None = None
    batch_trials: int = 1000
    seed: int = 0

    def __post_init__(self):
        if len(self.snr_db) == 0:
            raise ValueError("SNR grid must be non-empty")
        if not self.detectors:
            raise ValueError("need at least one detector")


@dataclass
class BerPoint:
    detector: str
    snr_db: float
    trials: int = 0
    symbols: int = 0
    bits: int = 0
    bit_errors: int = 0
    symbol_errors: int = 0
    nmse_ratio_sum: float = 0.0
    wall_time: float = 0.0
    op_count: object = None

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else math.nan

    @property
    def ser(self) -> float:
        return self.symbol_errors / self.symbols if self.symbols else math.nan

    @property
    def nmse_db(self) -> float:
        if self.trials == 0:
            return math.nan
        ratio = self.nmse_ratio_sum / self.trials
        return 10.0 * math.log10(ratio) if ratio > 0 else -math.inf

    @property
    def low_confidence(self) -> bool:
        return self.symbol_errors < LOW_CONFIDENCE_ERRORS


def _per_detection_ops(name: str, nt: int, cg_iters: int, model):
    if name == "lmmse":
        return count_ops("lmmse", nt, 1)
    if name == "cg":
        return count_ops("cg", nt, cg_iters)
    if name == "net":
        return count_ops("lcgnet", nt, model.num_layers)
    return None


def _run_detector(name, cfg, h, y, s_true_r, sigma2, rng):
    """Batched estimates for stacked real-embedded channels h (B,2Nr,2Nt)."""
    from .detectors import build_systems

    if name == "genie":
        return s_true_r.copy()
    if name == "coinflip":
        alph = alphabet(cfg.modulation)
        idx = rng.integers(0, len(alph.points), size=(h.shape[0], cfg.nt))
        pts = alph.points[idx]
        return np.concatenate([pts.real, pts.imag], axis=1)
    if name == "zf":
        a, b = build_systems(h, y, 0.0)
        return solve_batch(a, b)
    if name == "lmmse":
        a, b = build_systems(h, y, sigma2)
        return solve_batch(a, b)
    if name == "cg":
        a, b = build_systems(h, y, sigma2)
        return cg_solve_batch(a, b, cfg.cg_iters)
    if name == "net":
        if cfg.model is None:
            raise ValueError("detector 'net' requires a model")
        a, b = build_systems(h, y, sigma2)
        return forward_batch(cfg.model, a, b)
    if name == "ml":
        return _ml_batch(cfg, h, y)
    raise ValueError(f"unknown detector {name!r}")


def _ml_batch(cfg, h, y):
    alph = alphabet(cfg.modulation)
    n_points = len(alph.points)
    n_candidates = n_points**cfg.nt
    if n_candidates > 2**20:
        raise ValueError("ML search space too large for Monte-Carlo runs")
    shifts = np.arange(cfg.nt - 1, -1, -1)
    idx = (np.arange(n_candidates)[:, None] // n_points**shifts) % n_points
    s_c = alph.points[idx]  # (C, nt), lexicographic candidate order
    s_r = np.concatenate([s_c.real, s_c.imag], axis=1)  # (C, 2nt)
    out = np.empty((h.shape[0], s_r.shape[1]))
    for i in range(h.shape[0]):
        resid = y[i][None, :] - s_r @ h[i].T
        costs = np.einsum("ck,ck->c", resid, resid)
        out[i] = s_r[np.argmin(costs)]
    return out


def _draw_batch(cfg, alph: SymbolAlphabet, snr_db: float, rng, n: int):
    nt, nr = cfg.nt, cfg.nr
    h = np.empty((n, 2 * nr, 2 * nt))
    s_c = np.empty((n, nt), dtype=complex)
    bits = rng.integers(0, 2, size=(n, nt * alph.bits_per_symbol))
    for i in range(n):
        h_c = cfg.channel.draw(nt, nr, rng)
        h[i] = real_embed_matrix(h_c)
        s_c[i] = modulate(bits[i], alph)
    sigma2 = noise_variance(snr_db, nt, nr)
    s_r = np.concatenate([s_c.real, s_c.imag], axis=1)
    y = np.matmul(h, s_r[..., None])[..., 0]
    if sigma2 > 0:
        y = y + math.sqrt(sigma2 / 2.0) * rng.standard_normal(y.shape)
    return h, y, s_r, bits, sigma2


def ber_curve(cfg: ExperimentConfig) -> list[BerPoint]:
    """Accumulate paired Monte-Carlo BER/SER/NMSE per (detector, SNR) cell."""
    alph = alphabet(cfg.modulation)
    points: list[BerPoint] = []
    for snr_idx, snr_db in enumerate(cfg.snr_db):
        cell = {name: BerPoint(name, float(snr_db)) for name in cfg.detectors}
        for name in cfg.detectors:
            cell[name].op_count = _per_detection_ops(name, cfg.nt, cfg.cg_iters, cfg.model)
        symbols_done = 0
        batch_idx = 0
        while symbols_done < cfg.stop.max_symbols:
            if all(
                p.symbol_errors >= cfg.stop.min_symbol_errors for p in cell.values()
            ):
                break
            n = min(cfg.batch_trials, (cfg.stop.max_symbols - symbols_done) // cfg.nt)
            if n == 0:
                break
            rng = np.random.default_rng([cfg.seed, snr_idx, batch_idx])
            h, y, s_r, bits, sigma2 = _draw_batch(cfg, alph, snr_db, rng, n)
            label_energy = np.sum(s_r**2, axis=1)
            true_idx = nearest_symbol_indices(
                s_r[:, : cfg.nt] + 1j * s_r[:, cfg.nt :], alph
            )
            for name in cfg.detectors:
                t0 = time.perf_counter()
                est = _run_detector(name, cfg, h, y, s_r, sigma2, rng)
                p = cell[name]
                p.wall_time += time.perf_counter() - t0
                z = est[:, : cfg.nt] + 1j * est[:, cfg.nt :]
                idx = nearest_symbol_indices(z, alph)
                bits_hat = bits_from_indices(idx, alph)
                p.trials += n
                p.symbols += n * cfg.nt
                p.bits += bits.size
                p.bit_errors += int(np.sum(bits_hat != bits))
                p.symbol_errors += int(np.sum(idx != true_idx))
                p.nmse_ratio_sum += float(
                    np.sum(np.sum((est - s_r) ** 2, axis=1) / label_energy)
                )
            symbols_done += n * cfg.nt
            batch_idx += 1
        points.extend(cell[name] for name in cfg.detectors)
    return points


# ---------------------------------------------------------------------------
# NMSE-versus-layers sweeps
# ---------------------------------------------------------------------------


@dataclass
class NmseRow:
    detector: str
    snr_db: float
    layers: int | None
    samples: int
    nmse_db: float


def _default_sampler(cfg: ExperimentConfig, alph):
    def sample(rng, snr_db, n):
        from .detectors import build_systems

        h, y, s_r, _, sigma2 = _draw_batch(cfg, alph, snr_db, rng, n)
        a, b = build_systems(h, y, sigma2)
        return a, b, s_r

    return sample


def nmse_curve(
    detector,
    nt: int,
    nr: int,
    snr_db_list,
    layer_counts=None,
    channel: ChannelSpec | None = None,
    modulation: str = "bpsk",
    n_samples: int = 2000,
    seed: int = 0,
    system_sampler=None,
) -> list[NmseRow]:
    """NMSE (dB) per SNR and per layer/iteration count.

    ``detector`` is "lmmse", "cg", or a NetworkParams whose layer prefixes are
    evaluated. ``system_sampler(rng, snr_db, n) -> (a, b, labels)`` can replace
    the default MIMO instance generator.
    """
    from .training import nmse

    cfg = ExperimentConfig(
        nt=nt,
        nr=nr,
        snr_db=tuple(snr_db_list),
        detectors=("lmmse",),
        channel=channel or ChannelSpec(),
        modulation=modulation,
        seed=seed,
    )
    sampler = system_sampler or _default_sampler(cfg, alphabet(modulation))
    rows: list[NmseRow] = []
    for snr_idx, snr_db in enumerate(cfg.snr_db):
        rng = np.random.default_rng([seed, snr_idx])
        a, b, labels = sampler(rng, snr_db, n_samples)
        if isinstance(detector, NetworkParams):
            for n_layers in layer_counts or [detector.num_layers]:
                out = forward_batch(detector.prefix(n_layers), a, b)
                rows.append(
                    NmseRow("net", snr_db, n_layers, len(b), nmse(out, labels).db)
                )
        elif detector == "cg":
            for n_iters in layer_counts or [2 * nt]:
                out = cg_solve_batch(a, b, n_iters)
                rows.append(NmseRow("cg", snr_db, n_iters, len(b), nmse(out, labels).db))
        elif detector == "lmmse":
            out = solve_batch(a, b)
            rows.append(NmseRow("lmmse", snr_db, None, len(b), nmse(out, labels).db))
        else:
            raise ValueError(f"unknown detector {detector!r}")
    return rows


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

BER_CSV_COLUMNS = (
    "detector,snr_db,trials,symbols,bits,bit_errors,symbol_errors,"
    "ber,ser,nmse_db,mults,divs,low_confidence"
)
NMSE_CSV_COLUMNS = "detector,snr_db,layers,samples,nmse_db"


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return "" if x is None else str(x)


def ber_csv(points: list[BerPoint]) -> str:
    """Fixed-column CSV; wall times are excluded to keep output byte-reproducible."""
    lines = [BER_CSV_COLUMNS]
    for p in points:
        ops = p.op_count
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    p.detector,
                    p.snr_db,
                    p.trials,
                    p.symbols,
                    p.bits,
                    p.bit_errors,
                    p.symbol_errors,
                    p.ber,
                    p.ser,
                    p.nmse_db,
                    ops.real_mults if ops else None,
                    ops.real_divs if ops else None,
                    int(p.low_confidence),
                )
            )
        )
    return "\n".join(lines) + "\n"


def nmse_csv(rows: list[NmseRow]) -> str:
    lines = [NMSE_CSV_COLUMNS]
    for r in rows:
        lines.append(
            ",".join(_fmt(v) for v in (r.detector, r.snr_db, r.layers, r.samples, r.nmse_db))
        )
    return "\n".join(lines) + "\n"
