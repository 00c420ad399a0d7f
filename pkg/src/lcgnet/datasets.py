"""Dataset construction for training and evaluation.

Every sample is generated from an independent generator seeded with the pair
(master_seed, sample_index), so samples can be produced serially or in
parallel with bit-identical results, and a dataset is fully described by its
configuration. Per sample the draw order is fixed: channel, bits, noise. The
sample's SNR is ``snr_db[index % len(snr_db)]``.

On disk a dataset is a JSON sidecar header ``<stem>.json`` plus a flat binary
payload ``<stem>.bin`` of little-endian float32, per sample in order
y_r (2Nr), h_r row-major (2Nr*2Nt), s_r (2Nt).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mimo import (
    SnrSpec,
    add_noise,
    alphabet,
    gen_correlated,
    gen_rayleigh,
    modulate,
    real_embed_matrix,
    real_embed_vector,
)

DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ChannelSpec:
    """Channel model selector: "rayleigh" or "exp" (exponential receive/transmit correlation)."""

    model: str = "rayleigh"
    r: float = 0.0

    def __post_init__(self):
        if self.model not in ("rayleigh", "exp"):
            raise ValueError(f"unknown channel model {self.model!r}")

    def draw(self, nt: int, nr: int, rng) -> np.ndarray:
        if self.model == "rayleigh":
            return gen_rayleigh(nt, nr, rng)
        return gen_correlated(nt, nr, self.r, rng)


@dataclass(frozen=True)
class DatasetConfig:
    count: int
    nt: int
    nr: int
    snr_db: tuple
    modulation: str = "bpsk"
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    seed: int = 0

    def __post_init__(self):
        if self.count < 1 or self.nt < 1 or self.nr < 1:
            raise ValueError("count and dimensions must be positive")
        if len(self.snr_db) == 0:
            raise ValueError("snr_db list must be non-empty")
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))


@dataclass
class Sample:
    y_r: np.ndarray
    h_r: np.ndarray
    s_r: np.ndarray
    snr_db: float
    seed: int  # sample index within the dataset's counter scheme


class Dataset:
    """Column-major storage of real-embedded samples with list-like access."""

    def __init__(self, config: DatasetConfig, y, h, s, snr_db):
        self.config = config
        self.y = y  # (M, 2Nr)
        self.h = h  # (M, 2Nr, 2Nt)
        self.s = s  # (M, 2Nt)
        self.snr_db = snr_db  # (M,)

    def __len__(self):
        return self.y.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.y[i], self.h[i], self.s[i], float(self.snr_db[i]), i)


def _sample_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([master_seed, index])


def gen_sample(config: DatasetConfig, index: int):
    """One (y_r, h_r, s_r, snr_db) draw; deterministic in (config.seed, index)."""
    rng = _sample_rng(config.seed, index)
    snr_db = config.snr_db[index % len(config.snr_db)]
    alph = alphabet(config.modulation)
    h = config.channel.draw(config.nt, config.nr, rng)
    bits = rng.integers(0, 2, size=config.nt * alph.bits_per_symbol)
    s = modulate(bits, alph)
    spec = SnrSpec.for_system(snr_db, config.nt, config.nr)
    y = add_noise(h @ s, spec, rng)
    return real_embed_vector(y), real_embed_matrix(h), real_embed_vector(s), snr_db


def gen_dataset(config: DatasetConfig) -> Dataset:
    m, k_r, k_t = config.count, 2 * config.nr, 2 * config.nt
    y = np.empty((m, k_r))
    h = np.empty((m, k_r, k_t))
    s = np.empty((m, k_t))
    snr = np.empty(m)
    for i in range(m):
        y[i], h[i], s[i], snr[i] = gen_sample(config, i)
    return Dataset(config, y, h, s, snr)


def dataset_systems(ds: Dataset):
    """Normal-equation arrays (a, b, labels) for every sample, a = H^T H + sigma^2 I."""
    from .mimo import noise_variance

    m = len(ds)
    k = ds.s.shape[1]
    a = np.einsum("mij,mik->mjk", ds.h, ds.h)
    sig = np.array([noise_variance(s, ds.config.nt, ds.config.nr) for s in ds.snr_db])
    a[:, np.arange(k), np.arange(k)] += sig[:, None]
    a = 0.5 * (a + np.swapaxes(a, 1, 2))
    b = np.einsum("mij,mi->mj", ds.h, ds.y)
    return a, b, ds.s.copy()


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


def _paths(stem) -> tuple[Path, Path]:
    stem = Path(stem)
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_dataset(ds: Dataset, stem) -> None:
    header_path, payload_path = _paths(stem)
    cfg = ds.config
    header = {
        "version": DATASET_FORMAT_VERSION,
        "count": len(ds),
        "nt": cfg.nt,
        "nr": cfg.nr,
        "modulation": cfg.modulation,
        "channel": {"model": cfg.channel.model, "r": cfg.channel.r},
        "snr_db": list(cfg.snr_db),
        "seed": cfg.seed,
    }
    header_path.write_text(json.dumps(header, indent=1) + "\n")
    flat = np.concatenate([ds.y, ds.h.reshape(len(ds), -1), ds.s], axis=1)
    payload_path.write_bytes(np.ascontiguousarray(flat, dtype="<f4").tobytes())


def _require(header: dict, key: str):
    if key not in header:
        raise ValueError(f"dataset header missing field {key!r}")
    return header[key]


def load_dataset(stem) -> Dataset:
    header_path, payload_path = _paths(stem)
    header = json.loads(header_path.read_text())
    version = _require(header, "version")
    if version != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset version {version!r}")
    count, nt, nr = (_require(header, k) for k in ("count", "nt", "nr"))
    channel = _require(header, "channel")
    config = DatasetConfig(
        count=count,
        nt=nt,
        nr=nr,
        snr_db=tuple(_require(header, "snr_db")),
        modulation=_require(header, "modulation"),
        channel=ChannelSpec(_require(channel, "model"), _require(channel, "r")),
        seed=_require(header, "seed"),
    )
    per_sample = 2 * nr + (2 * nr) * (2 * nt) + 2 * nt
    raw = np.frombuffer(payload_path.read_bytes(), dtype="<f4")
    if raw.size != count * per_sample:
        raise ValueError(
            f"payload holds {raw.size} floats, header implies {count * per_sample}"
        )
    flat = raw.reshape(count, per_sample).astype(float)
    y = flat[:, : 2 * nr]
    h = flat[:, 2 * nr : 2 * nr + 4 * nr * nt].reshape(count, 2 * nr, 2 * nt)
    s = flat[:, 2 * nr + 4 * nr * nt :]
    snr = np.array([config.snr_db[i % len(config.snr_db)] for i in range(count)])
    return Dataset(config, y, h, s, snr)
