"""JSON serialization for trained networks and quantizers.

Floats are written with repr-style shortest round-trip formatting (17
significant digits where needed), so load(save(m)) reproduces every parameter
bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .network import NetworkParams
from .quantizer import SnappedQuantizer, SoftQuantizerParams

MODEL_FORMAT_VERSION = 1
QUANTIZER_FORMAT_VERSION = 1


def _require(obj: dict, key: str, path):
    if key not in obj:
        raise ValueError(f"{path}: missing field {key!r}")
    return obj[key]


def save_model(params: NetworkParams, path) -> None:
    path = Path(path)
    if params.mode == "scalar":
        alphas = [[float(a)] for a in params.alphas]
        betas = [[float(b)] for b in params.betas]
    else:
        alphas = [[float(v) for v in row] for row in params.alphas]
        betas = [[float(v) for v in row] for row in params.betas]
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "mode": params.mode,
        "nt": params.nt,
        "nr": params.meta.get("nr"),
        "num_layers": params.num_layers,
        "alphas": alphas,
        "betas": betas,
        "training_meta": params.meta,
    }
    path.write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path) -> NetworkParams:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})")
    version = _require(doc, "format_version", path)
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {version!r}")
    mode = _require(doc, "mode", path)
    nt = _require(doc, "nt", path)
    num_layers = _require(doc, "num_layers", path)
    alphas = _require(doc, "alphas", path)
    betas = _require(doc, "betas", path)
    width = 1 if mode == "scalar" else 2 * nt
    for name, rows in (("alphas", alphas), ("betas", betas)):
        if len(rows) != num_layers or any(len(row) != width for row in rows):
            raise ValueError(
                f"{path}: field {name!r} must be {num_layers} rows of {width} numbers"
            )
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    if mode == "scalar":
        alphas, betas = alphas[:, 0], betas[:, 0]
    return NetworkParams(mode, nt, alphas, betas, doc.get("training_meta") or {})


def save_quantizer(
    phi: SoftQuantizerParams, snapped: SnappedQuantizer, path
) -> None:
    path = Path(path)
    doc = {
        "format_version": QUANTIZER_FORMAT_VERSION,
        "l": phi.l,
        "Gb": phi.bound,
        "G": phi.step,
        "sigma_final": phi.sigma,
        "segments": [
            {"w1": float(w1), "w2": float(w2), "b1": float(b1), "b2": float(b2)}
            for w1, w2, b1, b2 in zip(phi.w1, phi.w2, phi.b1, phi.b2)
        ],
        "snapped_levels": [float(v) for v in snapped.levels],
        "snapped_thresholds": [float(v) for v in snapped.thresholds],
    }
    path.write_text(json.dumps(doc, indent=1) + "\n")


def load_quantizer(path):
    path = Path(path)
    doc = json.loads(path.read_text())
    version = _require(doc, "format_version", path)
    if version != QUANTIZER_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {version!r}")
    l = _require(doc, "l", path)
    segments = _require(doc, "segments", path)
    if len(segments) != 2 * l:
        raise ValueError(f"{path}: expected {2 * l} segments, found {len(segments)}")
    phi = SoftQuantizerParams(
        np.array([_require(seg, "w1", path) for seg in segments]),
        np.array([_require(seg, "w2", path) for seg in segments]),
        np.array([_require(seg, "b1", path) for seg in segments]),
        np.array([_require(seg, "b2", path) for seg in segments]),
        _require(doc, "sigma_final", path),
        l,
        _require(doc, "Gb", path),
    )
    snapped = SnappedQuantizer(
        np.asarray(_require(doc, "snapped_thresholds", path), dtype=float),
        np.asarray(_require(doc, "snapped_levels", path), dtype=float),
    )
    return phi, snapped
