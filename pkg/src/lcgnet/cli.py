"""Command-line workbench.

Subcommands: gen-data, train, eval-ber, eval-nmse, quantize, bench-ops,
hardening. Global flags --seed, --out and --config apply before the
subcommand; --config points at a key=value text file (one pair per line, '#'
comments) whose keys override subcommand defaults but lose to explicit flags.
When --out is omitted, tabular results go to stdout and file artifacts land in
$LCGNET_OUT (or the working directory).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .datasets import ChannelSpec, DatasetConfig, gen_dataset, save_dataset
from .evaluate import ExperimentConfig, StopRule, ber_csv, ber_curve, nmse_csv, nmse_curve
from .mimo import gen_rayleigh, hardening_ratio
from .modelio import load_model, save_model, save_quantizer
from .opcount import count_ops
from .quantizer import train_quantizer
from .training import Curriculum, train_layerwise

OUT_ENV_VAR = "LCGNET_OUT"


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip() != ""]


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip() != ""]


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV_VAR, "."))


def _emit_text(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _channel(args) -> ChannelSpec:
    model = getattr(args, "channel", "rayleigh")
    r = float(getattr(args, "corr", 0.0))
    return ChannelSpec(model, r if model == "exp" else 0.0)


def _load_config_file(path: str) -> dict:
    values = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(args, parser_defaults: dict) -> None:
    """Config-file values win over builtin defaults but lose to explicit flags."""
    if not getattr(args, "config", None):
        return
    for key, raw in _load_config_file(args.config).items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) == parser_defaults.get(key):
            current = parser_defaults.get(key)
            if isinstance(current, bool):
                value = raw.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            else:
                value = raw
            setattr(args, key, value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lcgnet", description="learned conjugate-gradient detection workbench"
    )
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", default=None, help="output file or directory")
    parser.add_argument("--config", default=None, help="key=value config file")
    subparsers = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = {}

    class _Sub:
        @staticmethod
        def add_parser(name, **kwargs):
            sp = subparsers.add_parser(name, **kwargs)
            parser.subcommands[name] = sp
            return sp

    sub = _Sub()

    p = sub.add_parser("gen-data", help="generate a dataset (JSON header + f32 payload)")
    p.add_argument("--count", type=int, default=10000)
    p.add_argument("--nt", type=int, required=True)
    p.add_argument("--nr", type=int, required=True)
    p.add_argument("--modulation", default="bpsk", choices=("bpsk", "qpsk"))
    p.add_argument("--channel", default="rayleigh", choices=("rayleigh", "exp"))
    p.add_argument("--corr", type=float, default=0.5)
    p.add_argument("--snr", default="10", help="comma-separated SNR list in dB")
    p.add_argument("--stem", default="dataset", help="output stem for .json/.bin")

    p = sub.add_parser("train", help="train the unfolded network")
    p.add_argument("--mode", default="vector", choices=("scalar", "vector"))
    p.add_argument("--nt", type=int, required=True)
    p.add_argument("--nr", type=int, required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--channel", default="rayleigh", choices=("rayleigh", "exp"))
    p.add_argument("--corr", type=float, default=0.5)
    p.add_argument("--train-count", type=int, default=20000)
    p.add_argument("--snr-schedule", default="30,25,20,15,10,5,0")
    p.add_argument("--batch-size", type=int, default=500)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--max-epochs", type=int, default=20)
    p.add_argument("--model-name", default="model.json")

    p = sub.add_parser("eval-ber", help="Monte-Carlo BER/SER/NMSE table")
    p.add_argument("--detectors", default="lmmse", help="comma list: zf,lmmse,cg,ml,net")
    p.add_argument("--model", default=None, help="model JSON for detector 'net'")
    p.add_argument("--nt", type=int, required=True)
    p.add_argument("--nr", type=int, required=True)
    p.add_argument("--modulation", default="bpsk", choices=("bpsk", "qpsk"))
    p.add_argument("--channel", default="rayleigh", choices=("rayleigh", "exp"))
    p.add_argument("--corr", type=float, default=0.5)
    p.add_argument("--snr", default="", help="comma-separated SNR list in dB")
    p.add_argument("--min-errors", type=int, default=200)
    p.add_argument("--max-symbols", type=int, default=1_000_000)
    p.add_argument("--cg-iters", type=int, default=32)

    p = sub.add_parser("eval-nmse", help="NMSE versus layer/iteration count")
    p.add_argument("--detector", default="cg", help="cg, lmmse, or net (with --model)")
    p.add_argument("--model", default=None)
    p.add_argument("--nt", type=int, required=True)
    p.add_argument("--nr", type=int, required=True)
    p.add_argument("--modulation", default="bpsk", choices=("bpsk", "qpsk"))
    p.add_argument("--channel", default="rayleigh", choices=("rayleigh", "exp"))
    p.add_argument("--corr", type=float, default=0.5)
    p.add_argument("--snr", default="10")
    p.add_argument("--layers", default="", help="comma list of layer/iteration counts")
    p.add_argument("--samples", type=int, default=2000)

    p = sub.add_parser("quantize", help="train the soft quantizer for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--bits", type=int, default=3)
    p.add_argument("--count", type=int, default=10000)
    p.add_argument("--snr", default="0,5,10")
    p.add_argument("--anneal", default="10,50,100")
    p.add_argument("--lrs", default="1e-4,5e-5,1e-5")
    p.add_argument("--quantizer-name", default="quantizer.json")
    p.add_argument("--quantized-model-name", default="model_quantized.json")

    p = sub.add_parser("bench-ops", help="closed-form operation counts")
    p.add_argument("--detector", required=True, choices=("lmmse", "cg", "lcgnet"))
    p.add_argument("--nt", type=int, required=True)
    p.add_argument("--iters", type=int, default=1, help="iterations or layers")

    p = sub.add_parser("hardening", help="Gram-matrix hardening ratio versus array size")
    p.add_argument("--nt", type=int, required=True)
    p.add_argument("--nr", required=True, help="comma-separated receive array sizes")
    p.add_argument("--trials", type=int, default=100)

    return parser


def _cmd_gen_data(args) -> int:
    cfg = DatasetConfig(
        count=args.count,
        nt=args.nt,
        nr=args.nr,
        snr_db=tuple(_float_list(args.snr)),
        modulation=args.modulation,
        channel=_channel(args),
        seed=args.seed,
    )
    stem = _out_dir(args) / args.stem
    stem.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(gen_dataset(cfg), stem)
    print(f"wrote {stem}.json and {stem}.bin ({cfg.count} samples)")
    return 0


def _cmd_train(args) -> int:
    curriculum = Curriculum(
        snr_schedule_db=tuple(_float_list(args.snr_schedule)),
        patience=args.patience,
        batch_size=args.batch_size,
        max_epochs_per_phase=args.max_epochs,
        seed=args.seed,
    )
    channel = _channel(args)

    def stage_data(snr_db):
        from .datasets import dataset_systems

        cfg = DatasetConfig(
            count=args.train_count,
            nt=args.nt,
            nr=args.nr,
            snr_db=(snr_db,),
            channel=channel,
            seed=args.seed * 1000 + int(round(snr_db)),
        )
        return dataset_systems(gen_dataset(cfg))

    out_dir = _out_dir(args)
    params, log = train_layerwise(
        curriculum,
        stage_data,
        args.mode,
        args.nt,
        args.layers,
        out_dir=out_dir,
        log_hook=lambda rec: print(json.dumps(rec)),
    )
    params.meta.update({"nr": args.nr, "channel": {"model": channel.model, "r": channel.r}})
    model_path = out_dir / args.model_name
    save_model(params, model_path)
    print(f"wrote {model_path}")
    return 0


def _cmd_eval_ber(args, parser) -> int:
    snr = _float_list(args.snr)
    if not snr:
        parser.error("eval-ber requires a non-empty --snr list")
    model = load_model(args.model) if args.model else None
    cfg = ExperimentConfig(
        nt=args.nt,
        nr=args.nr,
        snr_db=tuple(snr),
        detectors=tuple(tok.strip() for tok in args.detectors.split(",") if tok.strip()),
        channel=_channel(args),
        modulation=args.modulation,
        stop=StopRule(args.min_errors, args.max_symbols),
        cg_iters=args.cg_iters,
        model=model,
        seed=args.seed,
    )
    _emit_text(args, ber_csv(ber_curve(cfg)))
    return 0


def _cmd_eval_nmse(args, parser) -> int:
    snr = _float_list(args.snr)
    if not snr:
        parser.error("eval-nmse requires a non-empty --snr list")
    layers = _int_list(args.layers) if args.layers else None
    detector = args.detector
    if detector == "net":
        if not args.model:
            parser.error("detector 'net' requires --model")
        detector = load_model(args.model)
    rows = nmse_curve(
        detector,
        args.nt,
        args.nr,
        snr,
        layer_counts=layers,
        channel=_channel(args),
        modulation=args.modulation,
        n_samples=args.samples,
        seed=args.seed,
    )
    _emit_text(args, nmse_csv(rows))
    return 0


def _cmd_quantize(args) -> int:
    params = load_model(args.model)
    levels = 2 ** args.bits - 1
    l = levels // 2
    cfg = DatasetConfig(
        count=args.count,
        nt=params.nt,
        nr=params.meta.get("nr") or 2 * params.nt,
        snr_db=tuple(_float_list(args.snr)),
        seed=args.seed,
    )
    from .datasets import dataset_systems

    phi, quantized, snapped, log = train_quantizer(
        params,
        dataset_systems(gen_dataset(cfg)),
        l=l,
        anneal_sigmas=tuple(_float_list(args.anneal)),
        learning_rates=tuple(_float_list(args.lrs)),
        seed=args.seed,
        log_hook=lambda rec: print(json.dumps(rec)),
    )
    out_dir = _out_dir(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_quantizer(phi, snapped, out_dir / args.quantizer_name)
    save_model(quantized, out_dir / args.quantized_model_name)
    print(f"wrote {out_dir / args.quantizer_name} and {out_dir / args.quantized_model_name}")
    return 0


def _cmd_bench_ops(args) -> int:
    ops = count_ops(args.detector, args.nt, args.iters)
    print(f"{ops.real_mults},{ops.real_divs}")
    return 0


def _cmd_hardening(args) -> int:
    lines = ["nt,nr,trials,ratio"]
    for nr in _int_list(args.nr):
        ratios = [
            hardening_ratio(gen_rayleigh(args.nt, nr, [args.seed, nr, t]))
            for t in range(args.trials)
        ]
        finite = [r for r in ratios if math.isfinite(r)]
        mean = float(np.mean(finite)) if finite else math.inf
        lines.append(f"{args.nt},{nr},{args.trials},{mean:.10g}")
    _emit_text(args, "\n".join(lines) + "\n")
    return 0


def cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults = {a.dest: a.default for a in parser._actions}
    defaults.update({a.dest: a.default for a in parser.subcommands[args.command]._actions})
    _apply_config(args, defaults)
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval-ber":
            return _cmd_eval_ber(args, parser)
        if args.command == "eval-nmse":
            return _cmd_eval_nmse(args, parser)
        if args.command == "quantize":
            return _cmd_quantize(args)
        if args.command == "bench-ops":
            return _cmd_bench_ops(args)
        if args.command == "hardening":
            return _cmd_hardening(args)
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


def main() -> None:
    sys.exit(cli())
