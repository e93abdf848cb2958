"""Command-line entry point: generate, train, eval, ablate, bench.

Configuration is a TOML file whose tables flatten to dotted keys
(``[model] paradigm = "esd"`` becomes ``model.paradigm``). Any key can be
overridden with ``--model.paradigm=eld`` style flags.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import checkpoint
from .data import generate_dataset, load_dataset, save_dataset
from .decoder import argmax_labels
from .encoder import closed_form_param_count, separable_saving
from .ensemble import EnsembleModel, Member, read_manifest, write_manifest
from .exceptions import (
    ConfigurationError,
    DivergenceError,
    FormatError,
    IncompatibleCheckpointError,
    SepHRNetError,
)
from .model import PARADIGMS
from .pipeline import Split, fit_ensemble, fit_model, split_scenes
from .presets import PRESETS, model_config
from .training import TrainConfig, compute_metrics, dtype_scope, predict_labels

logger = logging.getLogger("sephrnet")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_PRESET = 3
EXIT_DATASET = 4
EXIT_CHECKPOINT = 5

COMMANDS = ("generate", "train", "eval", "ablate", "bench")

DEFAULTS: Dict[str, object] = {
    "data.path": "",
    "data.n_scenes": 250,
    "data.seed": 1000,
    "data.noise": 0.05,
    "data.frames": 8,
    "data.bands": 4,
    "data.height": 32,
    "data.width": 32,
    "data.classes": 6,
    "data.parcel_grid": 4,
    "model.preset": "bench",
    "model.paradigm": "esd",
    "model.separable": True,
    "train.lr": 3e-3,
    "train.epochs": 30,
    "train.batch_size": 8,
    "train.weight_decay": 1e-4,
    "train.schedule": "cosine",
    "train.train_fraction": 0.8,
    "train.dtype": "float32",
    "train.seed": 0,
    "ensemble.members": 1,
    "ensemble.theta": 0.2,
    "eval.checkpoint": "",
    "eval.split": "test",
    "eval.max_maps": 8,
    "ablate.members": 5,
    "bench.repeats": 3,
    "bench.batch": 2,
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -------------------------------------------------------------------- config
def flatten(table: dict, prefix: str = "") -> Dict[str, object]:
    out = {}
    for key, value in table.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _coerce(key: str, raw, default):
    if isinstance(raw, str) and not isinstance(default, str):
        text = raw.strip()
        if isinstance(default, bool):
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise CliError(EXIT_CONFIG, f"{key} expects a boolean, got {raw!r}")
        try:
            return type(default)(float(text)) if isinstance(default, int) and "e" in text.lower() else type(default)(text)
        except ValueError:
            raise CliError(EXIT_CONFIG, f"{key} expects {type(default).__name__}, got {raw!r}") from None
    if isinstance(default, bool) and not isinstance(raw, bool):
        raise CliError(EXIT_CONFIG, f"{key} expects a boolean, got {raw!r}")
    if isinstance(default, float) and isinstance(raw, int) and not isinstance(raw, bool):
        return float(raw)
    if not isinstance(raw, type(default)):
        raise CliError(EXIT_CONFIG, f"{key} expects {type(default).__name__}, got {raw!r}")
    if isinstance(default, int) and float(raw) != int(raw):
        raise CliError(EXIT_CONFIG, f"{key} expects an integer, got {raw!r}")
    return raw


def load_config(path: Optional[str], overrides: Sequence[str]) -> Dict[str, object]:
    """Defaults, then the TOML file, then ``--key=value`` overrides."""
    import tomli

    cfg = dict(DEFAULTS)
    if path:
        try:
            with open(path, "rb") as f:
                table = tomli.load(f)
        except OSError as exc:
            raise CliError(EXIT_CONFIG, f"cannot read config {path}: {exc.strerror}") from None
        except tomli.TOMLDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"config {path} is not valid TOML: {exc}") from None
        for key, value in flatten(table).items():
            if key not in DEFAULTS:
                raise CliError(EXIT_CONFIG, f"unknown config key {key!r} in {path}")
            cfg[key] = _coerce(key, value, DEFAULTS[key])
    for item in overrides:
        if not item.startswith("--") or "=" not in item:
            raise CliError(EXIT_CONFIG, f"unrecognized argument {item!r}; overrides look like --section.key=value")
        key, value = item[2:].split("=", 1)
        if key not in DEFAULTS:
            raise CliError(EXIT_CONFIG, f"unknown config key {key!r}")
        cfg[key] = _coerce(key, value, DEFAULTS[key])
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    tcfg = TrainConfig(
        lr=cfg["train.lr"],
        batch_size=cfg["train.batch_size"],
        weight_decay=cfg["train.weight_decay"],
        epochs=cfg["train.epochs"],
        schedule=cfg["train.schedule"],
        seed=cfg["train.seed"],
        train_fraction=cfg["train.train_fraction"],
        dtype=cfg["train.dtype"],
    )
    try:
        tcfg.validate()
    except ConfigurationError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    return tcfg


def _model_config(cfg: dict, paradigm: Optional[str] = None, separable: Optional[bool] = None, split: Optional[Split] = None):
    preset, par = cfg["model.preset"], paradigm or cfg["model.paradigm"]
    if preset not in PRESETS:
        raise CliError(EXIT_PRESET, f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    if par not in PARADIGMS:
        raise CliError(EXIT_PRESET, f"unknown paradigm {par!r}; choose from {', '.join(PARADIGMS)}")
    kwargs = {}
    if split is not None:
        _, _, c, h, w = split.x_train.shape
        kwargs = dict(in_channels=c, size=(h, w), n_classes=split.n_classes)
    mcfg = model_config(preset, par, cfg["model.separable"] if separable is None else separable, **kwargs)
    try:
        return mcfg.resolved()
    except ConfigurationError as exc:
        raise CliError(EXIT_CONFIG, f"model does not fit the data: {exc}") from None


# ---------------------------------------------------------------------- data
def _generate(cfg: dict):
    try:
        return generate_dataset(
            cfg["data.n_scenes"],
            seed=cfg["data.seed"],
            T=cfg["data.frames"],
            C=cfg["data.bands"],
            H=cfg["data.height"],
            W=cfg["data.width"],
            K=cfg["data.classes"],
            noise=cfg["data.noise"],
            grid=cfg["data.parcel_grid"],
        ), cfg["data.classes"]
    except ConfigurationError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def _load_split(cfg: dict, stats=None) -> Split:
    path = cfg["data.path"]
    if path:
        try:
            scenes, k = load_dataset(path)
        except OSError as exc:
            raise CliError(EXIT_DATASET, f"cannot read dataset {path}: {exc.strerror}") from None
        except FormatError as exc:
            raise CliError(EXIT_DATASET, f"dataset {path} is unreadable: {exc}") from None
        if len(scenes) < 2:
            raise CliError(EXIT_DATASET, f"dataset {path} holds {len(scenes)} scene(s); need at least 2")
    else:
        scenes, k = _generate(cfg)
    try:
        return split_scenes(scenes, k, cfg["train.train_fraction"], stats)
    except ConfigurationError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


# ------------------------------------------------------------------ reports
def format_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [[str(h) for h in header]] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def write_report(out: Path, stem: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    (out / f"{stem}.csv").write_text(
        "\n".join([",".join(header)] + [",".join(repr(v) if isinstance(v, float) else str(v) for v in r) for r in rows])
        + "\n"
    )
    (out / f"{stem}.txt").write_text(format_table(header, rows))


def _metadata(cfg: dict, split: Split, tcfg: TrainConfig) -> dict:
    return {
        "normalization": {"mean": [float(v) for v in split.mean], "std": [float(v) for v in split.std]},
        "train": dict(vars(tcfg)),
        "n_classes": split.n_classes,
        "data": {k: v for k, v in cfg.items() if k.startswith("data.")},
    }


# ------------------------------------------------------------------ commands
def cmd_generate(cfg: dict, out: Path) -> List[Path]:
    scenes, k = _generate(cfg)
    path = out / "dataset.spst"
    save_dataset(path, scenes, k)
    print(f"wrote {len(scenes)} scenes to {path}")
    return [path]


def cmd_train(cfg: dict, out: Path) -> List[Path]:
    split = _load_split(cfg)
    tcfg = _train_config(cfg)
    mcfg = _model_config(cfg, split=split)
    data = split.as_dtype(tcfg.dtype)
    meta = _metadata(cfg, split, tcfg)
    written = []
    members = cfg["ensemble.members"]
    if members < 1:
        raise CliError(EXIT_CONFIG, f"ensemble.members must be >= 1, got {members}")
    if members == 1:
        model, result = fit_model(mcfg, tcfg, data.x_train, data.y_train)
        log = out / "metrics.csv"
        log.write_text("\n".join(result.csv_lines()) + "\n")
        checkpoint.save_model(out / "model.spck", model, meta)
        with dtype_scope(tcfg.dtype):
            best = checkpoint.load_model(out / "model.spck")[0]
        best.load_state_dict(result.best_state)
        checkpoint.save_model(out / "best.spck", best, dict(meta, best_epoch=result.best_epoch))
        written += [log, out / "model.spck", out / "best.spck"]
        final = result.log[-1]
        print(f"trained {mcfg.paradigm}: final loss {final['loss']:.4f}, train accuracy {final['accuracy']:.4f}")
    else:
        ens, results = fit_ensemble(
            mcfg, tcfg, data.x_train, data.y_train, members, cfg["ensemble.theta"], seed=tcfg.seed
        )
        paths = []
        for m, (member, res) in enumerate(zip(ens.members, results)):
            p = out / f"member-{m}.spck"
            checkpoint.save_model(p, member.model, dict(meta, round=m))
            (out / f"metrics-{m}.csv").write_text("\n".join(res.csv_lines()) + "\n")
            paths.append(p.name)
            written += [p, out / f"metrics-{m}.csv"]
        write_manifest(out / "ensemble.json", ens, paths)
        written.append(out / "ensemble.json")
        print(f"trained {members}-member ensemble, alphas {[round(a, 4) for a in ens.alphas]}")
    return written


def _load_predictor(path: str):
    """(labels callable, metadata) for a checkpoint or an ensemble manifest."""
    p = Path(path)
    try:
        if p.suffix == ".json":
            doc = read_manifest(p)
            models, meta = [], None
            for entry in doc["members"]:
                model, meta = checkpoint.load_model(p.parent / entry["checkpoint"])
                models.append(model)
            ens = EnsembleModel([Member(m, e["alpha"]) for m, e in zip(models, doc["members"])], theta=doc["theta"])
            return ens.predict, meta
        model, meta = checkpoint.load_model(p)
    except OSError as exc:
        raise CliError(EXIT_CHECKPOINT, f"cannot read checkpoint {path}: {exc.strerror}") from None
    except IncompatibleCheckpointError as exc:
        raise CliError(EXIT_CHECKPOINT, f"incompatible checkpoint: {exc}") from None
    except (FormatError, KeyError) as exc:
        raise CliError(EXIT_CHECKPOINT, f"corrupt checkpoint {path}: {exc}") from None
    return (lambda x, batch_size=8: predict_labels(model, x, batch_size)), meta


def cmd_eval(cfg: dict, out: Path) -> List[Path]:
    from .checkpoint import save_label_png

    if not cfg["eval.checkpoint"]:
        raise CliError(EXIT_CONFIG, "eval needs --eval.checkpoint=PATH (a .spck file or an ensemble .json)")
    which = cfg["eval.split"]
    if which not in ("train", "test"):
        raise CliError(EXIT_CONFIG, f"eval.split must be 'train' or 'test', got {which!r}")
    predict, meta = _load_predictor(cfg["eval.checkpoint"])
    norm = meta.get("normalization")
    split = _load_split(cfg, (norm["mean"], norm["std"]) if norm else None)
    train_meta = meta.get("train", {})
    x = split.x_train if which == "train" else split.x_test
    x = x.astype(meta.get("dtype", "float64"))
    y = split.y_train if which == "train" else split.y_test
    k = int(meta.get("n_classes", split.n_classes))
    # Same batch size as training so the evaluation repeats the logged arithmetic.
    pred = predict(x, train_meta.get("batch_size", 8))
    metrics = compute_metrics(pred, y, k)
    s = metrics.summary()
    header = ["split", "scenes", "accuracy", "precision", "recall", "f1", "miou"]
    row = [which, len(y), s["accuracy"], s["precision"], s["recall"], s["f1"], s["miou"]]
    write_report(out, "report", header, [row])
    per_class = [
        [c, float(metrics.precision[c]), float(metrics.recall[c]), float(metrics.f1[c]), float(metrics.iou[c])]
        for c in range(k)
    ]
    write_report(out, "per_class", ["class", "precision", "recall", "f1", "iou"], per_class)
    maps = out / "maps"
    maps.mkdir(exist_ok=True)
    written = [out / "report.csv", out / "report.txt", out / "per_class.csv", out / "per_class.txt"]
    for i in range(min(cfg["eval.max_maps"], len(pred))):
        for tag, arr in (("pred", pred[i]), ("truth", y[i])):
            p = maps / f"{which}-{i:03d}-{tag}.png"
            save_label_png(p, arr, k)
            written.append(p)
    print(format_table(header, [row]), end="")
    return written


def cmd_ablate(cfg: dict, out: Path) -> List[Path]:
    split = _load_split(cfg)
    tcfg = _train_config(cfg)
    data = split.as_dtype(tcfg.dtype)
    header = ["paradigm", "conv", "mode", "members", "params", "accuracy", "precision", "recall", "f1", "miou"]
    rows = []
    for paradigm in PARADIGMS:
        for separable in (True, False):
            mcfg = _model_config(cfg, paradigm, separable, split)
            for mode in ("single", "ensemble"):
                if mode == "single":
                    model, _ = fit_model(mcfg, tcfg, data.x_train, data.y_train)
                    pred = predict_labels(model, data.x_test, tcfg.batch_size)
                    members, params = 1, model.param_count()
                else:
                    members = cfg["ablate.members"]
                    ens, _ = fit_ensemble(mcfg, tcfg, data.x_train, data.y_train, members, cfg["ensemble.theta"], tcfg.seed)
                    pred = ens.predict(data.x_test, tcfg.batch_size)
                    params = sum(m.model.param_count() for m in ens.members)
                s = compute_metrics(pred, data.y_test, split.n_classes).summary()
                rows.append([paradigm, "separable" if separable else "standard", mode, members, params, *s.values()])
                print(format_table(header, rows[-1:]).splitlines()[-1], flush=True)
    write_report(out, "ablation", header, rows)
    return [out / "ablation.csv", out / "ablation.txt"]


def cmd_bench(cfg: dict, out: Path) -> List[Path]:
    from .autodiff import no_grad
    from .model import SegmentationModel

    tcfg = _train_config(cfg)
    header = ["paradigm", "conv", "encoder_params", "model_params", "closed_form", "saving", "forward_ms"]
    rows = []
    rng = np.random.default_rng(cfg["train.seed"])
    for paradigm in PARADIGMS:
        for separable in (True, False):
            mcfg = _model_config(cfg, paradigm, separable)
            enc = mcfg.encoder
            with dtype_scope(tcfg.dtype):
                model = SegmentationModel(mcfg, tcfg.seed)
            x = rng.normal(size=(cfg["bench.batch"], cfg["data.frames"], enc.in_channels) + tuple(enc.input_size))
            with no_grad():
                model(x)  # one train-mode pass records batch-norm statistics
            times = []
            for _ in range(max(cfg["bench.repeats"], 1)):
                t0 = time.perf_counter()
                model.predict_proba(x)
                times.append(time.perf_counter() - t0)
            rows.append([
                paradigm,
                "separable" if separable else "standard",
                model.encoder.param_count(),
                model.param_count(),
                closed_form_param_count(enc),
                separable_saving(enc),
                1000.0 * min(times) / len(x),
            ])
    write_report(out, "bench", header, rows)
    print(format_table(header, rows), end="")
    return [out / "bench.csv", out / "bench.txt"]


HANDLERS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sephrnet",
        description="Crop-map segmentation from frame sequences: data generation, training, evaluation and reports.",
        epilog="Any config key can be overridden as --section.key=value, e.g. --model.paradigm=eld.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="TOML file with [data], [model], [train], [ensemble], [eval] tables")
    parser.add_argument("--seed", type=int, help="shorthand for --train.seed")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS threads (1 gives bit-reproducible runs)")
    parser.add_argument("--out", default=".", help="output directory (created if missing)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, rest)
        if args.seed is not None:
            cfg["train.seed"] = args.seed
        if args.threads is not None and args.threads < 1:
            raise CliError(EXIT_CONFIG, f"--threads must be >= 1, got {args.threads}")
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CliError(EXIT_CONFIG, f"cannot create output directory {out}: {exc.strerror}") from None
        handler = HANDLERS[args.command]
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(args.threads):
                handler(cfg, out)
        else:
            handler(cfg, out)
    except CliError as exc:
        print(f"sephrnet {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except DivergenceError as exc:
        print(f"sephrnet {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except SepHRNetError as exc:
        print(f"sephrnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
