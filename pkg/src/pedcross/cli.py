"""Command-line workflows: synth, preprocess, train, eval, tte, gradcheck.

Every command writes its primary output plus ``<out>.manifest.json``
recording the resolved configuration, seeds and SHA-256 checksums of the
files read and written.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from collections import OrderedDict
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    AmbiguousLabel,
    Direction,
    ParseError,
    SchemaError,
    SynthConfig,
    UnknownTag,
    generate_synthetic_dataset,
    generate_synthetic_sequences,
    import_estimator_output,
    iter_records,
    map_labels,
    split_dataset,
    write_samples,
)
from .evaluation import (
    DEFAULT_FPS,
    MalformedSequence,
    TTESequence,
    aggregate_tte,
    evaluate_accuracy,
    tte_evaluate,
)
from .nn import Gradients, backward, gradient_check, init_network
from .pose import FEATURE_DIM, CrossingState, DegeneratePose, FeatureVector, RawPose, preprocess
from .train import ConfigError, TrainConfig, load_model, save_model, train

MAX_GRADCHECK_HIDDEN = 16


class CLIError(Exception):
    pass


# --- helpers -----------------------------------------------------------------

def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(out: str | Path) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def write_manifest(command: str, out: str | Path, config: dict, inputs: dict, outputs: dict) -> Path:
    doc = OrderedDict(
        command=command,
        version=__version__,
        config=config,
        inputs={k: {"path": str(v), "sha256": sha256(v)} for k, v in inputs.items()},
        outputs={k: {"path": str(v), "sha256": sha256(v)} for k, v in outputs.items()},
    )
    path = manifest_path(out)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def write_json(path: str | Path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise CLIError(f"config file {path} must hold a JSON object")
    return doc


def resolve(args: argparse.Namespace, file_cfg: dict, defaults: dict) -> dict:
    """flag > config file > default."""
    out = {}
    for name, default in defaults.items():
        flag = getattr(args, name, None)
        out[name] = flag if flag is not None else file_cfg.get(name, default)
    return out


def write_features(records: list[tuple[str, FeatureVector, CrossingState]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, fv, label in records:
            fh.write(json.dumps({"id": sid, "features": fv.values.tolist(), "label": label.name}) + "\n")


def read_features(path: str | Path) -> list[tuple[FeatureVector, CrossingState]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                rec = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, exc.msg) from None
            for name in ("features", "label"):
                if name not in rec:
                    raise SchemaError(line_no, name)
            if not isinstance(rec["features"], list) or len(rec["features"]) != FEATURE_DIM:
                raise SchemaError(line_no, "features", "features must hold 18 numbers")
            try:
                out.append((FeatureVector(rec["features"]), CrossingState.parse(rec["label"])))
            except (TypeError, ValueError) as exc:
                raise SchemaError(line_no, "features", str(exc)) from None
    return out


def read_sequences(path: str | Path, frame_rate: float) -> list[TTESequence]:
    groups: dict[str, list] = OrderedDict()
    tte: dict[str, int] = {}
    for line_no, rec in iter_records(path):
        if rec.get("sequence_id") is None:
            raise SchemaError(line_no, "sequence_id")
        if not isinstance(rec.get("tte_index"), int):
            raise SchemaError(line_no, "tte_index")
        sid = str(rec["sequence_id"])
        if tte.setdefault(sid, rec["tte_index"]) != rec["tte_index"]:
            raise MalformedSequence(f"sequence {sid!r}: inconsistent tte_index values")
        try:
            fv = preprocess(RawPose(rec["keypoints"]))
            label = map_labels(str(rec["behavior"]), Direction.parse(rec["direction"]))
        except (DegeneratePose, UnknownTag, AmbiguousLabel, ValueError) as exc:
            raise MalformedSequence(f"sequence {sid!r}, line {line_no}: {exc}") from None
        groups.setdefault(sid, []).append((rec["frame"], fv, label))
    seqs = []
    for sid, frames in groups.items():
        frames.sort(key=lambda t: t[0])
        seqs.append(TTESequence(tuple((fv, lab) for _, fv, lab in frames), tte[sid], frame_rate, sid))
    return seqs


def say(args, *lines: str) -> None:
    if not args.quiet:
        for line in lines:
            print(line)


# --- commands ----------------------------------------------------------------

SYNTH_DEFAULTS = {"seed": 7, "noise": 0.02, "per_class": 300, "offset": 0, "sequences": None}


def cmd_synth(args) -> int:
    cfg_values = resolve(args, load_config_file(args.config), SYNTH_DEFAULTS)
    cfg = SynthConfig(seed=cfg_values["seed"], noise_std=cfg_values["noise"], count_per_class=cfg_values["per_class"])
    if cfg_values["sequences"]:
        samples = generate_synthetic_sequences(cfg, cfg_values["sequences"])
        summary = f"wrote {cfg_values['sequences']} sequences ({len(samples)} records) to {args.out}"
    else:
        samples = generate_synthetic_dataset(cfg, offset=cfg_values["offset"])
        summary = f"wrote {len(samples)} records ({cfg.count_per_class} per class) to {args.out}"
    write_samples(samples, args.out)
    write_manifest("synth", args.out, {**cfg_values, **asdict(cfg)}, {}, {"dataset": args.out})
    say(args, summary)
    return 0


def cmd_preprocess(args) -> int:
    result = import_estimator_output(args.input)
    records = [(s.id, preprocess(s.raw), s.label) for s in result.samples]
    outputs = {}
    config = {"split": args.split}
    if args.split is not None:
        if args.test_out is None:
            raise CLIError("--split requires --test-out")
        parts = split_dataset(records, args.split)
        write_features(parts.train, args.out)
        write_features(parts.test, args.test_out)
        outputs = {"train_features": args.out, "test_features": args.test_out}
        split_line = f"split {args.split}: {len(parts.train)} train, {len(parts.test)} test"
    else:
        write_features(records, args.out)
        outputs = {"features": args.out}
        split_line = None
    if not records:
        print(f"warning: no usable records in {args.input}", file=sys.stderr)
    counts = {s.name: sum(1 for _, _, lab in records if lab is s) for s in CrossingState}
    config["drops"] = dict(sorted(result.drops.items()))
    config["kept"] = len(records)
    config["class_counts"] = counts
    write_manifest("preprocess", args.out, config, {"input": args.input}, outputs)
    drops = ", ".join(f"{k}={v}" for k, v in sorted(result.drops.items())) or "none"
    say(args, f"kept {len(records)} ({', '.join(f'{k}={v}' for k, v in counts.items())}); dropped: {drops}")
    if split_line:
        say(args, split_line)
    return 0


TRAIN_DEFAULTS = {
    **{f.name: f.default for f in fields(TrainConfig)},
    "hidden1": 256,
    "hidden2": 128,
}


def cmd_train(args) -> int:
    values = resolve(args, load_config_file(args.config), TRAIN_DEFAULTS)
    hidden1, hidden2 = values.pop("hidden1"), values.pop("hidden2")
    cfg = TrainConfig.from_mapping(values)
    if hidden1 < 1 or hidden2 < 1:
        raise ConfigError("hidden1" if hidden1 < 1 else "hidden2", "must be >= 1")
    data = read_features(args.features)
    if not data:
        raise CLIError(f"no training records in {args.features}")
    model = init_network(hidden1, hidden2, seed=cfg.seed)
    model, history = train(model, data, cfg)
    save_model(model, args.out)
    hist_path = Path(args.out).with_name(Path(args.out).name + ".history.jsonl")
    history.write(hist_path)
    write_manifest(
        "train",
        args.out,
        {**asdict(cfg), "hidden1": hidden1, "hidden2": hidden2},
        {"features": args.features},
        {"model": args.out, "history": hist_path},
    )
    last = history.records[-1]
    say(
        args,
        f"trained {model.num_parameters} parameters on {len(data)} samples for {cfg.epochs} epochs",
        f"epoch 1 loss {history.records[0].mean_loss:.4f}; final loss {last.mean_loss:.4f}, "
        f"train accuracy {last.train_accuracy * 100:.2f}%, lr {last.lr:g}",
    )
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    data = read_features(args.features)
    report = evaluate_accuracy(model, data)
    write_json(args.out, report.to_dict())
    write_manifest("eval", args.out, {}, {"model": args.model, "features": args.features}, {"report": args.out})
    say(args, report.table())
    return 0


def cmd_tte(args) -> int:
    model = load_model(args.model)
    seqs = read_sequences(args.sequences, args.fps)
    if not seqs:
        raise CLIError(f"no sequences in {args.sequences}")
    report = aggregate_tte([tte_evaluate(model, s) for s in seqs])
    doc = {"frame_rate": args.fps, **report.to_dict()}
    write_json(args.out, doc)
    write_manifest("tte", args.out, {"fps": args.fps}, {"model": args.model, "sequences": args.sequences}, {"report": args.out})
    say(args, report.text(args.fps))
    return 0


def _corrupted_backward(model, batch):
    grads, loss = backward(model, batch)
    return Gradients(tuple(w * 1.01 for w in grads.weights), tuple(b * 1.01 for b in grads.biases)), loss


def cmd_gradcheck(args) -> int:
    for name in ("hidden1", "hidden2"):
        v = getattr(args, name)
        if not 1 <= v <= MAX_GRADCHECK_HIDDEN:
            raise ConfigError(name, f"must lie in [1, {MAX_GRADCHECK_HIDDEN}] for the finite-difference oracle, got {v}")
    rng = np.random.default_rng(args.seed)
    backward_fn = _corrupted_backward if args.corrupt_gradient else backward
    results = []
    for _ in range(args.cases):
        n = int(rng.integers(1, 5))
        batch = (rng.normal(0.0, 0.5, size=(n, FEATURE_DIM)), rng.integers(0, len(CrossingState), size=n))
        model = init_network(args.hidden1, args.hidden2, seed=int(rng.integers(0, 2**63 - 1)))
        model = model.replace_params(model.weights, [rng.normal(0.0, 0.1, size=b.shape) for b in model.biases])
        results.append(gradient_check(model, batch, eps=args.eps, backward_fn=backward_fn))
    worst = max(r.max_rel_error for r in results)
    passed = all(r.passed for r in results)
    write_json(
        args.out,
        {
            "passed": passed,
            "max_rel_error": worst,
            "tolerance": results[0].tolerance,
            "cases": [{"max_rel_error": r.max_rel_error, "checked": r.checked, "excluded": r.excluded} for r in results],
        },
    )
    write_manifest(
        "gradcheck", args.out,
        {"hidden1": args.hidden1, "hidden2": args.hidden2, "seed": args.seed, "cases": args.cases, "eps": args.eps},
        {}, {"report": args.out},
    )
    say(args, f"{'PASS' if passed else 'FAIL'}: max relative error {worst:.3e} (tolerance {results[0].tolerance:g}) over {args.cases} cases")
    return 0 if passed else 1


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="suppress human-readable output")

    parser = argparse.ArgumentParser(prog="pedcross", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset or TTE sequence file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", type=float, help="joint noise std in normalized units (default 0.02)")
    p.add_argument("--per-class", dest="per_class", type=int, help="samples per class (default 300)")
    p.add_argument("--offset", type=int, help="first generator call index, for disjoint draws")
    p.add_argument("--sequences", type=int, help="write this many 20-frame TTE sequences instead")
    p.add_argument("--config", help="JSON file with defaults for the options above")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="filter, label and normalize pose records")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="features file (train part when --split is given)")
    p.add_argument("--split", type=float, help="ordered train fraction, e.g. 0.84")
    p.add_argument("--test-out", dest="test_out")
    p.add_argument("--seed", type=int, help="accepted for uniformity; preprocessing is deterministic")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="train a classifier on a features file")
    p.add_argument("features")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--config", help="JSON file with training options")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", dest="initial_lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--decay", dest="scheduler_decay", type=float)
    p.add_argument("--patience", dest="scheduler_patience", type=int)
    p.add_argument("--threshold", dest="improvement_threshold", type=float)
    p.add_argument("--hidden1", type=int)
    p.add_argument("--hidden2", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="per-class accuracy on a features file")
    p.add_argument("model")
    p.add_argument("features")
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--seed", type=int, help="accepted for uniformity; evaluation is deterministic")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tte", parents=[common], help="time-to-event test over a sequence file")
    p.add_argument("model")
    p.add_argument("sequences")
    p.add_argument("--fps", type=float, default=DEFAULT_FPS)
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--seed", type=int, help="accepted for uniformity; evaluation is deterministic")
    p.set_defaults(func=cmd_tte)

    p = sub.add_parser("gradcheck", parents=[common], help="backprop vs finite differences")
    p.add_argument("--hidden1", type=int, default=8)
    p.add_argument("--hidden2", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=5)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--out", default="gradcheck.json")
    p.add_argument("--corrupt-gradient", dest="corrupt_gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    # domain errors (parse, schema, config, checkpoint format, malformed
    # sequences) all derive from ValueError
    except (CLIError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
