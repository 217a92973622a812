"""Command-line entry point: ``fgsmkit {synth,train,attack,defend,evaluate,compare}``.

Exit codes: 0 success, 2 usage/config error, 3 I/O error, 4 numeric failure.
"""

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import nn
from .attack import attack_dataset, perturbation_stats
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import DATA_STREAM, INIT_STREAM, SPLIT_STREAM, TRAIN_STREAM, ExperimentConfig
from .data import DataError, load_directory, stratified_split, synthesize
from .defense import adversarial_fit, robust_accuracy
from .evaluation import ClassReport, compare_reports, comparison_to_json, confusion, report
from .optim import NumericError, fit, freeze
from .ppm import PPMError, write_image

EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 2, 3, 4
LOCK_NAME = ".fgsmkit.lock"


@contextlib.contextmanager
def locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OSError(f"output directory {out} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def write_text(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def load_data(cfg: ExperimentConfig):
    if cfg.data_dir:
        return load_directory(cfg.data_dir, cfg.image_size)
    return synthesize(cfg.n_per_class, cfg.image_size, cfg.rng(DATA_STREAM))


def split_data(cfg: ExperimentConfig):
    return stratified_split(load_data(cfg), cfg.train_fraction, cfg.rng(SPLIT_STREAM))


def build_model(cfg: ExperimentConfig, dataset) -> nn.Model:
    c, h, _ = dataset.images.shape[1:]
    model = nn.build_desk_model(cfg.rng(INIT_STREAM), h, c, cfg.conv_channels, dataset.n_classes, cfg.dtype)
    return freeze(model, cfg.freeze)


def load_model(cfg: ExperimentConfig, path) -> nn.Model:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_checkpoint(path).model(cfg.dtype)


def write_report(out: Path, suffix: str, matrix, rep: ClassReport, extra=None):
    d = rep.to_dict()
    if extra:
        d.update(extra)
    write_text(out / f"report_{suffix}.json", json.dumps(d, indent=2) + "\n")
    write_text(out / f"confusion_{suffix}.csv", matrix.to_csv())


def cmd_synth(cfg: ExperimentConfig, out: Path):
    ds = synthesize(cfg.n_per_class, cfg.image_size, cfg.rng(DATA_STREAM))
    for name in ds.class_names:
        (out / name).mkdir(parents=True, exist_ok=True)
    counters = dict.fromkeys(ds.class_names, 0)
    for img, label in zip(ds.images, ds.labels):
        name = ds.class_names[label]
        write_image(out / name / f"{name}_{counters[name]:04d}.ppm", img)
        counters[name] += 1
    print(f"wrote {len(ds)} images under {out}")


def cmd_train(cfg: ExperimentConfig, out: Path):
    train, test = split_data(cfg)
    model = build_model(cfg, train)
    model, history = fit(model, train, test, cfg.train_config(), cfg.rng(TRAIN_STREAM))
    save_checkpoint(out / "checkpoint.bin", Checkpoint.from_model(model, cfg.seed, cfg.epochs))
    write_text(out / "history.csv", history.to_csv())
    matrix = confusion(model, test)
    rep = report(matrix)
    write_report(out, "clean", matrix, rep)
    trainable, frozen = nn.param_count(model)
    print(f"params: {trainable} trainable, {frozen} non-trainable")
    print(f"clean test accuracy {rep.accuracy:.4f} on {matrix.total} images")


def cmd_attack(cfg: ExperimentConfig, out: Path, checkpoint):
    model = load_model(cfg, checkpoint or out / "checkpoint.bin")
    _, test = split_data(cfg)
    fgsm_cfg = cfg.fgsm_config()
    clean_matrix = confusion(model, test)
    clean = report(clean_matrix)
    adv = attack_dataset(model, test, fgsm_cfg)
    adv_matrix = confusion(model, adv)
    adv_rep = report(adv_matrix)
    write_report(out, "adv", adv_matrix, adv_rep, {"epsilon": cfg.epsilon})
    write_text(out / "comparison.json", comparison_to_json(compare_reports(clean, adv_rep)))
    stats = perturbation_stats(test.images, adv.images)
    write_text(out / "perturbation.json", json.dumps({k: round(v, 6) for k, v in stats.items()}, indent=2) + "\n")
    eps = cfg.epsilon
    for i in range(min(cfg.n_samples, len(test))):
        orig, pert = test.images[i], adv.images[i]
        # difference image: mid-grey is "unchanged", +/-eps maps to white/black
        diff = 0.5 + (pert.astype(np.float64) - orig) / (2 * eps) if eps > 0 else np.full(orig.shape, 0.5)
        write_image(out / f"orig_{i}.ppm", orig, maxval=65535)
        write_image(out / f"adv_{i}.ppm", pert, maxval=65535)
        write_image(out / f"diff_{i}.ppm", diff)
    print(f"epsilon {eps}: accuracy {clean.accuracy:.4f} -> {adv_rep.accuracy:.4f}")


def cmd_defend(cfg: ExperimentConfig, out: Path):
    train, test = split_data(cfg)
    model = build_model(cfg, train)
    fgsm_cfg = cfg.fgsm_config()
    model, history = adversarial_fit(model, train, test, cfg.train_config(), fgsm_cfg, cfg.mix_alpha, cfg.rng(TRAIN_STREAM))
    save_checkpoint(out / "checkpoint_robust.bin", Checkpoint.from_model(model, cfg.seed, cfg.epochs))
    write_text(out / "history_robust.csv", history.to_csv())
    matrix = confusion(model, test)
    rep = report(matrix)
    robust = robust_accuracy(model, test, fgsm_cfg)
    extra = {"robust_accuracy": round(robust, 6), "epsilon": cfg.epsilon, "mix_alpha": cfg.mix_alpha}
    write_report(out, "robust", matrix, rep, extra)
    print(f"defended model: clean accuracy {rep.accuracy:.4f}, robust accuracy {robust:.4f} at epsilon {cfg.epsilon}")


def cmd_evaluate(cfg: ExperimentConfig, out: Path, checkpoint, name, attacked):
    model = load_model(cfg, checkpoint or out / "checkpoint.bin")
    _, test = split_data(cfg)
    if attacked:
        test = attack_dataset(model, test, cfg.fgsm_config())
    matrix = confusion(model, test)
    rep = report(matrix)
    write_report(out, name, matrix, rep, {"epsilon": cfg.epsilon} if attacked else None)
    print(f"{name}: accuracy {rep.accuracy:.4f} on {matrix.total} images")


def cmd_compare(before, after, output: Path):
    reports = []
    for path in (before, after):
        with open(path) as fh:
            reports.append(ClassReport.from_dict(json.load(fh)))
    comparison = compare_reports(*reports)
    text = comparison_to_json(comparison)
    write_text(output, text)
    acc = comparison["accuracy"]
    print(f"accuracy {acc['before']:.4f} -> {acc['after']:.4f} (delta {acc['delta']:+.4f})")


def config_flags(p: argparse.ArgumentParser):
    s = argparse.SUPPRESS
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out", default=s, help="output directory")
    p.add_argument("--data-dir", dest="data_dir", default=s, help="<root>/<class>/*.ppm dataset (default: synthetic)")
    p.add_argument("--n-per-class", dest="n_per_class", type=int, default=s)
    p.add_argument("--image-size", dest="image_size", type=int, default=s)
    p.add_argument("--conv-channels", dest="conv_channels", type=int, nargs="+", default=s)
    p.add_argument("--freeze", type=int, nargs="*", default=s, help="layer indices to freeze")
    p.add_argument("--epochs", type=int, default=s)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=s)
    p.add_argument("--lr", type=float, default=s)
    p.add_argument("--train-fraction", dest="train_fraction", type=float, default=s)
    p.add_argument("--rotation-range", dest="rotation_range", type=float, default=s)
    p.add_argument("--no-shuffle", dest="shuffle", action="store_false", default=s)
    p.add_argument("--epsilon", type=float, default=s)
    p.add_argument("--clip-min", dest="clip_min", type=float, default=s)
    p.add_argument("--clip-max", dest="clip_max", type=float, default=s)
    p.add_argument("--mix-alpha", dest="mix_alpha", type=float, default=s)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=s, help="image triples written by attack")
    p.add_argument("--precision", choices=["float32", "float64"], default=s)
    p.add_argument("--seed", type=int, default=s)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgsmkit", description="Train, attack (FGSM) and harden a small CNN.")
    sub = parser.add_subparsers(dest="command", required=True)
    config_flags(sub.add_parser("synth", help="write a synthetic PPM dataset"))
    config_flags(sub.add_parser("train", help="train and evaluate on the clean test split"))
    p = sub.add_parser("attack", help="FGSM-attack the test split with a trained checkpoint")
    config_flags(p)
    p.add_argument("--checkpoint", help="default: <out>/checkpoint.bin")
    config_flags(sub.add_parser("defend", help="adversarial training"))
    p = sub.add_parser("evaluate", help="report for a checkpoint on the (optionally attacked) test split")
    config_flags(p)
    p.add_argument("--checkpoint", help="default: <out>/checkpoint.bin")
    p.add_argument("--name", default="eval", help="output suffix: report_<name>.json")
    p.add_argument("--attacked", action="store_true", help="evaluate on FGSM examples")
    p = sub.add_parser("compare", help="compare two report JSON files")
    p.add_argument("before")
    p.add_argument("after")
    p.add_argument("-o", "--output", default="comparison.json")
    return parser


CONFIG_KEYS = set(ExperimentConfig.__dataclass_fields__)


def resolve_config(args) -> ExperimentConfig:
    flags = {k: v for k, v in vars(args).items() if k in CONFIG_KEYS}
    values = {}
    if args.config:
        with open(args.config) as fh:
            values = json.load(fh)
    elif args.command in ("attack", "evaluate"):
        # reuse the training run's settings when pointed at its output directory
        echo = Path(flags.get("out", ExperimentConfig.out)) / "config_used.json"
        if echo.exists():
            values = json.loads(echo.read_text())
    values.update(flags)
    return ExperimentConfig.from_dict(values)


def run(args) -> None:
    if args.command == "compare":
        cmd_compare(args.before, args.after, Path(args.output))
        return
    cfg = resolve_config(args)
    out = Path(cfg.out)
    with locked(out):
        write_text(out / "config_used.json", cfg.to_json())
        if args.command == "synth":
            cmd_synth(cfg, out)
        elif args.command == "train":
            cmd_train(cfg, out)
        elif args.command == "attack":
            cmd_attack(cfg, out, args.checkpoint)
        elif args.command == "defend":
            cmd_defend(cfg, out)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, out, args.checkpoint, args.name, args.attacked)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        run(args)
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DataError, PPMError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
