"""Command-line entry point: ``involnet <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
"""
import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import (AugmentSpec, DataError, SyntheticSpec, augment_dataset, class_mean_images,
                   export_dataset, generate_synthetic, load_directories, resize_bilinear,
                   split_dataset)
from .involution import Involution
from .images import ImageDecodeError, read_image
from .model import (ModelFormatError, ModelVariant, build_model, load_model, save_model,
                    storage_size_mb, summarize)
from .tensor import NumericError
from .train import TrainConfig, epoch_log_csv, evaluate, train
from .viz import export_kernel_grid, export_kernel_norm_map, export_mean_images, export_report, report_row

log = logging.getLogger("involnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("summary", "train", "eval", "ablate", "synth", "analyze", "visualize")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = ""
    variant: str = "hybrid"
    inv_layers: int = 3
    lr: float = 1e-5
    epochs: int = 30
    batch: int = 32
    seed: int = 0
    data: list = field(default_factory=list)
    synthetic: int = 0
    out_dir: str = "out"
    augment: str = "on"
    model_path: str = ""
    image: str = ""
    split: str = "test"
    grid: int = 6
    per_class: int = 250

    def train_config(self):
        return TrainConfig(learning_rate=self.lr, epochs=self.epochs,
                           batch_size=self.batch, seed=self.seed)

    def model_variant(self):
        return ModelVariant.parse(self.variant, self.inv_layers)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    S = argparse.SUPPRESS
    common = _Parser(add_help=False, argument_default=S)
    common.add_argument("--config", help="JSON file with RunConfig keys; flags win")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("-v", "--verbose", action="store_true")

    model_opts = _Parser(add_help=False, argument_default=S)
    model_opts.add_argument("--variant", choices=("hybrid", "conv-only", "inv-only"))
    model_opts.add_argument("--inv-layers", dest="inv_layers", type=int)

    data_opts = _Parser(add_help=False, argument_default=S)
    data_opts.add_argument("--data", action="append", help="dataset root (repeatable)")
    data_opts.add_argument("--synthetic", type=int, metavar="PER_CLASS",
                           help="use an in-memory synthetic dataset instead of --data")
    data_opts.add_argument("--augment", choices=("on", "off", "paper-compat"))

    train_opts = _Parser(add_help=False, argument_default=S)
    train_opts.add_argument("--lr", type=float)
    train_opts.add_argument("--epochs", type=int)
    train_opts.add_argument("--batch", type=int)

    parser = _Parser(prog="involnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.add_parser("summary", parents=[common, model_opts], help="print the layer table")
    sub.add_parser("train", parents=[common, model_opts, data_opts, train_opts],
                   help="train a model, save model.ivcn and epochs.csv")
    p = sub.add_parser("eval", parents=[common, data_opts], help="evaluate a saved model")
    p.add_argument("--model", dest="model_path", default=S)
    p.add_argument("--split", choices=("train", "val", "test"), default=S)
    sub.add_parser("ablate", parents=[common, data_opts, train_opts],
                   help="sweep hybrid involution depth 0..6")
    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset to disk")
    p.add_argument("--per-class", dest="per_class", type=int, default=S)
    sub.add_parser("analyze", parents=[common, data_opts], help="class mean images + dispersion")
    p = sub.add_parser("visualize", parents=[common, model_opts, data_opts], help="involution kernel maps")
    p.add_argument("--model", dest="model_path", default=S)
    p.add_argument("--image", default=S)
    p.add_argument("--grid", type=int, default=S)
    return parser


def resolve_config(argv):
    args = vars(build_parser().parse_args(argv))
    if not args.get("command"):
        raise UsageError(f"a command is required: {', '.join(COMMANDS)}")
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    if "config" in args:
        path = Path(args.pop("config"))
        try:
            from_file = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        unknown = set(from_file) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        for key, value in from_file.items():
            setattr(cfg, key, value)
    verbose = args.pop("verbose", False)
    for key, value in args.items():
        setattr(cfg, key, value)
    return cfg, verbose


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _out_dir(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_name(cfg):
    if cfg.data:
        return "+".join(Path(d).name or str(d) for d in cfg.data)
    return f"synthetic-{cfg.synthetic}"


def _load_raw(cfg):
    if cfg.data:
        return load_directories(cfg.data)
    if cfg.synthetic:
        return generate_synthetic(SyntheticSpec(per_class=cfg.synthetic), seed=cfg.seed)
    raise UsageError("provide --data ROOT or --synthetic PER_CLASS")


def prepare_dataset(cfg):
    """Load, split and (optionally) augment according to ``cfg``."""
    ds = _load_raw(cfg)
    if cfg.augment == "paper-compat":
        return split_dataset(augment_dataset(ds, AugmentSpec(), seed=cfg.seed, paper_compat=True),
                             seed=cfg.seed)
    ds = split_dataset(ds, seed=cfg.seed)
    if cfg.augment == "on":
        ds = augment_dataset(ds, AugmentSpec(), seed=cfg.seed)
    elif cfg.augment != "off":
        raise UsageError(f"--augment must be on, off or paper-compat, got {cfg.augment!r}")
    return ds


def cmd_summary(cfg):
    model = build_model(cfg.model_variant())
    text = summarize(model).format()
    print(text)
    (_out_dir(cfg) / "summary.txt").write_text(text + "\n")


def _fit(cfg, variant, ds):
    model = build_model(variant, seed=cfg.seed)
    model, records = train(model, ds, cfg.train_config())
    return model, records


def cmd_train(cfg):
    ds = prepare_dataset(cfg)
    model, records = _fit(cfg, cfg.model_variant(), ds)
    out = _out_dir(cfg)
    save_model(model, out / "model.ivcn")
    (out / "epochs.csv").write_text(epoch_log_csv(records))
    x, y = ds.arrays("test")
    if len(x):
        print(json.dumps(evaluate(model, x, y).as_dict(), indent=2))


def cmd_eval(cfg):
    if not cfg.model_path:
        raise UsageError("eval requires --model PATH")
    model = load_model(cfg.model_path)
    ds = prepare_dataset(cfg)
    x, y = ds.arrays(cfg.split)
    if len(x) == 0:
        raise DataError(f"split {cfg.split!r} is empty")
    metrics = evaluate(model, x, y)
    print(json.dumps(metrics.as_dict(), indent=2))


def cmd_ablate(cfg):
    ds = prepare_dataset(cfg)
    x, y = ds.arrays("test")
    if len(x) == 0:
        raise DataError("test split is empty")
    rows = []
    for n in range(7):
        variant = ModelVariant("hybrid", n)
        model, _ = _fit(cfg, variant, ds)
        metrics = evaluate(model, x, y)
        rows.append(report_row(_dataset_name(cfg), variant.label, metrics,
                               summarize(model).total, storage_size_mb(model)))
        print(f"{variant.label:<10} acc {metrics.accuracy:6.2f}  recall {metrics.recall:6.2f}  "
              f"f1 {metrics.f1:6.2f}  params {rows[-1].params:,}")
    export_report(rows, _out_dir(cfg) / "report.json")


def cmd_synth(cfg):
    ds = generate_synthetic(SyntheticSpec(per_class=cfg.per_class), seed=cfg.seed)
    root = export_dataset(ds, _out_dir(cfg))
    print(f"wrote {len(ds)} images under {root}")


def cmd_analyze(cfg):
    ds = _load_raw(cfg)
    mean_asd, mean_td, dispersion = class_mean_images(ds)
    out = _out_dir(cfg)
    export_mean_images(mean_asd, mean_td, out)
    (out / "dispersion.json").write_text(json.dumps(dispersion, indent=2) + "\n")
    print(json.dumps(dispersion, indent=2))


def cmd_visualize(cfg):
    model = load_model(cfg.model_path) if cfg.model_path else build_model(cfg.model_variant(), seed=cfg.seed)
    if cfg.image:
        try:
            image = resize_bilinear(read_image(cfg.image))
        except ImageDecodeError as exc:
            raise DataError(str(exc)) from None
    else:
        ds = _load_raw(cfg)
        image = ds.images[0]
    out = _out_dir(cfg)
    written = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Involution):
            export_kernel_norm_map(model, image, i, out / f"kernels_L{i}.ppm")
            export_kernel_grid(model, image, i, out / f"kernels_grid_L{i}.ppm", grid=cfg.grid)
            written.append(i)
    if not written:
        raise UsageError("model has no involution layers to visualize")
    print(f"wrote kernel maps for layers {written} under {out}")


HANDLERS = {
    "summary": cmd_summary,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "synth": cmd_synth,
    "analyze": cmd_analyze,
    "visualize": cmd_visualize,
}


def dispatch(argv=None):
    try:
        cfg, verbose = resolve_config(sys.argv[1:] if argv is None else argv)
        logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        HANDLERS[cfg.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFormatError, FileNotFoundError, ImageDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
