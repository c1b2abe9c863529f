"""Command-line front end: ``synth``, ``train``, ``embed`` and ``eval``.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 divergence, 5 shape/architecture
mismatch, 6 evaluation-input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import data as D
from .autodiff import ShapeError
from .downstream import ForestConfig, MetricsReport, evaluate, format_table
from .models import (
    AemfConfig,
    AemfModel,
    CmfConfig,
    CmfModel,
    ConvAE,
    ConvAEConfig,
    Mmeda1Config,
    Mmeda1Model,
    Mmeda2Config,
    Mmeda2Model,
    MlpConfig,
    MlpModel,
)
from .nn import make_rng
from .training import DivergenceError, DroppedRowsWarning, TrainConfig, embed_dataset, fit

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED, EXIT_SHAPE, EXIT_EVAL = 0, 2, 3, 4, 5, 6

log = logging.getLogger("mmeda")


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def _image_shape(s: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(v) for v in s.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"image shape must look like 1x16x16, got {s!r}")
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"image shape must be CxHxW with positive extents, got {s!r}")
    return dims


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v] if s else []


# -- synth ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        spec = D.SynthSpec(args.n, args.rank, args.image, args.text_dim, args.sigma, args.seed,
                           args.shared_direction)
    except ValueError as e:
        raise CliError(EXIT_USAGE, f"invalid synthetic spec: {e}")
    ds = D.generate_synthetic(spec)
    try:
        D.save_dataset(args.out, ds, spec)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot write dataset: {e}")
    c, h, w = spec.image_shape
    print(f"wrote {args.out}: N={ds.n} images={c}x{h}x{w} text_dim={ds.n2} rank={spec.rank} "
          f"positive={ds.labels.mean():.3f} seed={spec.seed}")
    return EXIT_OK


# -- train ---------------------------------------------------------------------

MLP_DEFAULTS = {"classification": ("adam", 5e-4), "regression": ("sgd", 1e-4)}


def _load_dataset(path) -> D.MultiModalDataset:
    try:
        return D.load_dataset(path)
    except (OSError, KeyError, D.FormatError) as e:
        raise CliError(EXIT_IO, f"cannot read dataset {path}: {e}")


def build_for_dataset(kind: str, ds: D.MultiModalDataset, args) -> object:
    rng = make_rng(args.seed)
    d = args.embed_dim
    img = ds.image_shape
    flat = int(np.prod(img))
    hidden = _ints(args.hidden)
    if kind == "cmf":
        return CmfModel(CmfConfig(ds.n, [flat, ds.n2], d or 50), rng)
    if kind == "aemf":
        return AemfModel(AemfConfig([flat, ds.n2], args.batch, d or 50, hidden), rng)
    if kind == "convae":
        return ConvAE(ConvAEConfig(img, d or 200), rng)
    if kind == "mmeda1":
        return Mmeda1Model(Mmeda1Config(img, ds.n2, args.batch, d or 50, hidden=hidden), rng)
    if kind == "mmeda2":
        return Mmeda2Model(Mmeda2Config(img, ds.n2, args.batch, d or 50, hidden=hidden), rng)
    return MlpModel(MlpConfig(flat + ds.n2, hidden or [128, 64], args.task), rng)


def cmd_train(args) -> int:
    ds = _load_dataset(args.data)
    optimizer, lr = args.optimizer, args.lr
    if args.model == "mlp":
        opt_default, lr_default = MLP_DEFAULTS[args.task]
        optimizer = optimizer or opt_default
        lr = lr if lr is not None else lr_default
    optimizer = optimizer or "adam"
    lr = 1e-4 if lr is None else lr
    if args.batch > ds.n:
        raise CliError(EXIT_USAGE, f"batch size {args.batch} exceeds dataset size {ds.n}")
    try:
        cfg = TrainConfig(args.batch, lr, optimizer, args.tol, args.max_epochs, args.seed, args.shuffle)
    except ValueError as e:
        raise CliError(EXIT_USAGE, str(e))
    rows = None
    if args.model == "mlp":
        rows = D.split(ds, args.split_ratio, args.split_seed).train
    try:
        model = build_for_dataset(args.model, ds, args)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DroppedRowsWarning)
            model, hist = fit(model, ds, cfg, rows=rows)
    except DivergenceError as e:
        raise CliError(EXIT_DIVERGED, f"training diverged: {e}")
    except ShapeError as e:
        raise CliError(EXIT_SHAPE, f"shape mismatch: {e}")
    except ValueError as e:
        raise CliError(EXIT_USAGE, str(e))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    try:
        D.save_model(args.out, model)
        if args.history:
            Path(args.history).write_text(hist.to_csv())
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot write outputs: {e}")
    print(f"model={args.model} epochs={hist.epochs_run} converged={str(hist.converged).lower()} "
          f"steps={hist.steps} first_loss={hist.losses[0]:.6g} final_loss={hist.losses[-1]:.6g}")
    return EXIT_OK


# -- embed ---------------------------------------------------------------------


def cmd_embed(args) -> int:
    ds = _load_dataset(args.data)
    try:
        model = D.load_model(args.model_file)
    except (OSError, D.FormatError) as e:
        raise CliError(EXIT_IO, f"cannot read model {args.model_file}: {e}")
    try:
        reps = embed_dataset(model, ds)
    except ShapeError as e:
        raise CliError(EXIT_SHAPE, f"model/dataset mismatch: {e}")
    try:
        D.write_tensor(args.out, reps)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {e}")
    print(f"wrote {args.out}: {reps.shape[0]}x{reps.shape[1]} representations ({model.kind})")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------


def _reps_arg(s: str) -> tuple[str, str]:
    if "=" in s:
        name, path = s.split("=", 1)
        return name, path
    return Path(s).stem, s


def cmd_eval(args) -> int:
    ds = _load_dataset(args.data)
    want_cls = args.task in ("both", "classification")
    want_reg = args.task in ("both", "regression")
    if want_cls and ds.labels is None:
        raise CliError(EXIT_EVAL, "dataset has no labels for the classification task")
    if want_reg and ds.targets is None:
        raise CliError(EXIT_EVAL, "dataset has no targets for the regression task")
    try:
        sp = D.split(ds, args.split_ratio, args.split_seed)
    except ValueError as e:
        raise CliError(EXIT_USAGE, str(e))
    forest = ForestConfig(args.trees, args.depth, args.forest_seed)
    rows: list[tuple[str, MetricsReport]] = []
    for name, path in args.reps:
        try:
            reps = D.read_tensor(path)
        except (OSError, D.FormatError) as e:
            raise CliError(EXIT_IO, f"cannot read {path}: {e}")
        if reps.ndim != 2 or reps.shape[0] != ds.n:
            raise CliError(EXIT_EVAL, f"{path}: expected {ds.n} rows of representations, got shape {reps.shape}")
        bad = np.flatnonzero(~np.isfinite(reps).all(axis=1))
        if bad.size:
            raise CliError(EXIT_EVAL, f"{path}: non-finite representation at row {int(bad[0])}")
        tr, te = sp.train, sp.test
        labels = (ds.labels[tr], ds.labels[te]) if want_cls else None
        targets = (ds.targets[tr], ds.targets[te]) if want_reg else None
        try:
            rep = evaluate(reps[tr], reps[te], labels, targets, forest, tr, te)
        except ValueError as e:
            raise CliError(EXIT_EVAL, f"{path}: {e}")
        rows.append((name, rep))
    if args.json:
        for name, rep in rows:
            print(json.dumps({"name": name, **json.loads(rep.to_json())}))
    else:
        print(format_table(rows))
        print(f"(positive class = 1; split {len(sp.train)}/{len(sp.test)} seed {sp.seed}; "
              f"forest depth {forest.max_depth}, {forest.n_trees} trees, seed {forest.seed}; "
              f"raw representations, no standardization)")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="mmeda", description=__doc__.splitlines()[0], formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    p.add_argument("--config", help="JSON file of flag values; explicit flags win")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic two-view dataset", formatter_class=fmt)
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--n", type=int, default=256, help="number of entities")
    s.add_argument("--image", type=_image_shape, default=(1, 16, 16), help="image shape CxHxW")
    s.add_argument("--text-dim", type=int, default=32, help="feature-view width n2")
    s.add_argument("--rank", type=int, default=8, help="latent dimension r")
    s.add_argument("--sigma", type=float, default=0.05, help="noise standard deviation")
    s.add_argument("--seed", type=int, default=0, help="generator seed")
    s.add_argument("--shared-direction", action="store_true",
                   help="regression target uses the label direction")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model on a dataset directory", formatter_class=fmt)
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--model", required=True, choices=["cmf", "aemf", "convae", "mmeda1", "mmeda2", "mlp"],
                   help="model kind")
    t.add_argument("--embed-dim", type=int, default=None,
                   help="representation width (default 50; 200 for convae)")
    t.add_argument("--batch", type=int, default=50, help="batch size b")
    t.add_argument("--lr", type=float, default=None,
                   help="learning rate (default 1e-4; mlp: 5e-4 classification, 1e-4 regression)")
    t.add_argument("--optimizer", choices=["adam", "sgd"], default=None,
                   help="optimizer (default adam; mlp regression: sgd)")
    t.add_argument("--tol", type=float, default=1e-4, help="convergence tolerance on |Δ epoch loss|")
    t.add_argument("--max-epochs", type=int, default=300, help="epoch cap")
    t.add_argument("--seed", type=int, default=0, help="initialisation and shuffle seed")
    t.add_argument("--shuffle", action="store_true", help="seeded reshuffle of rows every epoch")
    t.add_argument("--hidden", default="", help="comma-separated hidden widths for vanilla encoders / mlp")
    t.add_argument("--task", choices=["classification", "regression"], default="classification",
                   help="mlp head")
    t.add_argument("--split-ratio", type=float, default=0.8, help="mlp: train fraction")
    t.add_argument("--split-seed", type=int, default=0, help="mlp: split seed")
    t.add_argument("--out", required=True, help="model bundle path")
    t.add_argument("--history", help="loss-history CSV path")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="write representations for a dataset", formatter_class=fmt)
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--model-file", required=True, help="model bundle from train")
    e.add_argument("--out", required=True, help="output MMTF file (N×d)")
    e.set_defaults(func=cmd_embed)

    v = sub.add_parser("eval", help="downstream classification/regression on representations",
                       formatter_class=fmt)
    v.add_argument("--data", required=True, help="dataset directory with labels/targets")
    v.add_argument("--reps", required=True, nargs="+", type=_reps_arg,
                   help="representation files, optionally NAME=PATH")
    v.add_argument("--task", choices=["both", "classification", "regression"], default="both",
                   help="downstream tasks to run")
    v.add_argument("--split-ratio", type=float, default=0.8, help="train fraction")
    v.add_argument("--split-seed", type=int, default=0, help="split permutation seed")
    v.add_argument("--trees", type=int, default=100, help="random forest size")
    v.add_argument("--depth", type=int, default=2, help="maximum tree depth")
    v.add_argument("--forest-seed", type=int, default=0, help="random forest seed")
    v.add_argument("--json", action="store_true", help="one JSON object per line")
    v.set_defaults(func=cmd_eval)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        values = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(EXIT_USAGE, f"cannot read config {known.config}: {e}")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            sp.set_defaults(**values)
            for a in sp._actions:
                if a.dest in values and a.required:
                    a.required = False


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
