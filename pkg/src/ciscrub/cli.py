"""Command-line entry point: ``ciscrub <subcommand> [options]``.

Exit codes: 0 success, 2 usage or configuration error, 3 data or format
error, 4 numeric failure.
"""

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, seeding
from .errors import CiscrubError, ConfigError, FormatError, UsageError

SUBCOMMANDS = ("train", "unlearn", "eval", "mb-select", "codec", "robust-scrub", "bench", "gen")
BENCH_SUITES = ("gap", "tie", "blanket", "selection")


@dataclass
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.options.get("seed", 0)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# argparse reports "argument --flag: <message>" for these
def _positive_float(s):
    v = _float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {s}")
    return v


def _nonneg_float(s):
    v = _float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {s}")
    return v


def _open_unit(s):
    v = _float(s)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {s}")
    return v


def _float(s):
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be finite, got {s}")
    return v


def _int_at_least(lo):
    def parse(s):
        try:
            v = int(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {s!r}") from None
        if v < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}, got {s}")
        return v

    return parse


def _seed(s):
    try:
        return seeding.check_seed(int(s))
    except (ValueError, ConfigError):
        raise argparse.ArgumentTypeError(f"must be an integer in [0, 2**64), got {s!r}") from None


def _sizes(s):
    if s.strip() == "":
        return []
    try:
        out = [int(t) for t in s.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None
    if any(v < 1 for v in out):
        raise argparse.ArgumentTypeError("layer widths must be >= 1")
    return out


def _data_args(p, label=True):
    p.add_argument("--data", required=True, help="CSV file or IDX image file")
    p.add_argument("--format", choices=("csv", "idx"), default=None)
    p.add_argument("--labels", default=None, help="IDX label file (IDX input only)")
    if label:
        p.add_argument("--label-column", default=None, help="CSV label column (default: last)")


def _scrub_args(p):
    p.add_argument("--epsilon", type=_positive_float, default=0.1)
    p.add_argument("--delta", type=_open_unit, default=0.01)
    p.add_argument("--perturbations", type=_int_at_least(2), default=1000)
    p.add_argument("--perturb-sigma", type=_nonneg_float, default=None,
                   help="input perturbation std (default: 0.1 x per-feature std)")
    p.add_argument("--fd-step", type=_positive_float, default=1e-4)
    p.add_argument("--max-block", type=_int_at_least(1), default=4096)
    p.add_argument("--max-features", type=_int_at_least(1), default=64)
    p.add_argument("--seed-policy", choices=("fixed_per_run", "resample_per_call"), default="fixed_per_run")
    p.add_argument("--single-slice", action="store_true")
    p.add_argument("--L-lip", dest="L_lip", type=_positive_float, default=None)
    p.add_argument("--M-hess", dest="M_hess", type=_positive_float, default=None)
    p.add_argument("--lambda-sc", dest="lambda_sc", type=_positive_float, default=None)
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--negate-step", action="store_true")
    p.add_argument("--seed", type=_seed, default=0)


def build_parser():
    top = _Parser(prog="ciscrub", description="Sample unlearning with conditional-dependence block selection.")
    top.add_argument("--version", action="version", version=f"ciscrub {__version__}")
    sub = top.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a dense network on a labelled dataset")
    _data_args(p)
    p.add_argument("--hidden", type=_sizes, default=[], help="comma-separated hidden widths (empty: linear model)")
    p.add_argument("--hidden-nonlinearity", choices=("relu", "identity"), default="relu")
    p.add_argument("--loss", choices=("softmax_cross_entropy", "logistic"), default="softmax_cross_entropy")
    p.add_argument("--weight-decay", type=_nonneg_float, default=0.01)
    p.add_argument("--method", choices=("sgd", "lbfgs"), default="sgd")
    p.add_argument("--learning-rate", type=_positive_float, default=0.1)
    p.add_argument("--batch-size", type=_int_at_least(1), default=256)
    p.add_argument("--epochs", type=_int_at_least(0), default=50)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("unlearn", help="scrub samples from a trained checkpoint")
    p.add_argument("--model", required=True)
    _data_args(p)
    p.add_argument("--remove", required=True, help="index, comma list, or file of indices")
    p.add_argument("--val-data", default=None, help="held-out CSV for val_acc")
    p.add_argument("--accuracy-floor", type=_nonneg_float, default=None)
    _scrub_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)

    p = sub.add_parser("eval", help="metrics of a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    _data_args(p)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")

    p = sub.add_parser("mb-select", help="L-FOCI Markov-blanket selection on a CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--response", default=None, help="response column (default: last)")
    p.add_argument("--max-features", type=_int_at_least(1), default=64)
    p.add_argument("--seed-policy", choices=("fixed_per_run", "resample_per_call"), default="fixed_per_run")
    p.add_argument("--single-slice", action="store_true")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", default=None, help="JSON path (default: stdout)")

    p = sub.add_parser("codec", help="dependence coefficients between CSV columns")
    p.add_argument("--data", required=True)
    p.add_argument("--y", required=True, help="response column")
    p.add_argument("--z", required=True, help="comma-separated columns")
    p.add_argument("--x", default="", help="comma-separated conditioning columns")
    p.add_argument("--estimator", choices=("l-codec", "codec", "xi"), default="l-codec")
    p.add_argument("--scale-divisor", type=_positive_float, default=10.0)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("robust-scrub", help="filter gradient outliers and scrub them")
    p.add_argument("--model", required=True)
    _data_args(p)
    p.add_argument("--sigma-thresh", type=_nonneg_float, default=3.0)
    p.add_argument("--rho-max", type=_open_unit, default=0.1)
    p.add_argument("--max-rounds", type=_int_at_least(0), default=5)
    p.add_argument("--val-data", default=None)
    _scrub_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)

    p = sub.add_parser("bench", help="run an experiment suite and write CSV")
    p.add_argument("--suite", choices=BENCH_SUITES, required=True)
    p.add_argument("--n-values", type=_sizes, default=[128, 256, 512, 1024])
    p.add_argument("--seeds", type=_int_at_least(1), default=5, help="number of seeds")
    p.add_argument("--n", type=_int_at_least(2), default=10_000, help="sample count (tie, blanket)")
    p.add_argument("--levels", type=_int_at_least(2), default=5)
    p.add_argument("--family", choices=("chain", "xor-mixed"), default="chain")
    p.add_argument("--perturbations", type=_int_at_least(2), default=1000)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("gen", help="write a synthetic dataset as CSV")
    p.add_argument("--generator", required=True,
                   choices=("gaussian_blobs", "linear_gaussian_dag", "xor_blanket", "tie_heavy_discrete", "planted_outliers"))
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--meta", default=None, help="JSON path for ground-truth metadata")
    return top


def parse_cli(argv):
    """Parse and validate ``argv`` (without the program name) into a :class:`RunConfig`."""
    ns = build_parser().parse_args(argv)
    if ns.command is None:
        raise UsageError("ciscrub: a subcommand is required: " + ", ".join(SUBCOMMANDS))
    opts = {k: v for k, v in vars(ns).items() if k != "command"}
    if ns.command in ("unlearn", "robust-scrub") and not opts["no_noise"]:
        if opts["L_lip"] is None or opts["M_hess"] is None:
            raise UsageError(f"ciscrub {ns.command}: noise needs --L-lip and --M-hess (or pass --no-noise)")
    if ns.command == "gen":
        opts["param"] = _kv_params(opts["param"])
    return RunConfig(ns.command, opts)


def _kv_params(items):
    out = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise UsageError(f"ciscrub gen: --param expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


# --------------------------------------------------------------------------
# command implementations

def _load(o, label_key="label_column"):
    from .data import load_dataset

    return load_dataset(o["data"], o.get("format"), o.get(label_key), o.get("labels"))


def _unlearn_config(o):
    from .unlearn import UnlearnConfig

    return UnlearnConfig(
        epsilon=o["epsilon"], delta=o["delta"], m=o["perturbations"], perturb_sigma=o["perturb_sigma"],
        fd_step=o["fd_step"], max_block=o["max_block"], L_lip=o["L_lip"], M_hess=o["M_hess"],
        lambda_sc=o["lambda_sc"], seed=o["seed"], noise=not o["no_noise"], negate_step=o["negate_step"],
        max_features=o["max_features"], seed_policy=o["seed_policy"], single_slice_mode=o["single_slice"],
        accuracy_floor=o.get("accuracy_floor"),
    )


def _removals(spec):
    p = Path(spec)
    text = p.read_text() if p.is_file() else spec
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise FormatError(f"--remove: expected integer indices, got {spec!r}") from None


def _write_csv(path, header, rows):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    finally:
        if path:
            fh.close()


def _write_json(path, doc):
    text = json.dumps(doc, indent=2) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _labels_int(ds):
    y = np.asarray(ds.y)
    if not np.issubdtype(y.dtype, np.integer):
        raise FormatError(f"label column {ds.label!r} must hold integer class labels")
    return y


def cmd_train(o):
    from .model import TrainConfig, init_mlp, save_checkpoint, train

    ds = _load(o)
    y = _labels_int(ds)
    k = 1 if o["loss"] == "logistic" else int(y.max()) + 1
    model = init_mlp([ds.X.shape[1]] + o["hidden"] + [k], o["loss"], o["weight_decay"],
                     o["hidden_nonlinearity"], o["seed"])
    cfg = TrainConfig(o["learning_rate"], o["batch_size"], o["epochs"], o["seed"], o["method"])
    save_checkpoint(train(model, ds.X, y, cfg).model, o["out"])


def cmd_unlearn(o):
    from .data import read_csv
    from .model import load_checkpoint, save_checkpoint
    from .unlearn import scrub_sequence, write_report

    model = load_checkpoint(o["model"])
    ds = _load(o)
    Xv = yv = None
    if o["val_data"]:
        val = read_csv(o["val_data"], o["label_column"])
        Xv, yv = val.X, _labels_int(val)
    model, reports = scrub_sequence(model, ds.X, _labels_int(ds), _removals(o["remove"]), _unlearn_config(o), Xv, yv)
    save_checkpoint(model, o["out"])
    write_report(reports, o["report"])


def cmd_eval(o):
    from .evaluation import class_accuracy, residual_gradient_norm
    from .model import accuracy, forward, load_checkpoint

    model = load_checkpoint(o["model"])
    ds = _load(o)
    y = _labels_int(ds)
    rows = [
        ("n", ds.X.shape[0]),
        ("accuracy", accuracy(model, ds.X, y)),
        ("mean_loss", float(forward(model, ds.X, y).losses.mean())),
        ("grad_norm_layerwise", residual_gradient_norm(model, ds.X, y)),
        ("grad_norm_flat", residual_gradient_norm(model, ds.X, y, "flat")),
    ]
    rows += [(f"class_{c}_accuracy", class_accuracy(model, ds.X, y, c)) for c in np.unique(y)]
    _write_csv(o["out"], ("metric", "value"), rows)


def cmd_mb_select(o):
    from .data import read_csv
    from .selection import SelectionConfig, l_foci

    ds = read_csv(o["data"], o["response"])
    cfg = SelectionConfig(o["max_features"], o["seed"], o["seed_policy"], o["single_slice"])
    sel = l_foci(np.asarray(ds.y, dtype=float), ds.X, cfg)
    _write_json(o["out"], {
        "response": ds.label,
        "ordered_features": sel.ordered_features,
        "feature_names": [ds.columns[j] for j in sel.ordered_features],
        "gain_trace": sel.gain_trace,
        "stop_reason": sel.stop_reason,
    })


def _columns(ds, names, flag):
    table = {c: j for j, c in enumerate(ds.columns)}
    out = []
    for name in [s for s in names.split(",") if s]:
        if name not in table:
            raise FormatError(f"{flag}: no column {name!r} in {list(ds.columns)}")
        out.append(table[name])
    return ds.X[:, out] if out else None


def cmd_codec(o):
    from .data import read_csv
    from .rank_dependence import TieNoiseConfig, codec, l_codec, xi_coefficient

    ds = read_csv(o["data"], o["y"])
    y = np.asarray(ds.y, dtype=float)
    z = _columns(ds, o["z"], "--z")
    if z is None:
        raise UsageError("ciscrub codec: --z names no columns")
    x = _columns(ds, o["x"], "--x")
    noise = TieNoiseConfig(o["seed"], o["scale_divisor"])
    if o["estimator"] == "xi":
        if z.shape[1] != 1 or x is not None:
            raise UsageError("ciscrub codec: --estimator xi takes exactly one --z column and no --x")
        r = xi_coefficient(z[:, 0], y, noise)
    elif o["estimator"] == "codec":
        r = codec(y, z, x)
    else:
        r = l_codec(y, z, x, noise)
    _write_csv(o["out"], ("estimator", "value", "numerator", "denominator", "degenerate"),
               [(o["estimator"], r.value, r.numerator, r.denominator, int(r.degenerate))])


def cmd_robust_scrub(o):
    from .data import read_csv
    from .model import load_checkpoint, save_checkpoint
    from .robust import RobustConfig, robust_scrub
    from .unlearn import write_report

    model = load_checkpoint(o["model"])
    ds = _load(o)
    Xv = yv = None
    if o["val_data"]:
        val = read_csv(o["val_data"], o["label_column"])
        Xv, yv = val.X, _labels_int(val)
    cfg = RobustConfig(o["sigma_thresh"], o["rho_max"], o["max_rounds"], _unlearn_config(o))
    model, _, rounds = robust_scrub(model, ds.X, _labels_int(ds), cfg, Xv, yv)
    save_checkpoint(model, o["out"])
    write_report([rep for r in rounds for rep in r.reports], o["report"])


def cmd_bench(o):
    from . import evaluation as ev

    seeds = [seeding.child_seed(o["seed"], seeding.BASELINE, k) for k in range(o["seeds"])]
    suite = o["suite"]
    if suite == "gap":
        r = ev.gap_scaling_experiment(o["n_values"], seeds, ev.GapConfig(m=o["perturbations"]))
        rows = [(n, g, r.fitted_slope, int(r.undefined)) for n, g in zip(r.n_values, r.gaps)]
        _write_csv(o["out"], ("n", "mean_gap", "fitted_slope", "slope_undefined"), rows)
    elif suite == "tie":
        r = ev.tie_runtime_benchmark(o["n"], o["levels"], o["seed"])
        _write_csv(o["out"], tuple(r), [tuple(r.values())])
    elif suite == "blanket":
        from .data import LINEAR_CHAIN_8, XOR_MIXED_8
        from .selection import SelectionConfig, blanket_benchmark

        graph = LINEAR_CHAIN_8 if o["family"] == "chain" else XOR_MIXED_8
        rows = []
        for s in seeds:
            tpr, fpr, rt = blanket_benchmark(graph, o["n"], SelectionConfig(seed=s), s)
            rows.append((s, tpr, fpr, rt))
        _write_csv(o["out"], ("seed", "tpr", "fpr", "runtime_s"), rows)
    else:
        from .unlearn import UnlearnConfig

        rows = []
        for s in seeds:
            X, y, model = ev.selection_quality_fixture(s)
            idx = seeding.stream(s, seeding.BASELINE, 1).choice(len(y), 10, replace=False)
            q = ev.selection_quality_experiment(model, X, y, idx, UnlearnConfig(m=o["perturbations"], noise=False, seed=s))
            rows += [(s, int(i), a, b) for i, a, b in zip(idx, q.foci_gnorm, q.random_gnorm)]
        _write_csv(o["out"], ("seed", "sample_index", "foci_post_gnorm", "random_post_gnorm"), rows)


def cmd_gen(o):
    from .data import SyntheticSpec, generate_synthetic, save_csv

    ds = generate_synthetic(SyntheticSpec(o["generator"], o["param"], o["seed"]))
    save_csv(ds, o["out"])
    if o["meta"]:
        _write_json(o["meta"], {k: v for k, v in ds.meta.items() if k in ("blanket", "outliers", "levels")})


COMMANDS = {
    "train": cmd_train,
    "unlearn": cmd_unlearn,
    "eval": cmd_eval,
    "mb-select": cmd_mb_select,
    "codec": cmd_codec,
    "robust-scrub": cmd_robust_scrub,
    "bench": cmd_bench,
    "gen": cmd_gen,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_cli(argv)
        COMMANDS[cfg.command](cfg.options)
    except CiscrubError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
