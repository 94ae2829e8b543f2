"""``bloblib`` command line.

Exit codes: 0 success, 1 usage error, 2 I/O or format error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .components import Connectivity, component_sizes, label_components
from .config import acceptance_config_path, load_experiment, load_synth_spec
from .errors import FormatError, NumericalError, UsageError
from .experiment import (format_csv, format_markdown, compare, history_csv,
                         per_seed_csv, run)
from .losses import BaseLoss, BlobLossConfig, blob_loss
from .metrics import MATCHING_MODES, full_report
from .synth import generate, shape_features
from .train import write_model
from .volume import InstanceLabeling, read_volume, write_volume

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(text: str) -> None:
    sys.stdout.write(text)


def _read(path, expected, what):
    v = read_volume(path)
    if expected == "prob":
        if isinstance(v, InstanceLabeling) or v.dtype != np.float64:
            raise FormatError(f"{path}: {what} must be a probability volume (dtype 0)")
    elif expected == "mask":
        if isinstance(v, InstanceLabeling):
            return v.foreground
        if v.dtype != np.bool_:
            raise FormatError(f"{path}: {what} must be a binary mask (dtype 1)")
    return v


def _labels_from(path, conn):
    v = read_volume(path)
    if isinstance(v, InstanceLabeling):
        return v
    if v.dtype == np.bool_:
        return label_components(v, conn)
    raise FormatError(f"{path}: expected instance labels (dtype 2) or a mask (dtype 1)")


def cmd_cc(args) -> int:
    mask = _read(args.inp, "mask", "input")
    labels = label_components(mask, args.connectivity)
    write_volume(args.out, labels)
    if args.json:
        _emit(_dumps({"connectivity": int(args.connectivity),
                      "n_instances": labels.n_instances,
                      "sizes": [s for _, s in component_sizes(labels)]}))
    else:
        _emit(f"n_instances {labels.n_instances}\n")
    return EXIT_OK


def cmd_loss(args) -> int:
    p = _read(args.pred, "prob", "prediction")
    g = _read(args.gt, "mask", "ground truth")
    if args.base == "tversky":
        if args.tversky_a is None or args.tversky_b is None:
            raise UsageError("--base tversky requires --tversky-a and --tversky-b")
        base = BaseLoss("tversky", args.tversky_a, args.tversky_b, args.epsilon)
    else:
        base = BaseLoss("soft-dice", epsilon=args.epsilon)
    cfg = BlobLossConfig(args.alpha, args.beta, base, masking_enabled=not args.no_masking)
    labels = _labels_from(args.labels, args.connectivity) if args.labels else None
    res = blob_loss(p, g, labels, cfg, conn=args.connectivity)
    out = {"value": res.value, "global_term": res.global_term,
           "blob_term": res.blob_term, "n_instances": res.n_instances}
    if args.json:
        _emit(_dumps(out))
    else:
        _emit("".join(f"{k} {out[k]!r}\n" for k in ("value", "global_term", "blob_term",
                                                     "n_instances")))
    return EXIT_OK


def cmd_eval(args) -> int:
    p = _read(args.pred, "prob", "prediction")
    g = _read(args.gt, "mask", "ground truth")
    report = full_report(p, g, args.threshold, args.connectivity, args.tol,
                         args.matching, args.min_overlap).to_dict()
    if args.csv:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(report))
        writer.writerow([repr(v) for v in report.values()])
        _emit(buf.getvalue())
    else:
        _emit(_dumps(report))
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = load_synth_spec(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    intensity, gt = generate(spec)
    prefix = str(args.out_prefix)
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    paths = {"intensity": prefix + "_intensity.blv", "gt": prefix + "_gt.blv"}
    write_volume(paths["intensity"], intensity)
    write_volume(paths["gt"], gt)
    labels = label_components(gt, Connectivity.FACE)
    info = {"files": paths, "n_instances": labels.n_instances, "seed": spec.seed,
            "foreground_voxels": int(gt.sum())}
    _emit(_dumps(info) if args.json else f"wrote {paths['intensity']} {paths['gt']}\n")
    return EXIT_OK


SHAPE_COLUMNS = ("instance", "volume", "compactness", "sphereness", "stringness",
                 "skewness", "sphereness_raw")


def cmd_shapes(args) -> int:
    labels = _labels_from(args.labels, args.connectivity)
    rows = []
    for n in range(1, labels.n_instances + 1):
        feats = shape_features(labels.labels == n).to_dict()
        rows.append({"instance": n, **feats})
    if args.json:
        _emit(_dumps(rows))
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SHAPE_COLUMNS)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in SHAPE_COLUMNS])
        _emit(buf.getvalue())
    return EXIT_OK


def _output_dir(args, cfg) -> Path:
    out = args.out or cfg.output
    if not out:
        raise UsageError("no output directory: pass --out or set 'output' in the config")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FormatError(f"cannot create {out}: {exc.strerror or exc}") from exc
    return out


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror or exc}") from exc


def cmd_train(args) -> int:
    cfg = load_experiment(args.config)
    out = _output_dir(args, cfg)
    result = run(cfg, seed=args.seed)
    _write_text(out / "history.csv", history_csv(result.history))
    write_model(out / "model.bin", result.model)
    report = {"seed": result.seed, "selected_epoch": result.selected_epoch,
              "checkpoint_policy": cfg.train.checkpoint_policy,
              "weights": result.model.weights.tolist(), "bias": result.model.bias,
              "test": result.report.to_dict(), "config": cfg.to_dict()}
    _write_text(out / "report.json", _dumps(report))
    if args.json:
        _emit(_dumps({"out": str(out), "selected_epoch": result.selected_epoch,
                      "test": result.report.to_dict()}))
    else:
        _emit(f"wrote {out / 'history.csv'}, {out / 'model.bin'}, {out / 'report.json'}\n")
    return EXIT_OK


def _parse_seeds(text: str) -> list[int]:
    try:
        if "," in text or "-" in text.strip("-"):
            seeds = []
            for part in text.split(","):
                if "-" in part:
                    lo, hi = (int(v) for v in part.split("-"))
                    seeds.extend(range(lo, hi + 1))
                else:
                    seeds.append(int(part))
        else:
            n = int(text)
            if n < 1:
                raise ValueError
            seeds = list(range(1, n + 1))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected a count N (seeds 1..N) or a list like 1,2,7 or 1-5: {text!r}") from None
    return seeds


def cmd_compare(args) -> int:
    cfg = load_experiment(args.config)
    results = compare(cfg, args.seeds)
    table = format_markdown(results) if args.format == "md" else format_csv(results)
    if args.out:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise FormatError(f"cannot create {out}: {exc.strerror or exc}") from exc
        _write_text(out / "compare.md", format_markdown(results))
        _write_text(out / "compare.csv", format_csv(results))
        _write_text(out / "per_seed.csv", per_seed_csv(results))
    _emit(table)
    return EXIT_OK


def _conn(value):
    try:
        return Connectivity.parse(value)
    except UsageError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bloblib", description="Blob loss toolkit: labeling, losses, metrics, synthetic training.",
                     epilog="Exit codes: 0 ok, 1 usage, 2 I/O/format, 3 numerical.")
    parser.add_argument("--version", action="version", version=f"bloblib {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("cc", help="label connected components of a mask")
    p.add_argument("--in", dest="inp", required=True, help="input mask (.blv)")
    p.add_argument("--out", required=True, help="output labels (.blv)")
    p.add_argument("--connectivity", type=_conn, default=Connectivity.VERTEX,
                   help="6, 18 or 26 (default 26)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_cc)

    p = sub.add_parser("loss", help="evaluate the blob loss for one prediction")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--labels", help="instance labels; derived from --gt if omitted")
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--base", choices=("dice", "tversky"), default="dice")
    p.add_argument("--tversky-a", type=float)
    p.add_argument("--tversky-b", type=float)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--no-masking", action="store_true", help="ablation: skip domain masks")
    p.add_argument("--connectivity", type=_conn, default=Connectivity.VERTEX)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("eval", help="volumetric and instance metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--connectivity", type=_conn, default=Connectivity.VERTEX)
    p.add_argument("--tol", type=float, default=1.0)
    p.add_argument("--matching", choices=MATCHING_MODES, default="greedy")
    p.add_argument("--min-overlap", type=int, default=1)
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true", help="(default)")
    fmt.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate one synthetic sample")
    p.add_argument("--spec", required=True, help="SynthSpec JSON")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("shapes", help="shape features per instance")
    p.add_argument("--labels", required=True, help="labels (dtype 2) or mask (dtype 1)")
    p.add_argument("--connectivity", type=_conn, default=Connectivity.VERTEX)
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--csv", action="store_true", help="(default)")
    fmt.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_shapes)

    p = sub.add_parser("train", help="train one model from an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="paired base vs blob loss over several seeds")
    p.add_argument("--config", default=None,
                   help="experiment config (default: the bundled acceptance config)")
    p.add_argument("--seeds", type=_parse_seeds, default=_parse_seeds("5"),
                   help="N for seeds 1..N, or a list such as 1,2,7 or 1-5")
    p.add_argument("--format", choices=("md", "csv"), default="md")
    p.add_argument("--out", help="also write compare.md, compare.csv, per_seed.csv here")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    if args.command == "compare" and args.config is None:
        args.config = acceptance_config_path()
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bloblib {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"bloblib {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"bloblib {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
