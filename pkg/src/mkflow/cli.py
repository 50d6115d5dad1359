"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 a verification
command (oracle-check) found a mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from mkflow.classify import (
    DEFAULT_KAPPAS,
    LabeledDataset,
    Metric,
    default_workers,
    distance_matrix,
    evaluate,
    format_sweep,
    kappa_sweep,
    read_labels,
    read_matrix_csv,
    write_matrix_csv,
    write_sweep_csv,
)
from mkflow.distributions import DEFAULT_RESOLUTION, GroundCost
from mkflow.errors import FormatError, InvalidArgument
from mkflow.imaging import downsample_bicubic, l2_distance, load_pgm, to_distribution
from mkflow.oracle import compare_random
from mkflow.synth import SynthSpec, generate
from mkflow.transport import unbalanced_distance

log = logging.getLogger("mkflow")

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MISMATCH = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        w, h = int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return w, h


def _kappas(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values or any(not (v > 0) for v in values):
        raise argparse.ArgumentTypeError("kappas must be positive")
    return values


def _fraction(text: str) -> float:
    try:
        if "/" in text:
            num, den = text.split("/")
            return float(num) / float(den)
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected a fraction, got {text!r}") from None


def _add_metric_flags(p: argparse.ArgumentParser, with_metric: bool = True):
    if with_metric:
        p.add_argument("--metric", choices=("mk", "l2"), default="mk")
        p.add_argument("--kappa", type=float, default=1.0, help="mass creation/destruction price")
    p.add_argument("--p", type=float, default=1.0, help="ground cost exponent")
    p.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION,
                   help="quantization units per distribution")
    p.add_argument("--normalize", action="store_true", help="scale every image to unit mass")


def _add_synth_flags(p: argparse.ArgumentParser):
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=60)
    p.add_argument("--size", type=_size, default=(29, 24), help="image size WxH")
    p.add_argument("--jitter", type=float, default=2.0, help="max translation in pixels")
    p.add_argument("--noise", type=float, default=0.05, help="half-normal noise scale")
    p.add_argument("--synth-seed", type=int, default=0)


def _synth_spec(args) -> SynthSpec:
    w, h = args.size
    try:
        return SynthSpec(classes=args.classes, per_class=args.per_class, width=w, height=h,
                         jitter_px=args.jitter, noise_sigma=args.noise, seed=args.synth_seed)
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None


def _metric(args) -> Metric:
    try:
        return Metric(args.metric, args.kappa, args.p, args.resolution)
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None


def _load_image(path: str, resize):
    try:
        img = load_pgm(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    except FormatError as exc:
        raise DataError(f"{path}: {exc}") from None
    if resize is not None:
        img = downsample_bicubic(img, *resize)
    return img


def load_dataset(directory: str, labels_path: str, normalize: bool = False, resize=None) -> LabeledDataset:
    """PGM files of ``directory`` in labels.csv order; every file needs a label and vice versa."""
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"{directory} is not a directory")
    try:
        labels = read_labels(labels_path)
    except OSError as exc:
        raise DataError(f"cannot read {labels_path}: {exc.strerror or exc}") from None
    except FormatError as exc:
        raise DataError(str(exc)) from None
    files = {p.stem: p for p in sorted(root.glob("*.pgm"))}
    for stem, path in files.items():
        if stem not in labels:
            raise DataError(f"no label for {path.name} in {labels_path}")
    for item_id in labels:
        if item_id not in files:
            raise DataError(f"label for {item_id!r} has no file {item_id}.pgm in {directory}")
    ids = list(labels)
    items = [to_distribution(_load_image(str(files[i]), resize), normalize=normalize) for i in ids]
    if any(f.grid != items[0].grid for f in items):
        raise DataError("images differ in size; pass --resize WxH")
    return LabeledDataset(ids, items, [labels[i] for i in ids])


def cmd_distance(args) -> int:
    a = _load_image(args.image_a, args.resize)
    b = _load_image(args.image_b, args.resize)
    if (a.width, a.height) != (b.width, b.height):
        raise DataError(f"image sizes differ ({a.width}x{a.height} vs {b.width}x{b.height}); use --resize")
    f0 = to_distribution(a, normalize=args.normalize)
    f1 = to_distribution(b, normalize=args.normalize)
    metric = _metric(args)
    if metric.kind == "l2":
        out = {"metric": "l2", "value": l2_distance(f0, f1)}
    else:
        result = unbalanced_distance(f0, f1, GroundCost.on(f0.grid, args.p), args.kappa, args.resolution)
        out = {"metric": metric.tag, **result.to_dict(), "p": args.p}
    if args.json:
        print(json.dumps(out))
    else:
        print(f"{out['value']:.12g}")
    return 0


def cmd_matrix(args) -> int:
    data = load_dataset(args.dir, args.labels, args.normalize, args.resize)
    metric = _metric(args)
    t0 = time.perf_counter()
    dm = distance_matrix(data, metric, args.workers)
    write_matrix_csv(dm, args.out)
    log.info("%d x %d %s matrix in %.1fs -> %s", dm.n, dm.n, dm.metric_tag, time.perf_counter() - t0, args.out)
    return 0


def cmd_classify(args) -> int:
    try:
        dm = read_matrix_csv(args.matrix)
        labels = read_labels(args.labels)
    except OSError as exc:
        raise DataError(f"cannot read input: {exc}") from None
    except (FormatError, InvalidArgument) as exc:
        raise DataError(str(exc)) from None
    if dm.n != len(labels):
        raise DataError(f"matrix has {dm.n} rows but {args.labels} lists {len(labels)} items")
    try:
        report = evaluate(dm, np.array(list(labels.values())), args.train_frac, args.repeats, args.seed)
    except InvalidArgument as exc:
        raise DataError(str(exc)) from None
    print(report.summary())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("metric,repeats,mean_error,ci_low,ci_high,seed,train_fraction\n")
            fh.write(f"{report.metric_tag},{report.repeats},{report.mean_error:.6f},"
                     f"{report.ci_low:.6f},{report.ci_high:.6f},{report.seed},{report.train_fraction:.6f}\n")
    if args.errors_out:
        with open(args.errors_out, "w") as fh:
            fh.write("repeat,error\n")
            for r, e in enumerate(report.per_repeat_error):
                fh.write(f"{r},{e:.6f}\n")
    return 0


def cmd_sweep(args) -> int:
    if args.synth:
        data = generate(_synth_spec(args))
        if args.normalize:
            items = [f.scaled(1.0 / f.total_mass) if f.total_mass > 0 else f for f in data.items]
            data = LabeledDataset(data.ids, items, data.labels)
    else:
        if not (args.dir and args.labels):
            raise UsageError("sweep needs --synth or both --dir and --labels")
        data = load_dataset(args.dir, args.labels, args.normalize, args.resize)
    t0 = time.perf_counter()
    matrices = {} if args.matrix_dir else None
    rows = kappa_sweep(data, args.kappas, args.p, args.resolution, args.train_frac, args.repeats,
                       args.seed, args.workers, matrices=matrices)
    print(format_sweep(rows))
    log.info("sweep over %d items took %.1fs", len(data), time.perf_counter() - t0)
    if args.out:
        write_sweep_csv(rows, args.out)
    if matrices is not None:
        out = Path(args.matrix_dir)
        out.mkdir(parents=True, exist_ok=True)
        for tag, dm in matrices.items():
            write_matrix_csv(dm, out / (tag.replace(":", "_").replace("=", "") + ".csv"))
    return 0


def cmd_synth(args) -> int:
    spec = _synth_spec(args)
    data = generate(spec, args.out)
    print(f"wrote {len(data)} images and labels.csv to {args.out}")
    return 0


def cmd_oracle_check(args) -> int:
    if args.trials < 1 or args.max_size < 1:
        raise UsageError("--trials and --max-size must be positive")
    records = compare_random(args.trials, args.max_size, args.seed, args.resolution)
    matched = sum(r.matched for r in records)
    for r in records:
        if not r.matched:
            print(f"trial {r.trial}: {r.shape} kappa={r.kappa:g} flow={r.flow_value!r} lp={r.lp_value!r}")
    print(f"{matched}/{len(records)} matched")
    return 0 if matched == len(records) else EXIT_MISMATCH


def bench_pair(size, kappas, resolution=DEFAULT_RESOLUTION, seed=0, repeat=3, p=1.0):
    """Time unbalanced solves of one synthetic pair at each kappa (best of ``repeat``)."""
    w, h = size
    spec = SynthSpec(classes=3, per_class=1, width=w, height=h,
                     jitter_px=min(2.0, min(w, h) / 4 - 1e-9), seed=seed)
    data = generate(spec)
    f0, f1 = data.items[0], data.items[1]
    c = GroundCost.on(f0.grid, p)
    unbalanced_distance(f0, f1, c, kappas[0], resolution)  # load the compiled solver
    rows = []
    for kappa in kappas:
        best = math.inf
        for _ in range(repeat):
            t = time.perf_counter()
            result = unbalanced_distance(f0, f1, c, kappa, resolution)
            best = min(best, time.perf_counter() - t)
        rows.append({
            "size": f"{w}x{h}", "kappa": kappa, "value": result.value,
            "edges_before_prune": result.stats.edges_before_prune,
            "edges_after_prune": result.stats.edges_after_prune,
            "iterations": result.stats.simplex_iterations, "seconds": best,
        })
    return rows


def cmd_bench(args) -> int:
    rows = []
    for size in args.size or [(29, 24), (58, 48)]:
        rows += bench_pair(size, args.kappas, args.resolution, args.seed, args.repeat, args.p)
    if args.json:
        print(json.dumps(rows))
        return 0
    print(f"{'size':>7} {'kappa':>7} {'edges':>9} {'kept':>9} {'pivots':>7} {'seconds':>9}")
    for r in rows:
        print(f"{r['size']:>7} {r['kappa']:>7g} {r['edges_before_prune']:>9} {r['edges_after_prune']:>9} "
              f"{r['iterations']:>7} {r['seconds']:>9.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mkflow", description="Unbalanced optimal transport distances via min-cost flow.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("distance", help="distance between two PGM images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    _add_metric_flags(p)
    p.add_argument("--resize", type=_size, help="bicubic resize both images to WxH first")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("matrix", help="pairwise distance matrix of a labeled PGM directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--labels", required=True)
    _add_metric_flags(p)
    p.add_argument("--resize", type=_size)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("classify", help="repeated nearest-neighbour evaluation of a distance matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--train-frac", type=_fraction, default=1 / 3)
    p.add_argument("--repeats", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report CSV")
    p.add_argument("--errors-out", help="per-repeat error CSV")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("sweep", help="error rate across kappa values plus the l2 baseline")
    p.add_argument("--dir")
    p.add_argument("--labels")
    p.add_argument("--synth", action="store_true", help="use a generated dataset")
    _add_synth_flags(p)
    p.add_argument("--kappas", type=_kappas, default=list(DEFAULT_KAPPAS))
    _add_metric_flags(p, with_metric=False)
    p.add_argument("--resize", type=_size)
    p.add_argument("--train-frac", type=_fraction, default=1 / 3)
    p.add_argument("--repeats", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", help="sweep table CSV")
    p.add_argument("--matrix-dir", help="also save every distance matrix here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a synthetic labeled dataset")
    _add_synth_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("oracle-check", help="compare the flow solver with the dense LP oracle")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--max-size", type=int, default=4, help="largest grid side")
    p.add_argument("--resolution", type=int, default=10**4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("bench", help="time single-pair solves across kappa and image size")
    p.add_argument("--size", type=_size, action="append", help="WxH, repeatable")
    p.add_argument("--kappas", type=_kappas, default=[1.0, 16.0, 32.0])
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "workers", None) is None and hasattr(args, "workers"):
        args.workers = default_workers()
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mkflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"mkflow: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvalidArgument as exc:
        print(f"mkflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
