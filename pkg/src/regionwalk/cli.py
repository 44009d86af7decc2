"""Command-line pipeline: paths -> discover -> deviation -> stats, plus toy training.

Exit codes: 0 success, 1 usage error, 2 unreadable or inconsistent data,
3 numeric anomaly (a discover run with terminal events still writes its
output, then exits 3). REGIONS_LOG sets the log level (debug/info/...).
All commands are deterministic given --seed; worker count never changes
results, only wall-clock time.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, NumericError
from . import modelio, paths as pathsmod, stats as statsmod, toytrain
from .discovery import (BATCH_DEFAULT, TAU_DEFAULT, TERMINATION_NONE, SegmentTask,
                        rebuild_trace, trace_batch, trace_record)
from .deviation import absolute_deviation, deviation_record, path_deviation
from .modelio import load_model, model_paths, read_tensor, save_model

log = logging.getLogger("regionwalk.cli")


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    p = _Parser(prog="regionwalk",
                description="Linear-region discovery and path deviation for ReLU networks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pp = sub.add_parser("paths", help="build measurement paths")
    mode = pp.add_mutually_exclusive_group()
    mode.add_argument("--noise", action="store_true", help="synthetic uniform-noise base images")
    mode.add_argument("--open", action="store_true", help="open translation chains instead of loops")
    pp.add_argument("--images", nargs="+", default=None, help="input image tensors (.rten, CHW)")
    pp.add_argument("--radius", type=float, default=pathsmod.RADIUS_DEFAULT)
    pp.add_argument("--anchors", type=int, default=pathsmod.ANCHORS_DEFAULT)
    pp.add_argument("--pad", type=int, default=None, help="reflection padding (default ceil(radius))")
    pp.add_argument("--norm-stats", default=None,
                    help="prefix of <p>.mean.rten/<p>.std.rten applied after translation")
    pp.add_argument("--noise-stats", default=None,
                    help="prefix of per-pixel <p>.mean.rten/<p>.std.rten for --noise")
    pp.add_argument("--n-paths", type=int, default=1, help="number of noise paths")
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--shift-px", type=float, default=1.0, help="per-step shift for --open")
    pp.add_argument("--steps", type=int, default=3, help="segments per open path")
    pp.add_argument("--out", required=True, help="output directory")

    pd = sub.add_parser("discover", help="trace linear regions along stored paths")
    pd.add_argument("--model", required=True, help="model prefix (expects .manifest.json/.weights.bin)")
    pd.add_argument("--paths", required=True, help="path index.json")
    pd.add_argument("--tau", type=float, default=TAU_DEFAULT)
    pd.add_argument("--batch", type=int, default=BATCH_DEFAULT)
    pd.add_argument("--workers", type=int, default=1)
    pd.add_argument("--out", required=True, help="trace output (.jsonl)")

    pv = sub.add_parser("deviation", help="score traced paths against the endpoint interpolant")
    pv.add_argument("--model", required=True)
    pv.add_argument("--paths", required=True)
    pv.add_argument("--trace", required=True, help="trace .jsonl from discover")
    pv.add_argument("--out", required=True, help="deviation output (.jsonl)")

    ps = sub.add_parser("stats", help="summaries over deviation files")
    ps.add_argument("--inputs", nargs="+", required=True)
    ps.add_argument("--metric", required=True, choices=["ecdf", "spearman", "paired", "medians"])
    ps.add_argument("--field", default="deviation", choices=["deviation", "density"])
    ps.add_argument("--include-partial", action="store_true",
                    help="keep paths flagged partial (excluded by default)")
    ps.add_argument("--out", required=True, help="output .csv")

    pt = sub.add_parser("toy", help="train small synthetic classifiers")
    tsub = pt.add_subparsers(dest="toy_command", required=True, parser_class=_Parser)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--kind", default="spirals", choices=list(toytrain.DATASET_KINDS))
    common.add_argument("--n", type=int, default=256)
    common.add_argument("--classes", type=int, default=3)
    common.add_argument("--noise", type=float, default=0.0)
    common.add_argument("--lr", type=float, default=0.1)
    common.add_argument("--momentum", type=float, default=0.9)
    common.add_argument("--epochs", type=int, default=200)
    common.add_argument("--batch-size", type=int, default=32)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=True, help="output directory")
    tt = tsub.add_parser("train", parents=[common], help="train one model")
    tt.add_argument("--widths", default="16,16", help="hidden widths, comma separated")
    tw = tsub.add_parser("sweep", parents=[common], help="retrain across widths and measure paths")
    tw.add_argument("--widths", default="1,2,4,8,16,32")
    tw.add_argument("--depth", type=int, default=2, help="hidden layers per model")
    tw.add_argument("--test-n", type=int, default=512)
    tw.add_argument("--loops", type=int, default=16, help="measurement loops around data points")
    tw.add_argument("--loop-radius", type=float, default=0.3)
    tw.add_argument("--loop-anchors", type=int, default=6)
    tw.add_argument("--tau", type=float, default=TAU_DEFAULT)
    return p


def _read_jsonl(path) -> list[dict]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from e
    out = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}:{i + 1}: bad JSON line: {e}") from e
    return out


def _write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _stats_pair(prefix) -> tuple[np.ndarray, np.ndarray]:
    mean = read_tensor(str(prefix) + ".mean.rten")
    std = read_tensor(str(prefix) + ".std.rten")
    return mean, std


def _segment_tasks(path_list, tau: float) -> list[SegmentTask]:
    tasks = []
    for p in path_list:
        for i, (a, b) in enumerate(p.segments):
            tasks.append(SegmentTask.from_endpoints(
                a, b, tau=tau, segment_id=f"{p.path_id}:{i}", path_id=p.path_id))
    return tasks


def cmd_paths(args) -> int:
    if args.noise:
        if not args.noise_stats:
            raise InputError("--noise requires --noise-stats")
        mean, std = _stats_pair(args.noise_stats)
        built = pathsmod.build_noise_paths(mean, std, r=args.radius, count=args.anchors,
                                           seed=args.seed, n_paths=args.n_paths, pad=args.pad)
    else:
        if not args.images:
            raise InputError("--images is required unless --noise is given")
        images = [read_tensor(f) for f in args.images]
        norm = _stats_pair(args.norm_stats) if args.norm_stats else None
        if args.open:
            built = pathsmod.build_open_paths(images, shift_px=args.shift_px,
                                              steps=args.steps, pad=args.pad)
        else:
            built = pathsmod.build_circular_paths(images, r=args.radius, count=args.anchors,
                                                  pad=args.pad, normalize=norm)
    if not built:
        raise InputError("no usable paths were built")
    index = pathsmod.save_paths(built, args.out)
    log.info("wrote %d paths to %s", len(built), index)
    print(index)
    return 0


def cmd_discover(args) -> int:
    net = load_model(*model_paths(args.model))
    path_list = pathsmod.load_paths(args.paths)
    tasks = _segment_tasks(path_list, args.tau)
    log.info("tracing %d segments over %d paths", len(tasks), len(path_list))
    traces = trace_batch(net, tasks, batch_size=args.batch, workers=args.workers)
    _write_jsonl(args.out, (trace_record(t) for t in traces))
    anomalies = sum(1 for t in traces if t.termination != TERMINATION_NONE)
    if anomalies:
        print(f"regionwalk discover: {anomalies} of {len(traces)} segments "
              f"ended in a terminal event", file=sys.stderr)
        return 3
    return 0


def cmd_deviation(args) -> int:
    net = load_model(*model_paths(args.model))
    path_list = pathsmod.load_paths(args.paths)
    by_segment = {}
    for rec in _read_jsonl(args.trace):
        by_segment[rec["segment_id"]] = rec
    records = []
    for p in path_list:
        scores = []
        for i, (a, b) in enumerate(p.segments):
            sid = f"{p.path_id}:{i}"
            rec = by_segment.get(sid)
            if rec is None:
                raise InputError(f"trace file has no entry for segment {sid}")
            task = SegmentTask.from_endpoints(a, b, segment_id=sid, path_id=p.path_id)
            trace = rebuild_trace(net, task, rec["boundaries_t"],
                                  rec.get("terminations", TERMINATION_NONE))
            scores.append(absolute_deviation(net, task, trace))
        records.append(deviation_record(path_deviation(scores)))
    _write_jsonl(args.out, records)
    log.info("scored %d paths", len(records))
    return 0


def _load_runs(inputs, include_partial: bool) -> list[tuple[str, list[dict]]]:
    runs = []
    for f in inputs:
        recs = _read_jsonl(f)
        kept = [r for r in recs if include_partial or not r.get("partial")]
        if not kept:
            raise InputError(f"{f}: no usable paths (all partial?)")
        runs.append((Path(f).name, kept))
    return runs


def _field_values(recs: list[dict], field: str) -> np.ndarray:
    key = "deviation_l2" if field == "deviation" else "density"
    return np.array([float(r[key]) for r in recs])


def _cell(v) -> str:
    # repr of a builtin float is the shortest round-trip form; numpy scalars
    # would render as np.float64(...) so coerce first
    return repr(float(v))


def cmd_stats(args) -> int:
    runs = _load_runs(args.inputs, args.include_partial)
    metric = args.metric
    if metric == "ecdf":
        rows = []
        for name, recs in runs:
            values = np.sort(_field_values(recs, args.field))
            n = values.size
            rows.extend((name, _cell(v), _cell((i + 1) / n)) for i, v in enumerate(values))
        _write_csv(args.out, ["source", "value", "cdf"], rows)
    elif metric == "spearman":
        rows = []
        for name, recs in runs:
            rho = statsmod.spearman(_field_values(recs, "density"),
                                    _field_values(recs, "deviation"))
            rows.append((name, len(recs), _cell(rho)))
        _write_csv(args.out, ["source", "n", "spearman_density_deviation"], rows)
    elif metric == "paired":
        if len(runs) != 2:
            raise InputError("--metric paired needs exactly two inputs")
        (name_a, recs_a), (name_b, recs_b) = runs
        a = {r["path_id"]: r for r in recs_a}
        b = {r["path_id"]: r for r in recs_b}
        if set(a) != set(b):
            raise InputError(f"path ids differ between {name_a} and {name_b}")
        ids = sorted(a)
        rows = []
        for field in ("deviation", "density"):
            da = _field_values([a[i] for i in ids], field)
            db = _field_values([b[i] for i in ids], field)
            rows.append((field, len(ids), _cell(statsmod.positive_fraction(db - da))))
        _write_csv(args.out, ["field", "n", "positive_fraction_b_minus_a"], rows)
    else:  # medians
        rows = []
        for field in ("deviation", "density"):
            mean, std = statsmod.median_summary(
                [_field_values(recs, field) for _, recs in runs])
            rows.append((field, len(runs), _cell(mean), _cell(std)))
        _write_csv(args.out, ["field", "runs", "mean_of_medians", "std_of_medians"], rows)
    return 0


def _parse_widths(text) -> tuple[int, ...]:
    try:
        widths = tuple(int(w) for w in str(text).split(",") if w)
    except ValueError as e:
        raise InputError(f"bad widths {text!r}") from e
    if not widths:
        raise InputError("widths is empty")
    return widths


def cmd_toy(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = toytrain.make_dataset(args.kind, args.n, classes=args.classes,
                                    noise_fraction=args.noise, seed=args.seed)
    if args.toy_command == "train":
        config = toytrain.TrainConfig(widths=_parse_widths(args.widths), lr=args.lr,
                                      momentum=args.momentum, epochs=args.epochs,
                                      batch_size=args.batch_size, seed=args.seed)
        result = toytrain.train(dataset, config)
        save_model(result.network, *model_paths(out / "model"))
        _write_csv(out / "metrics.csv", ["epoch", "loss", "accuracy"],
                   [(h.epoch, _cell(h.loss), _cell(h.accuracy)) for h in result.history])
        final = result.history[-1] if result.history else None
        log.info("trained %s: %s", dataset.points.shape, result.network)
        print(f"final epoch {final.epoch}: loss {final.loss:.6f} "
              f"accuracy {final.accuracy:.4f}" if final else "no epochs run")
        return 0

    # sweep
    widths = _parse_widths(args.widths)
    test_set = toytrain.make_dataset(args.kind, args.test_n, classes=args.classes,
                                     noise_fraction=0.0, seed=args.seed + 1)
    config = toytrain.TrainConfig(widths=tuple(1 for _ in range(args.depth)), lr=args.lr,
                                  momentum=args.momentum, epochs=args.epochs,
                                  batch_size=args.batch_size, seed=args.seed)
    sweep_points = toytrain.width_sweep(dataset, test_set, widths, config)
    loop_count = min(args.loops, dataset.points.shape[0])
    loops = pathsmod.build_point_loops(dataset.points[:loop_count], radius=args.loop_radius,
                                       count=args.loop_anchors,
                                       labels=dataset.labels[:loop_count])
    tasks = _segment_tasks(loops, args.tau)
    rows = []
    for pt in sweep_points:
        save_model(pt.network, *model_paths(out / f"w{pt.width:03d}"))
        traces = trace_batch(pt.network, tasks)
        by_path: dict[str, list] = {}
        for task, trace in zip(tasks, traces):
            by_path.setdefault(task.path_id, []).append(
                absolute_deviation(pt.network, task, trace))
        full = [path_deviation(s) for s in by_path.values()]
        usable = [s for s in full if not s.partial]
        if usable:
            den_med = statsmod.lower_median([s.density for s in usable])
            dev_med = statsmod.lower_median([s.l2 for s in usable])
        else:
            den_med = dev_med = float("nan")
        rows.append((pt.width, _cell(pt.train_error), _cell(pt.test_error),
                     _cell(den_med), _cell(dev_med), len(full) - len(usable)))
        log.info("width %d: train_err %.4f test_err %.4f density_med %s",
                 pt.width, pt.train_error, pt.test_error, den_med)
    _write_csv(out / "sweep.csv",
               ["width", "train_error", "test_error", "density_median",
                "deviation_median", "partial_paths"], rows)
    print(out / "sweep.csv")
    return 0


_COMMANDS = {
    "paths": cmd_paths,
    "discover": cmd_discover,
    "deviation": cmd_deviation,
    "stats": cmd_stats,
    "toy": cmd_toy,
}


def main(argv=None) -> int:
    level = os.environ.get("REGIONS_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(name)s %(levelname)s %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (InputError, FormatError) as e:
        print(f"regionwalk: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"regionwalk: error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"regionwalk: numeric anomaly: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
