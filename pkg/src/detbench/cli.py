"""Command-line surface.

Subcommands: convert, split, eval, nms, pareto, bench, train-toy. Every flag
can also be supplied through ``--config FILE`` (``key = value`` lines, dashes
or underscores in keys, ``#`` comments); explicit flags win over the file.

Exit codes: 0 success, 1 bad input or usage, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import data_io, evaluation, losses, optimizer, postproc

_HARD_DEFAULTS = {
    "seed": 0,
    "output_dir": ".",
    "format": "csv",
    "fractions": "0.5,0.5",
    "input_format": "voc",
    "gt_format": "csv",
    "image_size": "",
    "iou_mode": "coco",
    "pr_conf": postproc.DEPLOY_CONF_THRESHOLD,
    "pr_iou": 0.5,
    "aggregation": "macro",
    "mode": "nms",
    "iou_threshold": postproc.DEFAULT_IOU_THRESHOLD,
    "conf_threshold": postproc.EVAL_CONF_THRESHOLD,
    "class_agnostic": False,
    "max_detections": postproc.DEFAULT_MAX_DETECTIONS,
    "cost": "gpu_latency_ms",
    "accuracy_col": "map50_95",
    "counts": "100,1000,5000",
    "reps": 100,
    "warmup": bench_mod.DEFAULT_WARMUP,
    "parallel": False,
    "epochs": 100,
    "eta": 0.05,
    "dims": "4,8,2",
    "samples": 16,
    "schedule": "",
}


def _read_config(path: str) -> dict[str, str]:
    text = Path(path).read_text()
    config: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        config[key.strip().replace("-", "_")] = value.strip()
    return config


class _Resolver:
    """Settles each option as: explicit flag, else config file, else default."""

    _BOOL_STRINGS = {"true": True, "1": True, "yes": True,
                     "false": False, "0": False, "no": False}

    def __init__(self, args: argparse.Namespace, config: dict[str, str]):
        self.args = args
        self.config = config

    def get(self, key: str, cast=str):
        value = getattr(self.args, key, None)
        if value is None:
            if key in self.config:
                value = self.config[key]
            else:
                value = _HARD_DEFAULTS[key]
        if isinstance(value, str) and cast is bool:
            try:
                return self._BOOL_STRINGS[value.lower()]
            except KeyError:
                raise ValueError(f"cannot read {value!r} as a boolean for {key!r}") from None
        if isinstance(value, str) and cast is not str:
            return cast(value)
        return value

    def require(self, key: str) -> str:
        """A path-like option that must come from the flag or the config file."""
        value = getattr(self.args, key, None)
        if value is None:
            value = self.config.get(key)
        if not value:
            flag = "--" + key.replace("_", "-")
            raise ValueError(f"missing required option {flag}")
        return value


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip() != ""]


def _float_pair(text: str) -> tuple[float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated values, got {text!r}")
    return parts[0], parts[1]


def _size_pair(text: str) -> tuple[int, int]:
    parts = text.lower().replace("x", ",").split(",")
    if len(parts) != 2:
        raise ValueError(f"expected WIDTHxHEIGHT, got {text!r}")
    return int(parts[0]), int(parts[1])


def _out_dir(res: _Resolver) -> Path:
    out = Path(res.get("output_dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pipeline_mode(name: str) -> postproc.PipelineMode:
    try:
        return postproc.PipelineMode(name)
    except ValueError:
        raise ValueError(f"unknown mode {name!r}; use 'nms' or 'e2e'") from None


# --- subcommand handlers ----------------------------------------------------


def _cmd_convert(res: _Resolver) -> int:
    input_dir = Path(res.require("input"))
    fmt = res.get("input_format")
    out_dir = _out_dir(res)
    if fmt == "voc":
        pattern = "*.xml"
    elif fmt == "visdrone":
        pattern = "*.txt"
    else:
        raise ValueError(f"unknown input format {fmt!r}")
    size_text = res.get("image_size")
    if fmt == "visdrone" and not size_text:
        raise ValueError("visdrone conversion needs --image-size WIDTHxHEIGHT")

    count = 0
    for path in sorted(input_dir.rglob(pattern)):
        text = path.read_text()
        if fmt == "voc":
            rec = data_io.parse_voc_xml(text, image_id=path.stem)
        else:
            width, height = _size_pair(size_text)
            rec = data_io.parse_visdrone_annotations(text, path.stem, width, height)
        lines = data_io.to_normalized(rec)
        target = out_dir / path.relative_to(input_dir).with_suffix(".txt")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(data_io.format_label_lines(lines))
        count += 1
    print(f"converted {count} annotation file(s) -> {out_dir}")
    return 0


def _cmd_split(res: _Resolver) -> int:
    ids = [line.strip() for line in Path(res.require("ids_file")).read_text().splitlines() if line.strip()]
    fractions = _float_pair(res.get("fractions"))
    seed = res.get("seed", int)
    first, second = data_io.seeded_split(ids, fractions, seed)
    out_dir = _out_dir(res)
    # the ceil-sized first part is the test list; the remainder is validation
    (out_dir / "split_test.txt").write_text("".join(f"{i}\n" for i in first))
    (out_dir / "split_val.txt").write_text("".join(f"{i}\n" for i in second))
    print(f"split {len(ids)} ids into test={len(first)} val={len(second)}")
    return 0


def _load_gts(res: _Resolver) -> list[evaluation.GroundTruthInstance]:
    gt_path = Path(res.require("gts"))
    fmt = res.get("gt_format")
    if fmt == "csv":
        return data_io.gts_from_csv(gt_path.read_text())
    if fmt == "voc":
        gts: list[evaluation.GroundTruthInstance] = []
        for path in sorted(gt_path.rglob("*.xml")):
            gts.extend(data_io.parse_voc_xml(path.read_text(), image_id=path.stem).instances)
        return gts
    if fmt == "visdrone":
        size_text = res.get("image_size")
        if not size_text:
            raise ValueError("visdrone ground truth needs --image-size WIDTHxHEIGHT")
        width, height = _size_pair(size_text)
        gts = []
        for path in sorted(gt_path.rglob("*.txt")):
            gts.extend(data_io.parse_visdrone_annotations(path.read_text(), path.stem, width, height).instances)
        return gts
    raise ValueError(f"unknown ground-truth format {fmt!r}")


def _cmd_eval(res: _Resolver) -> int:
    dets = postproc.load_detections(res.require("dets"))
    gts = _load_gts(res)
    interpolation = {"coco": "101point", "voc": "11point"}.get(res.get("iou_mode"))
    if interpolation is None:
        raise ValueError(f"unknown iou mode {res.get('iou_mode')!r}; use 'coco' or 'voc'")
    report = evaluation.evaluate(
        dets, gts,
        pr_conf=res.get("pr_conf", float),
        pr_iou=res.get("pr_iou", float),
        interpolation=interpolation,
        aggregation=res.get("aggregation"),
    )
    out_dir = _out_dir(res)
    (out_dir / "eval_report.json").write_text(report.to_json())
    (out_dir / "eval_report.csv").write_text(report.to_csv())
    agg = report.aggregate
    print(f"eval: P={agg.precision:.4f} R={agg.recall:.4f} F1={agg.f1:.4f} "
          f"mAP50={agg.map50:.4f} mAP50:95={agg.map50_95:.4f}")
    print(f"wrote {out_dir / 'eval_report.json'} and {out_dir / 'eval_report.csv'}")
    return 0


def _cmd_nms(res: _Resolver) -> int:
    dets_by_image = postproc.load_detections(res.require("dets"))
    cfg = postproc.PipelineConfig(
        mode=_pipeline_mode(res.get("mode")),
        iou_threshold=res.get("iou_threshold", float),
        conf_threshold=res.get("conf_threshold", float),
        class_aware=not res.get("class_agnostic", bool),
        max_detections=res.get("max_detections", int),
    )
    filtered = {image_id: postproc.run_pipeline(dets, cfg)
                for image_id, dets in dets_by_image.items()}
    out_dir = _out_dir(res)
    if res.get("format") == "json":
        target = out_dir / "detections_out.jsonl"
        target.write_text(postproc.detections_to_jsonl(filtered))
    else:
        target = out_dir / "detections_out.csv"
        target.write_text(postproc.detections_to_csv(filtered))
    kept = sum(len(v) for v in filtered.values())
    total = sum(len(v) for v in dets_by_image.values())
    print(f"{cfg.mode.value}: kept {kept} of {total} detections -> {target}")
    return 0


def _cmd_pareto(res: _Resolver) -> int:
    records = evaluation.load_model_records(res.require("input"), accuracy_col=res.get("accuracy_col"))
    cost_key = res.get("cost")
    frontier = evaluation.pareto_frontier(records, cost_key)
    out_dir = _out_dir(res)
    if res.get("format") == "json":
        target = out_dir / "pareto.json"
        payload = [{"name": m.name, "accuracy": m.accuracy, cost_key: m.cost(cost_key),
                    "on_frontier": m.name in frontier} for m in records]
        target.write_text(json.dumps(payload, indent=2) + "\n")
    else:
        target = out_dir / "pareto.csv"
        target.write_text(evaluation.pareto_csv(records, cost_key))
    names = [m.name for m in records if m.name in frontier]
    print(f"frontier ({cost_key}): {', '.join(names)}")
    print(f"wrote {target}")
    return 0


def _bench_cell(mode_name: str, counts: list[int], res: _Resolver) -> list[bench_mod.LatencyReport]:
    cfg = postproc.PipelineConfig(mode=_pipeline_mode(mode_name))
    return bench_mod.bench_postproc(
        counts, cfg,
        reps=res.get("reps", int),
        seed=res.get("seed", int),
        warmup=res.get("warmup", int),
    )


def _cmd_bench(res: _Resolver) -> int:
    counts = _int_list(res.get("counts"))
    mode = res.get("mode")
    modes = ["nms", "e2e"] if mode == "both" else [mode]
    reports: list[bench_mod.LatencyReport] = []
    if res.get("parallel", bool) and len(modes) > 1:
        # parallelism stays across cells; the timed region itself is
        # single-threaded either way
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=len(modes)) as pool:
            for part in pool.map(lambda m: _bench_cell(m, counts, res), modes):
                reports.extend(part)
    else:
        for m in modes:
            reports.extend(_bench_cell(m, counts, res))
    out_dir = _out_dir(res)
    if res.get("format") == "json":
        target = out_dir / "bench.json"
        target.write_text(bench_mod.reports_to_json(reports))
    else:
        target = out_dir / "bench.csv"
        target.write_text(bench_mod.reports_to_csv(reports))
    for r in reports:
        print(f"{r.mode:4s} n={r.candidate_count:6d} median={r.median_ns / 1e6:.3f} ms "
              f"p95={r.p95_ns / 1e6:.3f} ms")
    print(f"wrote {target}")
    return 0


def _cmd_train_toy(res: _Resolver) -> int:
    dims = _int_list(res.get("dims"))
    if len(dims) != 3:
        raise ValueError(f"--dims needs three comma-separated sizes, got {res.get('dims')!r}")
    in_dim, hidden_dim, out_dim = dims
    seed = res.get("seed", int)
    epochs = res.get("epochs", int)
    model = optimizer.ToyModel.initialize(in_dim, hidden_dim, out_dim, seed=seed)
    rng = np.random.default_rng(seed + 1)
    data = []
    target_model = optimizer.ToyModel.initialize(in_dim, hidden_dim, out_dim, seed=seed + 2)
    for _ in range(res.get("samples", int)):
        x = rng.normal(size=(in_dim, 1))
        data.append((x, target_model.forward(x)))

    schedule = None
    schedule_text = res.get("schedule")
    if schedule_text:
        lam_max, lam_min = _float_pair(schedule_text)
        schedule = losses.ProgLossSchedule(lambda_max=lam_max, lambda_min=lam_min,
                                           total_epochs=max(epochs, 1))
    cfg = optimizer.MuSgdConfig(eta=res.get("eta", float))
    trajectory = optimizer.train_toy(model, data, cfg, epochs, schedule=schedule)

    out_dir = _out_dir(res)
    if res.get("format") == "json":
        target = out_dir / "train_loss.json"
        target.write_text(json.dumps(
            [{"epoch": i, "loss": loss} for i, loss in enumerate(trajectory)], indent=2) + "\n")
    else:
        target = out_dir / "train_loss.csv"
        rows = "".join(f"{i},{loss:.9e}\n" for i, loss in enumerate(trajectory))
        target.write_text("epoch,loss\n" + rows)
    if trajectory:
        print(f"trained {epochs} epochs: loss {trajectory[0]:.6f} -> {trajectory[-1]:.6f}")
    else:
        print("trained 0 epochs")
    print(f"wrote {target}")
    return 0


# --- parser / dispatch -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file mirroring the flags; flags win")
    common.add_argument("--seed", type=int, help="base seed for anything randomized (default 0)")
    common.add_argument("--output-dir", dest="output_dir", help="artifact directory (default .)")
    common.add_argument("--format", choices=["csv", "json"], help="artifact format where applicable")

    parser = argparse.ArgumentParser(
        prog="detbench",
        description="Detection post-processing, evaluation and latency benchmarking toolkit",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("convert", parents=[common],
                       help="convert an annotation tree to normalized label files")
    p.add_argument("--input", help="annotation directory root")
    p.add_argument("--input-format", dest="input_format", choices=["voc", "visdrone"])
    p.add_argument("--image-size", dest="image_size", help="WIDTHxHEIGHT (visdrone only)")

    p = sub.add_parser("split", parents=[common],
                       help="deterministic two-way split of an id list")
    p.add_argument("--ids-file", dest="ids_file")
    p.add_argument("--fractions", help="two comma-separated fractions summing to 1")

    p = sub.add_parser("eval", parents=[common], help="evaluate detections against ground truth")
    p.add_argument("--dets", help="detection file (.csv or .jsonl)")
    p.add_argument("--gts", help="ground-truth file or directory")
    p.add_argument("--gt-format", dest="gt_format", choices=["csv", "voc", "visdrone"])
    p.add_argument("--image-size", dest="image_size", help="WIDTHxHEIGHT (visdrone only)")
    p.add_argument("--iou-mode", dest="iou_mode", choices=["coco", "voc"],
                   help="AP interpolation: 101-point (coco) or 11-point (voc)")
    p.add_argument("--pr-conf", dest="pr_conf", type=float,
                   help="confidence operating point for P/R/F1 and the confusion matrix")
    p.add_argument("--pr-iou", dest="pr_iou", type=float)
    p.add_argument("--aggregation", choices=["macro", "micro"])

    p = sub.add_parser("nms", parents=[common], help="run a post-processing pipeline over detections")
    p.add_argument("--dets")
    p.add_argument("--mode", choices=["nms", "e2e"])
    p.add_argument("--iou-threshold", dest="iou_threshold", type=float)
    p.add_argument("--conf-threshold", dest="conf_threshold", type=float)
    p.add_argument("--class-agnostic", dest="class_agnostic", action="store_const", const=True)
    p.add_argument("--max-detections", dest="max_detections", type=int)

    p = sub.add_parser("pareto", parents=[common], help="extract the accuracy/cost Pareto frontier")
    p.add_argument("--input", help="model table CSV")
    p.add_argument("--cost", choices=list(evaluation.COST_KEYS))
    p.add_argument("--accuracy-col", dest="accuracy_col")

    p = sub.add_parser("bench", parents=[common], help="latency harness over synthetic dense scenes")
    p.add_argument("--counts", help="comma-separated ascending candidate counts")
    p.add_argument("--mode", choices=["nms", "e2e", "both"])
    p.add_argument("--reps", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--parallel", action="store_const", const=True,
                   help="run (mode, count) cells concurrently")

    p = sub.add_parser("train-toy", parents=[common],
                       help="train the toy model with spectral-normalized steps")
    p.add_argument("--epochs", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--dims", help="in,hidden,out layer sizes")
    p.add_argument("--samples", type=int)
    p.add_argument("--schedule", help="lambda_max,lambda_min cosine step-size schedule")

    return parser


_HANDLERS = {
    "convert": _cmd_convert,
    "split": _cmd_split,
    "eval": _cmd_eval,
    "nms": _cmd_nms,
    "pareto": _cmd_pareto,
    "bench": _cmd_bench,
    "train-toy": _cmd_train_toy,
}


def cli_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits on --help (0) and usage errors (2)
        return 0 if exc.code == 0 else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        config = _read_config(args.config) if getattr(args, "config", None) else {}
        unknown = set(config) - set(_HARD_DEFAULTS) - {"input", "dets", "gts", "ids_file"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return _HANDLERS[args.command](_Resolver(args, config))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (data_io.DataFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
