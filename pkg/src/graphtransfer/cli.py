"""Command line entry point: one subcommand per pipeline stage.

Exit codes: 0 ok, 2 usage, 3 schema, 4 I/O, 5 numeric failure.  Failures
print one line ``error[<code>]: <kind>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from .config import Config, ConfigError, load_config
from .data import (Domain, Sample, extract_patches, list_sample_dirs, prune_redundant_nodes,
                   read_sample, write_sample)
from .graph import Box, SpatialGraph
from .losses import LossWeights, combined_loss
from .matcher import PredictionSet, cost_matrix, hungarian
from .metrics import MetricConfig, ScoredGraph, evaluate_graphs
from .projection import project
from .sampling import EdgeSampleSet, enumerate_edges, fixed_m_sample, regularized_sample
from .synthetic import Style, SynthConfig, gen_synthetic

EXIT_OK, EXIT_USAGE, EXIT_SCHEMA, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4, 5
CODE_NAMES = {EXIT_USAGE: "usage", EXIT_SCHEMA: "schema", EXIT_IO: "io", EXIT_NUMERIC: "numeric"}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise CliError(EXIT_USAGE, f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers

def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"


def emit_json(obj: Any, out: str | None) -> None:
    text = dump_json(obj)
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def _read_json(path: str | Path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_SCHEMA, f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc


def _load_graph(path: str | Path) -> SpatialGraph:
    obj = _read_json(path)
    try:
        return SpatialGraph.from_json(obj)
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_SCHEMA, f"{path}: {exc}") from exc


def _load_prediction(path: str | Path) -> PredictionSet:
    obj = _read_json(path)
    try:
        return PredictionSet.from_json(obj)
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(EXIT_SCHEMA, f"{path}: malformed prediction set ({exc})") from exc


def _read_sample(path: Path) -> Sample:
    try:
        s = read_sample(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read sample {path}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_SCHEMA, f"{path}: {exc}") from exc
    return s


def _sample_dirs(root: str | Path) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise CliError(EXIT_IO, f"not a directory: {root}")
    return list_sample_dirs(root)


def _parallel(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_manifest(out: Path, cfg: Config, command: str, extra: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, "config": cfg.to_dict(), "version": __version__}
    manifest.update(extra or {})
    (out / "manifest.json").write_text(dump_json(manifest), encoding="utf-8")


def metric_config(cfg: Config) -> MetricConfig:
    m = cfg.section("metrics")
    return MetricConfig(**m)


def loss_weights(cfg: Config) -> LossWeights:
    return LossWeights(**cfg.section("weights"))


def _parse_shape(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(x) for x in text.lower().split("x"))
    except ValueError:
        raise CliError(EXIT_USAGE, f"shape must look like HxWxD, got {text!r}") from None
    if len(parts) != 3 or min(parts) < 1:
        raise CliError(EXIT_USAGE, f"shape must be three positive sizes HxWxD, got {text!r}")
    return parts


# ---------------------------------------------------------------- subcommands

def cmd_gen_synthetic(args, cfg: Config) -> None:
    s = cfg.section("synthetic")
    samples = gen_synthetic(s["seed"], s["n_samples"], s["dims"], Style(s["style"]),
                            SynthConfig(size=s["size"], cells=s["cells"], jitter=s["jitter"]),
                            Domain(s["domain"]))
    out = Path(args.out)
    width = max(4, len(str(len(samples))))
    names = [f"sample_{k:0{width}d}" for k in range(len(samples))]
    _parallel(lambda kv: write_sample(kv[1], out / kv[0]), list(zip(names, samples)), cfg["run.jobs"])
    _write_manifest(out, cfg, "gen-synthetic", {"samples": names})


def cmd_preprocess(args, cfg: Config) -> None:
    p = cfg.section("preprocess")
    out = Path(args.out)
    dirs = _sample_dirs(args.inp)

    def work(d: Path) -> list[str]:
        s = _read_sample(d)
        size = min(p["patch_size"], *s.image.shape)
        patches = extract_patches(s.image, s.graph, size, p["stride"], s.domain)
        names = []
        for k, ps in enumerate(patches):
            g = prune_redundant_nodes(ps.graph, p["prune_angle"]) if p["prune"] else ps.graph
            name = f"{d.name}_p{k:03d}"
            write_sample(Sample(ps.image, g, ps.domain, {"origin": ps.meta["origin"], "parent": d.name}),
                         out / name)
            names.append(name)
        return names

    names = [n for group in _parallel(work, dirs, cfg["run.jobs"]) for n in group]
    _write_manifest(out, cfg, "preprocess", {"samples": names})


def cmd_project(args, cfg: Config) -> None:
    shape = _parse_shape(cfg["projection.shape"])
    s = _read_sample(Path(args.inp))
    if s.image.dims != 2:
        raise CliError(EXIT_USAGE, "project expects a 2D sample")
    out = project(s, shape, cfg["projection.seed"])
    write_sample(out, Path(args.out))
    _write_manifest(Path(args.out), cfg, "project",
                    {"dropped_fraction": out.meta["dropped_fraction"]})


def cmd_sample_edges(args, cfg: Config) -> None:
    graphs = [_load_graph(p) for p in args.graphs]
    active, background = enumerate_edges(graphs)
    sm = cfg.section("sampling")
    if sm["sampler"] == "regularized":
        if not active and not background:
            result = {"active": [], "background": [], "n_active": 0, "n_background": 0,
                      "ratio_target": sm["r"], "achieved_ratio": None}
        else:
            result = regularized_sample(active, background, sm["r"], sm["seed"]).to_json()
    else:
        result = fixed_m_sample(active, background, max(sm["m"], len(active)), sm["seed"]).to_json()
    result["config"] = cfg.to_dict()
    emit_json(result, args.out)


def _gt_boxes(g: SpatialGraph, cfg: Config) -> list[Box]:
    half = cfg["metrics.node_box_half"]
    return [Box(tuple(v), (half,) * g.dims) for v in g.nodes]


def _check_dims(pred: PredictionSet, gt: SpatialGraph) -> None:
    if pred.boxes and pred.dims != gt.dims:
        raise CliError(EXIT_SCHEMA, f"prediction is {pred.dims}D but ground truth is {gt.dims}D")


def cmd_match(args, cfg: Config) -> None:
    pred = _load_prediction(args.pred)
    gt = _load_graph(args.gt)
    _check_dims(pred, gt)
    w = loss_weights(cfg)
    m = hungarian(cost_matrix(pred, _gt_boxes(gt, cfg), lambda_reg=w.reg,
                              lambda_giou=w.giou, lambda_cls=w.cls))
    emit_json({**m.to_json(), "config": cfg.to_dict()}, args.out)


def cmd_loss(args, cfg: Config) -> None:
    pred = _load_prediction(args.pred)
    gt = _load_graph(args.gt)
    _check_dims(pred, gt)
    if not pred.complete():
        raise CliError(EXIT_SCHEMA, "prediction set must carry a relation probability for every token pair")
    w = loss_weights(cfg)
    gt_boxes = _gt_boxes(gt, cfg)
    matching = hungarian(cost_matrix(pred, gt_boxes, lambda_reg=w.reg, lambda_giou=w.giou,
                                     lambda_cls=w.cls))
    sm = cfg.section("sampling")
    active, background = enumerate_edges([gt])
    if sm["sampler"] == "regularized":
        sset = regularized_sample(active, background, sm["r"], sm["seed"]) if (active or background) \
            else None
    else:
        sset = fixed_m_sample(active, background, max(sm["m"], len(active)), sm["seed"])
    tok = {g: p for p, g in matching.pairs}
    rel = {}
    if sset is not None:
        # sampled ground-truth pairs are scored through their matched tokens
        def rename(pairs):
            return [(0, *sorted((tok[i], tok[j]))) for _, i, j in pairs if i in tok and j in tok]

        sset = EdgeSampleSet(rename(sset.active), rename(sset.background), sset.ratio_target)
        rel = {k: pred.rel_prob[(k[1], k[2])] for k in sset.active + sset.background}
    out = combined_loss(pred.boxes, pred.cls_prob, gt_boxes, matching, rel, sset, w,
                        normalize_reslt=sm["normalize"])
    values = out.as_floats()
    if not all(math.isfinite(v) for v in values.values()):
        raise CliError(EXIT_NUMERIC, "loss evaluated to a non-finite value")
    emit_json({"components": values, "total": values["total"], "config": cfg.to_dict()}, args.out)


def _load_pred_graph(path: Path) -> ScoredGraph:
    obj = _read_json(path)
    try:
        g = SpatialGraph.from_json(obj)
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_SCHEMA, f"{path}: {exc}") from exc
    return ScoredGraph(g, obj.get("node_scores"), obj.get("edge_scores"))


def _graph_files(root: Path) -> dict[str, Path]:
    if not root.is_dir():
        raise CliError(EXIT_IO, f"not a directory: {root}")
    files = {p.name: p / "graph.json" for p in sorted(root.iterdir()) if (p / "graph.json").exists()}
    files.update({p.stem: p for p in sorted(root.glob("*.json")) if p.name != "manifest.json"})
    return files


def cmd_metrics(args, cfg: Config) -> None:
    pred_files = _graph_files(Path(args.pred))
    gt_files = _graph_files(Path(args.gt))
    missing = sorted(set(gt_files) - set(pred_files))
    if missing:
        raise CliError(EXIT_IO, f"no prediction for ground-truth sample {missing[0]}")
    names = sorted(gt_files)
    preds = _parallel(lambda n: _load_pred_graph(pred_files[n]), names, cfg["run.jobs"])
    gts = _parallel(lambda n: _load_graph(gt_files[n]), names, cfg["run.jobs"])
    try:
        report, rows = evaluate_graphs(preds, gts, metric_config(cfg))
    except ValueError as exc:
        raise CliError(EXIT_SCHEMA, str(exc)) from exc
    obj = report.to_json()
    obj["config"] = cfg.to_dict()
    obj["samples"] = names
    if args.out is None:
        emit_json(obj, None)
        return
    out = Path(args.out)
    emit_json(obj, str(out / "report.json"))
    cols = ["sample", "smd", "node_map", "node_mar", "edge_map", "edge_mar",
            "topo_precision", "topo_recall"]
    lines = [f"# config={cfg.to_json_line()}", ",".join(cols)]
    for name, row in zip(names, rows):
        row = {**row, "sample": name}
        lines.append(",".join("" if row.get(c) is None else
                              (f"{row[c]:.6f}" if isinstance(row[c], float) else str(row[c]))
                              for c in cols))
    (out / "per_sample.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _train_config(cfg: Config):
    from .toy import TrainConfig
    t = cfg.section("train")
    sm = cfg.section("sampling")
    return TrainConfig(seed=t["seed"], pretrain_epochs=t["pretrain_epochs"],
                       finetune_epochs=t["finetune_epochs"], batch_size=t["batch_size"],
                       lr=t["lr"], pretrain_lr=t["pretrain_lr"], weights=loss_weights(cfg),
                       sampler=sm["sampler"], r=t["r"], m=sm["m"], da=t["da"],
                       alpha_max=t["alpha_max"], gamma=t["gamma"],
                       normalize_reslt=t["normalize_reslt"], decode_threshold=t["decode_threshold"])


def cmd_train_toy(args, cfg: Config) -> None:
    from .toy import checkpoint_json, evaluate, make_toy_data, train
    t = cfg.section("train")
    tc = _train_config(cfg)
    data = make_toy_data(t["data_seed"], t["n_source"] if tc.pretrain_epochs else 0,
                         t["n_target"], t["n_test"])
    result = train(tc, data.source, data.target)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoint.json").write_text(checkpoint_json(result, tc), encoding="utf-8")
    (out / "loss_log.csv").write_text(f"# config={cfg.to_json_line()}\n" + result.log_csv(),
                                      encoding="utf-8")
    obj = {}
    if data.test:
        report = evaluate(result.model, data.test, metric_config(cfg), threshold=tc.decode_threshold)
        obj = report.to_json()
    obj["config"] = cfg.to_dict()
    emit_json(obj, str(out / "report.json"))


def _grid_entries(cfg: Config, grid_file: str | None) -> list[dict]:
    from .toy import PAPER_GRID, r_sweep_grid
    if grid_file is not None:
        obj = _read_json(grid_file) if grid_file.endswith(".json") else None
        if obj is None:
            import yaml
            try:
                obj = yaml.safe_load(Path(grid_file).read_text(encoding="utf-8"))
            except OSError as exc:
                raise CliError(EXIT_IO, f"cannot read {grid_file}: {exc.strerror or exc}") from exc
            except yaml.YAMLError as exc:
                raise CliError(EXIT_SCHEMA, f"{grid_file}: invalid YAML") from exc
        if isinstance(obj, dict):
            obj = obj.get("grid")
        if not isinstance(obj, list) or not all(isinstance(e, dict) for e in obj):
            raise CliError(EXIT_SCHEMA, f"{grid_file}: grid must be a list of mappings")
        allowed = {"name", "sampler", "da", "pretrain", "r", "m"}
        for e in obj:
            bad = sorted(set(e) - allowed)
            if bad:
                raise CliError(EXIT_SCHEMA, f"{grid_file}: unknown grid key {bad[0]!r}")
        return obj
    spec = cfg["ablate.grid"]
    if spec == "paper":
        return [dict(e) for e in PAPER_GRID]
    if spec == "r_sweep":
        return r_sweep_grid()
    by_name = {e["name"]: e for e in PAPER_GRID}
    names = [n.strip() for n in spec.split(",") if n.strip()]
    unknown = [n for n in names if n not in by_name]
    if unknown:
        raise CliError(EXIT_SCHEMA, f"ablate.grid: unknown grid entry {unknown[0]!r}")
    return [dict(by_name[n]) for n in names]


def cmd_ablate(args, cfg: Config) -> None:
    from .toy import ablate, make_toy_data, rows_to_csv
    grid = _grid_entries(cfg, args.grid)
    try:
        seeds = [int(s) for s in cfg["ablate.seeds"].split(",") if s.strip()]
    except ValueError:
        raise CliError(EXIT_SCHEMA, "ablate.seeds: expected comma-separated integers") from None
    t = cfg.section("train")
    base = _train_config(cfg)
    rows = ablate(grid, base, seeds,
                  lambda s: make_toy_data(t["data_seed"] + s, t["n_source"], t["n_target"], t["n_test"]),
                  metric_config(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(rows_to_csv(rows, f"config={cfg.to_json_line()}"),
                                      encoding="utf-8")


# ---------------------------------------------------------------- parser

COMMANDS: dict[str, tuple[Callable, str, list[tuple[str, str, dict]]]] = {
    "gen-synthetic": (cmd_gen_synthetic, "generate synthetic samples", [
        ("--out", "out", {"required": True, "help": "output directory"}),
        ("--seed", "synthetic.seed", {"type": int}),
        ("--n", "synthetic.n_samples", {"type": int, "help": "number of samples"}),
        ("--dims", "synthetic.dims", {"type": int}),
        ("--style", "synthetic.style", {"choices": ["grid", "tree"]}),
        ("--size", "synthetic.size", {"type": int}),
    ]),
    "preprocess": (cmd_preprocess, "crop patches and prune redundant nodes", [
        ("--in", "inp", {"required": True, "help": "directory of sample directories"}),
        ("--out", "out", {"required": True, "help": "output directory"}),
        ("--patch", "preprocess.patch_size", {"type": int}),
        ("--stride", "preprocess.stride", {"type": int}),
        ("--prune-angle", "preprocess.prune_angle", {"type": float}),
    ]),
    "project": (cmd_project, "lift a 2D sample into a rotated 3D volume", [
        ("--in", "inp", {"required": True, "help": "2D sample directory"}),
        ("--out", "out", {"required": True, "help": "output sample directory"}),
        ("--shape", "projection.shape", {"help": "target volume HxWxD"}),
        ("--seed", "projection.seed", {"type": int}),
    ]),
    "sample-edges": (cmd_sample_edges, "sample relation-loss node pairs", [
        ("--graphs", "graphs", {"nargs": "+", "required": True, "help": "graph JSON files (one batch)"}),
        ("--r", "sampling.r", {"type": float}),
        ("--seed", "sampling.seed", {"type": int}),
        ("--sampler", "sampling.sampler", {"choices": ["regularized", "fixed_m"]}),
        ("--m", "sampling.m", {"type": int}),
        ("--out", "out", {"help": "output JSON file (default stdout)"}),
    ]),
    "match": (cmd_match, "Hungarian matching of predictions to ground-truth nodes", [
        ("--pred", "pred", {"required": True, "help": "prediction set JSON"}),
        ("--gt", "gt", {"required": True, "help": "ground-truth graph JSON"}),
        ("--out", "out", {"help": "output JSON file (default stdout)"}),
    ]),
    "loss": (cmd_loss, "evaluate the combined training loss", [
        ("--pred", "pred", {"required": True, "help": "prediction set JSON"}),
        ("--gt", "gt", {"required": True, "help": "ground-truth graph JSON"}),
        ("--weights", "weights_file", {"help": "config file with weights.* keys"}),
        ("--out", "out", {"help": "output JSON file (default stdout)"}),
    ]),
    "metrics": (cmd_metrics, "score predicted graphs against ground truth", [
        ("--pred", "pred", {"required": True, "help": "directory of predicted graphs"}),
        ("--gt", "gt", {"required": True, "help": "directory of ground-truth graphs"}),
        ("--out", "out", {"help": "output directory for report.json and per_sample.csv"}),
    ]),
    "train-toy": (cmd_train_toy, "train and evaluate the toy model", [
        ("--out", "out", {"required": True, "help": "output directory"}),
        ("--seed", "train.seed", {"type": int}),
    ]),
    "ablate": (cmd_ablate, "run an ablation grid of toy trainings", [
        ("--grid", "grid", {"help": "JSON or YAML list of grid entries"}),
        ("--out", "out", {"required": True, "help": "output directory"}),
    ]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graphtransfer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    for name, (_, help_text, flags) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat YAML config file (section.key: value)")
        p.add_argument("--jobs", type=int, help="worker threads for per-sample work (run.jobs)")
        for flag, dest, kw in flags:
            kw = dict(kw)
            if "." in dest:
                kw.setdefault("help", f"overrides {dest}")
            p.add_argument(flag, dest=dest.replace(".", "__"), **kw)
    return parser


def resolve_config(args: argparse.Namespace, flags: list[tuple[str, str, dict]]) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    weights_file = getattr(args, "weights_file", None)
    if weights_file:
        wcfg = load_config(weights_file)
        for k, v in wcfg.section("weights").items():
            cfg.set(f"weights.{k}", v)
    if args.jobs is not None:
        cfg.set("run.jobs", args.jobs)
    for _, dest, _ in flags:
        if "." in dest:
            value = getattr(args, dest.replace(".", "__"))
            if value is not None:
                cfg.set(dest, value)
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise CliError(EXIT_USAGE, "a subcommand is required (see --help)")
        fn, _, flags = COMMANDS[args.command]
        try:
            cfg = resolve_config(args, flags)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read config: {exc.strerror or exc}") from exc
        fn(args, cfg)
    except CliError as exc:
        return _fail(exc.code, str(exc))
    except ConfigError as exc:
        return _fail(EXIT_SCHEMA, str(exc))
    except FloatingPointError as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, f"{exc.strerror or exc}: {exc.filename or ''}".rstrip(": "))
    except (ValueError, IndexError, KeyError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    return EXIT_OK


def _fail(code: int, message: str) -> int:
    text = " ".join(message.split())
    sys.stderr.write(f"error[{code}]: {CODE_NAMES[code]}: {text}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
