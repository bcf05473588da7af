"""Command-line pipeline: synth | sample | normalize | train | eval | grid | report.

Every subcommand reads one JSON config (``--config``); ``--seed``, ``--out``
and ``--workers`` and a few per-command flags override it. Outputs go under
``out/{manifest.json, data/, subgraphs/, stats.json, checkpoints/, metrics/,
charts/}``. Failures print one ``error: code=... message=...`` line on stderr
and exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import __version__
from .container import atomic_write_text
from .featpipe import build_feature_matrix, load_rate_table
from .graphstore import (
    CLASSES,
    GraphLoadError,
    check_fanout,
    load_graph,
    load_subgraphs,
    sample_all_seeds,
    save_subgraphs,
)
from .models import GNN, ModelConfig
from .pipeline import Dataset, attach_features, fit_stats, normalize_subgraphs, split_seeds
from .synthgen import PRESETS, SynthSpec, generate, write_graph_files
from .trainer import (
    TrainConfig,
    evaluate,
    grid_search,
    metrics_rows,
    train_model,
    write_metrics_csv,
)

log = logging.getLogger("geognn")

SPLIT_NAMES = ("train", "validation", "test")


class CliError(Exception):
    def __init__(self, code: str, message: str, detail: str = ""):
        super().__init__(message)
        self.code = code
        self.message = message
        self.detail = detail


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "out"
    workers: int = 1
    data: dict = field(default_factory=dict)
    synth: dict = field(default_factory=lambda: {"preset": "branching"})
    fanout: dict = field(default_factory=lambda: {"1": 5, "2": 10})
    split_seed: int = 0
    model: dict = field(default_factory=lambda: {"arch": "sage", "geometry": "hyperbolic", "curvature": 1.0})
    train: dict = field(default_factory=dict)
    grid_seeds: list = field(default_factory=lambda: [0])

    def validate(self):
        try:
            check_fanout(self.fanout)
            self.train_config()
            self.model_config(in_dim=1)
        except (TypeError, ValueError) as exc:
            raise CliError("config", f"invalid config: {exc}") from exc
        if self.workers < 1:
            raise CliError("config", "workers must be >= 1")

    @property
    def depth(self) -> int:
        return len(self.fanout)

    def train_config(self) -> TrainConfig:
        kw = dict(self.train)
        for key in ("lr_grid", "curvature_grid"):
            if key in kw:
                kw[key] = tuple(float(v) for v in kw[key])
        kw.setdefault("seed", self.seed)
        return TrainConfig(**kw)

    def model_config(self, in_dim: int) -> ModelConfig:
        kw = dict(self.model)
        kw["in_dim"] = in_dim
        kw.setdefault("seed", self.seed)
        if kw.get("geometry", "euclidean") == "euclidean":
            kw["curvature"] = None
        elif kw.get("curvature") is None:
            kw["curvature"] = 1.0
        return ModelConfig(**kw)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


def load_config(path, overrides: dict) -> RunConfig:
    raw = {}
    if path:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError("config", f"cannot read config {path}: {exc}") from exc
    unknown = set(raw) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise CliError("config", f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**raw)
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    cfg.validate()
    return cfg


# -- helpers ---------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg: RunConfig, stage: str, inputs: list, outputs: list, extra: dict | None = None) -> Path:
    """Manifest echoing the resolved config plus input/output hashes; only ``created`` varies."""
    doc = {
        "stage": stage,
        "version": __version__,
        "config": asdict(cfg),
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).exists()},
        "outputs": {str(p): _sha256(p) for p in outputs if Path(p).exists()},
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if extra:
        doc["extra"] = extra
    path = cfg.out_dir / "manifests" / f"{stage}.json"
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    atomic_write_text(cfg.out_dir / "manifest.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def _data_paths(cfg: RunConfig) -> dict:
    d = cfg.data or {}
    base = cfg.out_dir / "data"
    return {
        "edges": Path(d.get("edges", base / "edges.tsv")),
        "features": Path(d.get("features", base / "features.csv")),
        "labels": Path(d.get("labels", base / "labels.csv")),
        "rates": Path(d["rates"]) if d.get("rates") else None,
    }


def _require(path: Path, what: str):
    if not path.exists():
        raise CliError("missing-input", f"{what} not found: {path}")


def _subgraph_path(cfg, split, normalized):
    sub = "normalized" if normalized else "raw"
    return cfg.out_dir / "subgraphs" / sub / f"{split}.bin"


def _load_split(cfg, split, normalized=True):
    path = _subgraph_path(cfg, split, normalized)
    _require(path, f"{split} subgraph cache (run `sample`{' and `normalize`' if normalized else ''} first)")
    subs, meta = load_subgraphs(path)
    return subs, meta, path


def _load_dataset(cfg) -> tuple[Dataset, list]:
    parts, paths = {}, []
    for split in SPLIT_NAMES:
        parts[split], _, p = _load_split(cfg, split)
        paths.append(p)
    if not parts["train"]:
        raise CliError("data", "training split is empty")
    return Dataset(parts["train"], parts["validation"], parts["test"]), paths


def _model_tag(mc: ModelConfig, lr: float, seed: int) -> str:
    curv = f"_c{mc.curvature:g}" if mc.curvature is not None else ""
    return f"{mc.name}_L{mc.layers}{curv}_lr{lr:g}_s{seed}"


# -- subcommands -----------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> None:
    spec_cfg = dict(cfg.synth)
    preset = spec_cfg.pop("preset", None)
    if preset:
        if preset not in PRESETS:
            raise CliError("config", f"unknown synth preset {preset!r}; choose from {sorted(PRESETS)}")
        spec_cfg.setdefault("master_seed", cfg.seed)
        spec = PRESETS[preset](**spec_cfg)
    else:
        spec_cfg.setdefault("master_seed", cfg.seed)
        spec = SynthSpec.from_dict(spec_cfg)
    try:
        sg = generate(spec)
    except ValueError as exc:
        raise CliError("config", f"invalid synthetic spec: {exc}") from exc
    paths = write_graph_files(sg.graph, cfg.out_dir / "data")
    atomic_write_text(cfg.out_dir / "data" / "synth_spec.json", json.dumps(spec.to_dict(), indent=1, sort_keys=True) + "\n")
    write_manifest(cfg, "synth", [], list(paths.values()))
    print(f"synth: {sg.graph.n} nodes, {sg.graph.num_edges} edges, {sg.seeds.size} labeled seeds -> {cfg.out_dir / 'data'}")


def cmd_sample(cfg: RunConfig, args) -> None:
    p = _data_paths(cfg)
    for key in ("edges", "features", "labels"):
        _require(p[key], f"{key} file")
    try:
        graph = load_graph(p["edges"], p["features"], p["labels"])
    except GraphLoadError as exc:
        raise CliError("ingest", str(exc), "\n".join(exc.problems)) from exc
    rates = load_rate_table(p["rates"]) if p["rates"] else None
    names, matrix, value_type = build_feature_matrix(graph, rates)
    parts = split_seeds(graph, cfg.split_seed)
    outputs = []
    for split in SPLIT_NAMES:
        subs = attach_features(sample_all_seeds(graph, parts[split], cfg.fanout, cfg.seed, cfg.workers), matrix)
        path = _subgraph_path(cfg, split, normalized=False)
        save_subgraphs(path, subs, {"split": split, "fanout": {str(k): v for k, v in cfg.fanout.items()},
                                    "feature_names": names, "value_type": value_type, "normalized": False})
        outputs.append(path)
        largest = max((s.num_nodes for s in subs), default=0)
        print(f"sample: {split}: {len(subs)} subgraphs, largest {largest} nodes")
    inputs = [p["edges"], p["features"], p["labels"]] + ([p["rates"]] if p["rates"] else [])
    write_manifest(cfg, "sample", inputs, outputs)


def cmd_normalize(cfg: RunConfig, args) -> None:
    fit_split = args.fit_split
    if fit_split != "train":
        raise CliError("leakage", f"refusing to fit normalization stats on the {fit_split!r} split; only 'train' is allowed")
    subs, meta, fit_path = _load_split(cfg, "train", normalized=False)
    if meta.get("split") != "train":
        raise CliError("leakage", f"{fit_path} is labeled split={meta.get('split')!r}, not 'train'")
    stats = fit_stats(subs, meta["feature_names"], meta["value_type"])
    stats_path = cfg.out_dir / "stats.json"
    stats.save(stats_path)
    outputs = [stats_path]
    inputs = [fit_path]
    for split in SPLIT_NAMES:
        raw, m, path = _load_split(cfg, split, normalized=False)
        inputs.append(path)
        out = _subgraph_path(cfg, split, normalized=True)
        save_subgraphs(out, normalize_subgraphs(raw, stats), dict(m, normalized=True))
        outputs.append(out)
    write_manifest(cfg, "normalize", inputs, outputs)
    print(f"normalize: stats from {len(subs)} train subgraphs -> {stats_path}")


def _train_one(cfg: RunConfig, data: Dataset, tc: TrainConfig, mc: ModelConfig):
    train = data.oversampled_train(tc.oversample_target, cfg.split_seed)
    res = train_model(mc, tc, train, data.validation)
    tag = _model_tag(mc, tc.learning_rate, cfg.seed)
    ckpt = cfg.out_dir / "checkpoints" / f"{tag}.ckpt"
    res.model.save(ckpt, {"best_epoch": res.best_epoch, "status": res.status})
    rows = []
    for split in ("validation", "test"):
        rep = evaluate(res.model, data.split(split))
        rows += metrics_rows(rep, mc, cfg.depth, tc.learning_rate, cfg.seed, split)
    mpath = cfg.out_dir / "metrics" / f"{tag}.csv"
    write_metrics_csv(mpath, rows)
    hist = cfg.out_dir / "metrics" / f"{tag}.history.json"
    atomic_write_text(hist, json.dumps(res.history, indent=1) + "\n")
    return res, ckpt, mpath, hist


def cmd_train(cfg: RunConfig, args) -> None:
    data, inputs = _load_dataset(cfg)
    tc = cfg.train_config()
    if args.lr is not None:
        tc = replace(tc, learning_rate=args.lr)
    mc = cfg.model_config(data.in_dim)
    res, ckpt, mpath, hist = _train_one(cfg, data, tc, mc)
    write_manifest(cfg, "train", inputs, [ckpt, mpath, hist],
                   {"best_epoch": res.best_epoch, "status": res.status, "failure": res.failure})
    print(f"train: {mc.name} {res.status} after {res.epochs} epochs, best val macro-F1 "
          f"{res.best_val_f1:.4f} -> {ckpt}")


def cmd_eval(cfg: RunConfig, args) -> None:
    ckpt = Path(args.checkpoint)
    _require(ckpt, "checkpoint")
    model = GNN.load(ckpt)
    subs, _, path = _load_split(cfg, args.split)
    rep = evaluate(model, subs)
    lr = float(args.lr if args.lr is not None else cfg.train_config().learning_rate)
    out = Path(args.output) if args.output else cfg.out_dir / "metrics" / f"{ckpt.stem}.{args.split}.csv"
    write_metrics_csv(out, metrics_rows(rep, model.config, cfg.depth, lr, cfg.seed, args.split))
    write_manifest(cfg, "eval", [ckpt, path], [out])
    print(f"eval: {args.split} macro-F1 {rep.macro_f1:.4f} -> {out}")


def cmd_grid(cfg: RunConfig, args) -> None:
    from .plotting import plot_grid

    data, inputs = _load_dataset(cfg)
    tc = cfg.train_config()
    mc = cfg.model_config(data.in_dim)
    train = data.oversampled_train(tc.oversample_target, cfg.split_seed)
    result = grid_search(mc, tc, train, data.validation, data.test, seeds=cfg.grid_seeds, workers=cfg.workers)
    tag = f"grid_{mc.name}_L{mc.layers}"
    gpath = cfg.out_dir / "metrics" / f"{tag}.csv"
    rpath = cfg.out_dir / "metrics" / f"{tag}.runs.csv"
    spath = cfg.out_dir / "charts" / f"{tag}.svg"
    atomic_write_text(gpath, result.to_csv())
    atomic_write_text(rpath, result.runs_csv())
    plot_grid(result, spath, title=f"{mc.name} {mc.layers}-layer")
    spreads = {("euclidean" if c is None else f"{c:g}"): result.spread(c) for c in result.curvatures()}
    write_manifest(cfg, "grid", inputs, [gpath, rpath, spath], {"spread_by_curvature": spreads})
    for k, v in spreads.items():
        print(f"grid: curvature {k}: best {result.best(None if k == 'euclidean' else float(k)):.4f} spread {v:.4f}")
    print(f"grid: {len(result.cells)} runs -> {gpath}, {spath}")


def read_metrics_csvs(paths) -> dict:
    """model label -> class -> {precision, recall, f1} from metrics CSVs (test split preferred)."""
    table: dict = {}
    for path in paths:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            continue
        if rows and "class" not in rows[0]:
            raise CliError("format", f"{path} is not a metrics CSV")
        splits = {r["split"] for r in rows}
        split = "test" if "test" in splits else sorted(splits)[0]
        for r in rows:
            if r["split"] != split:
                continue
            prefix = "H" if r["geometry"] == "hyperbolic" else ""
            label = f"{prefix}{r['arch'].upper()} {r['layers']}L d{r['subgraph_depth']}"
            if r["curvature"]:
                label += f" c={float(r['curvature']):g}"
            table.setdefault(label, {})[r["class"]] = {k: float(r[k]) for k in ("precision", "recall", "f1")}
    return table


def render_report(table: dict) -> tuple[str, str]:
    """(CSV text, markdown text): one row per class per model plus a macro row."""
    order = list(CLASSES) + ["ALL"]
    lines = ["model,class,precision,recall,f1"]
    md = []
    for model, classes in table.items():
        md += [f"### {model}", "", "| class | precision | recall | F1 |", "|---|---|---|---|"]
        for name in order:
            if name not in classes:
                continue
            v = classes[name]
            shown = "macro" if name == "ALL" else name
            lines.append(f"{model},{shown},{v['precision']:.4f},{v['recall']:.4f},{v['f1']:.4f}")
            md.append(f"| {shown} | {v['precision']:.2f} | {v['recall']:.2f} | {v['f1']:.2f} |")
        md.append("")
    return "\n".join(lines) + "\n", "\n".join(md)


def cmd_report(cfg: RunConfig, args) -> None:
    from .plotting import plot_per_class

    paths = [Path(p) for p in args.metrics] or sorted((cfg.out_dir / "metrics").glob("*_s*.csv"))
    paths = [p for p in paths if not p.name.startswith("grid_")]
    if not paths:
        raise CliError("missing-input", "no metrics CSVs to report on")
    for p in paths:
        _require(p, "metrics CSV")
    table = read_metrics_csvs(paths)
    text, md = render_report(table)
    out = cfg.out_dir / "metrics" / "report.csv"
    atomic_write_text(out, text)
    atomic_write_text(cfg.out_dir / "metrics" / "report.md", md + "\n")
    fig = cfg.out_dir / "charts" / "per_class_f1.svg"
    plot_per_class(table, fig)
    write_manifest(cfg, "report", paths, [out, fig])
    print(md)


COMMANDS = {
    "synth": cmd_synth, "sample": cmd_sample, "normalize": cmd_normalize, "train": cmd_train,
    "eval": cmd_eval, "grid": cmd_grid, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="geognn", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"geognn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic transaction graph")
    sub.add_parser("sample", parents=[common], help="split seeds and sample ego subgraphs per split")
    p = sub.add_parser("normalize", parents=[common], help="fit stats on train, apply to every split")
    p.add_argument("--fit-split", default="train", help="split to fit on; anything but 'train' is refused")
    p = sub.add_parser("train", parents=[common], help="train one model, write checkpoint and metrics")
    p.add_argument("--arch", choices=("gcn", "sage", "gat"))
    p.add_argument("--geometry", choices=("euclidean", "hyperbolic"))
    p.add_argument("--layers", type=int)
    p.add_argument("--curvature", type=float, help="hyperbolic only; default 1.0")
    p.add_argument("--lr", type=float)
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=SPLIT_NAMES)
    p.add_argument("--lr", type=float, help="learning rate to record in the CSV")
    p.add_argument("--output", help="metrics CSV path")
    p = sub.add_parser("grid", parents=[common], help="curvature x learning-rate grid search")
    p.add_argument("--arch", choices=("gcn", "sage", "gat"))
    p.add_argument("--geometry", choices=("euclidean", "hyperbolic"))
    p.add_argument("--layers", type=int)
    p = sub.add_parser("report", parents=[common], help="per-class tables and figure from metrics CSVs")
    p.add_argument("metrics", nargs="*", help="metrics CSVs (default: out/metrics/*)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out, "workers": args.workers})
        model_over = {k: getattr(args, k, None) for k in ("arch", "geometry", "layers", "curvature")}
        if any(v is not None for v in model_over.values()):
            cfg.model = dict(cfg.model, **{k: v for k, v in model_over.items() if v is not None})
            cfg.validate()
        COMMANDS[args.command](cfg, args)
    except CliError as exc:
        print(f"error: code={exc.code} message={json.dumps(exc.message)}", file=sys.stderr)
        if exc.detail:
            print(exc.detail, file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: code=runtime message={json.dumps(str(exc))}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
