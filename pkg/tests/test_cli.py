import csv
import json
import re

import numpy as np
import pytest

from geognn.cli import main
from geognn.graphstore import CLASSES, load_subgraphs, save_subgraphs
from geognn.trainer import METRICS_HEADER

ERROR_LINE = re.compile(r'^error: code=[a-z-]+ message=".*"$')


def config(tmp_path, **over):
    cfg = {"seed": 1, "out": str(tmp_path / "out"),
           "synth": {"preset": "separable", "seeds_per_class": 10},
           "model": {"arch": "gcn", "geometry": "euclidean", "layers": 2, "hidden_dim": 8},
           "train": {"learning_rate": 0.01, "max_epochs": 30, "patience": 8, "oversample_target": 20,
                     "lr_grid": [0.003, 0.01], "curvature_grid": [0.5, 1.0]}}
    cfg.update(over)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def run(*args):
    return main([str(a) for a in args])


def error_of(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert err and ERROR_LINE.match(err[0]), err
    return err[0]


@pytest.fixture
def prepared(tmp_path):
    cfg = config(tmp_path)
    for stage in ("synth", "sample", "normalize"):
        assert run(stage, "--config", cfg) == 0
    return cfg, tmp_path / "out"


def test_full_pipeline(prepared, capsys):
    cfg, out = prepared
    assert run("train", "--config", cfg) == 0
    ckpt = next((out / "checkpoints").glob("*.ckpt"))
    assert run("eval", "--config", cfg, "--checkpoint", ckpt) == 0
    rows = list(csv.DictReader(open(out / "metrics" / f"{ckpt.stem}.test.csv")))
    assert tuple(rows[0]) == METRICS_HEADER
    assert float(rows[-1]["macro_f1"]) == 1.0
    assert run("report", "--config", cfg) == 0
    assert (out / "charts" / "per_class_f1.svg").stat().st_size > 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["stage"] == "report" and manifest["config"]["seed"] == 1
    for stage in ("synth", "sample", "normalize", "train", "eval", "report"):
        assert (out / "manifests" / f"{stage}.json").exists()


def test_sample_bound(prepared):
    _, out = prepared
    for split in ("train", "validation", "test"):
        subs, meta = load_subgraphs(out / "subgraphs" / "raw" / f"{split}.bin")
        assert meta["split"] == split
        assert max(s.num_nodes for s in subs) <= 56


def test_normalize_refuses_other_splits(prepared, capsys):
    cfg, out = prepared
    assert run("normalize", "--config", cfg, "--fit-split", "validation") == 2
    assert "code=leakage" in error_of(capsys)
    # a cache relabeled as another split is also refused
    path = out / "subgraphs" / "raw" / "train.bin"
    subs, meta = load_subgraphs(path)
    save_subgraphs(path, subs, dict(meta, split="test"))
    assert run("normalize", "--config", cfg) == 2
    assert "code=leakage" in error_of(capsys)


def test_stats_ignore_held_out_caches(prepared):
    cfg, out = prepared
    before = (out / "stats.json").read_bytes()
    for split in ("validation", "test"):
        path = out / "subgraphs" / "raw" / f"{split}.bin"
        subs, meta = load_subgraphs(path)
        save_subgraphs(path, [s.with_features(s.features * 1e9 + 7) for s in subs], meta)
    assert run("normalize", "--config", cfg) == 0
    assert (out / "stats.json").read_bytes() == before


def test_grid_outputs(prepared):
    cfg, out = prepared
    assert run("grid", "--config", cfg, "--geometry", "hyperbolic", "--arch", "sage") == 0
    rows = list(csv.reader(open(out / "metrics" / "grid_hsage_L2.csv")))
    assert len(rows) == 1 + 2 * 2
    svg = (out / "charts" / "grid_hsage_L2.svg").read_text()
    assert svg.startswith("<?xml") and "learning rate" in svg


def test_report_schema(tmp_path, capsys):
    path = tmp_path / "m.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for name in list(CLASSES) + ["ALL"]:
            w.writerow(["sage", "hyperbolic", 3, 2, "1.0", "0.001", 0, "test", name, 0.5, 0.5, 0.5, 0.5])
    assert run("report", "--out", tmp_path / "out", path) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "metrics" / "report.csv")))
    assert [r["class"] for r in rows] == list(CLASSES) + ["macro"]
    assert len({r["model"] for r in rows}) == 1
    assert "| macro |" in capsys.readouterr().out


def test_errors_are_single_line(tmp_path, capsys):
    assert run("sample", "--out", tmp_path / "empty") == 2
    assert "code=missing-input" in error_of(capsys)
    bad = tmp_path / "bad.json"
    bad.write_text('{"fanout": {"1": 5, "3": 2}}')
    assert run("sample", "--config", bad) == 2
    assert "code=config" in error_of(capsys)
    bad.write_text('{"colour": 1}')
    assert run("synth", "--config", bad) == 2
    assert "code=config" in error_of(capsys)
    bad.write_text("{not json")
    assert run("synth", "--config", bad) == 2
    assert "code=config" in error_of(capsys)


def test_ingest_errors_list_details(tmp_path, capsys):
    data = tmp_path / "d"
    data.mkdir()
    (data / "edges.tsv").write_text("0\t1\nzero\t1\n")
    (data / "features.csv").write_text("node_id,total_sent\n0,1\n1,2\n")
    (data / "labels.csv").write_text("0,EXCHANGE\n")
    cfg = config(tmp_path, data={"edges": str(data / "edges.tsv"), "features": str(data / "features.csv"),
                                 "labels": str(data / "labels.csv")})
    assert run("sample", "--config", cfg) == 2
    err = capsys.readouterr().err.splitlines()
    assert ERROR_LINE.match(err[0]) and "code=ingest" in err[0]
    assert any("edges.tsv:2" in line for line in err[1:])


def test_stages_reproducible(tmp_path):
    outs = []
    for name in ("a", "b"):
        cfg = config(tmp_path, out=str(tmp_path / name))
        for stage in ("synth", "sample", "normalize", "train"):
            assert run(stage, "--config", cfg) == 0
        outs.append(tmp_path / name)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    files = [f for f in files if not str(f).startswith("manifest")]
    assert files
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
    ma = json.loads((outs[0] / "manifests" / "train.json").read_text())
    mb = json.loads((outs[1] / "manifests" / "train.json").read_text())
    for m in (ma, mb):
        m.pop("created")
        m["config"].pop("out")
    strip = lambda d: sorted(v for v in d.values())  # noqa: E731
    assert strip(ma["outputs"]) == strip(mb["outputs"])
    assert ma["config"] == mb["config"]


def test_version_and_help(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert "geognn" in capsys.readouterr().out
    with pytest.raises(SystemExit):
        main(["grid", "--help"])
    assert "--workers" in capsys.readouterr().out
