import json

import numpy as np
import pytest

from tsforge import config as cfgmod
from tsforge.cli import main, resolve_seed
from tsforge.dataset import load_corpus


def test_synth_then_segment(tmp_path, tiny_config, capsys):
    assert main(["synth", "--config", str(tiny_config), "--seed", "1", "--out", str(tmp_path / "c")]) == 0
    c = load_corpus(tmp_path / "c")
    assert c.samples.shape == (24, 16, 2)
    rc = main(["segment", "--corpus", str(tmp_path / "c"), "--degree", "6", "--out", str(tmp_path / "seg.json"),
               "--emit-curves", str(tmp_path / "curves.csv")])
    assert rc == 0
    seg = json.loads((tmp_path / "seg.json").read_text())
    assert len(seg["boundaries"]) == 3 and len(seg["coefficients"]) == 7
    lines = (tmp_path / "curves.csv").read_text().splitlines()
    assert lines[0] == "t,average,difference,fitted" and len(lines) == 17


def test_missing_corpus_is_config_error(tmp_path, capsys):
    assert main(["segment", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "s.json")]) == 2
    assert "error" in capsys.readouterr().err


def test_bad_config_is_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seq": {"widht": 8}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "c")]) == 2
    bad.write_text("{not json")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "c")]) == 2


def _flat_bundle(path, tiny_config):
    """A synthesized bundle whose every value is replaced by a constant per channel."""
    main(["synth", "--config", str(tiny_config), "--out", str(path)])
    manifest = json.loads((path / "manifest.json").read_text())
    n, T = manifest["n"], manifest["T"]
    rows = ["sample_index,t,x0,x1"] + [f"{i},{t},1,2" for i in range(n) for t in range(T)]
    (path / "data.csv").write_text("\n".join(rows) + "\n")
    manifest["valid_lengths"] = [T] * n
    (path / "manifest.json").write_text(json.dumps(manifest))


def test_degenerate_segmentation_exit_code(tmp_path, tiny_config):
    _flat_bundle(tmp_path / "c", tiny_config)
    assert main(["segment", "--corpus", str(tmp_path / "c"), "--out", str(tmp_path / "s.json")]) == 4
    assert main(["segment", "--corpus", str(tmp_path / "c"), "--fallback",
                 "--out", str(tmp_path / "s.json")]) == 0


def test_numerical_failure_exit_code(tmp_path, tiny_config, monkeypatch):
    import tsforge.cli as cli

    def boom(args):
        raise FloatingPointError("non-finite sample")

    monkeypatch.setattr(cli, "cmd_synth", boom)
    assert main(["synth", "--out", str(tmp_path / "c")]) == 3


def test_seed_resolution(monkeypatch):
    monkeypatch.delenv("TSFORGE_SEED", raising=False)
    assert resolve_seed(None, 5) == 5
    monkeypatch.setenv("TSFORGE_SEED", "11")
    assert resolve_seed(None) == 11
    assert resolve_seed(3) == 3
    monkeypatch.setenv("TSFORGE_SEED", "x")
    with pytest.raises(cfgmod.ConfigError):
        resolve_seed(None)


def test_env_seed_drives_synth(tmp_path, tiny_config, monkeypatch):
    monkeypatch.setenv("TSFORGE_SEED", "4")
    main(["synth", "--config", str(tiny_config), "--out", str(tmp_path / "a")])
    main(["synth", "--config", str(tiny_config), "--seed", "4", "--out", str(tmp_path / "b")])
    main(["synth", "--config", str(tiny_config), "--seed", "5", "--out", str(tmp_path / "c")])
    a, b, c = ((tmp_path / x / "data.csv").read_text() for x in "abc")
    assert a == b and a != c


def test_stagewise_commands(tmp_path, tiny_config):
    cfg = str(tiny_config)
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "c")]) == 0
    assert main(["train-diffusion", "--config", cfg, "--corpus", str(tmp_path / "c"), "--steps", "10",
                 "--epochs", "3", "--lr", "1e-3", "--out", str(tmp_path / "dm")]) == 0
    assert main(["sample-first", "--model", str(tmp_path / "dm"), "--class", "1", "--count", "4",
                 "--seed", "2", "--out", str(tmp_path / "first.csv")]) == 0
    first = np.loadtxt(tmp_path / "first.csv", delimiter=",", ndmin=2)
    assert first.shape == (4, 2) and first.min() >= 0 and first.max() <= 1
    assert main(["train-seq", "--config", cfg, "--corpus", str(tmp_path / "c"), "--window", "3",
                 "--out", str(tmp_path / "sm")]) == 0
    assert (tmp_path / "sm" / "loss_log.csv").exists()
    assert main(["generate", "--seq-model", str(tmp_path / "sm"), "--first", str(tmp_path / "first.csv"),
                 "--class", "1", "--length", "16", "--out", str(tmp_path / "g")]) == 0
    g = load_corpus(tmp_path / "g")
    assert g.samples.shape == (4, 16, 2) and set(g.labels) == {1}
    assert main(["evaluate", "fid", "--real", str(tmp_path / "c"), "--gen", str(tmp_path / "c"),
                 "--reps", "1", "--fraction", "1", "--out", str(tmp_path / "fid.json")]) == 0
    assert json.loads((tmp_path / "fid.json").read_text())["fid"]["mean"] < 1e-6


def test_generate_rejects_wrong_width(tmp_path, tiny_config):
    cfg = str(tiny_config)
    main(["synth", "--config", cfg, "--out", str(tmp_path / "c")])
    main(["train-seq", "--config", cfg, "--corpus", str(tmp_path / "c"), "--out", str(tmp_path / "sm")])
    np.savetxt(tmp_path / "f.csv", np.zeros((2, 5)), delimiter=",")
    assert main(["generate", "--seq-model", str(tmp_path / "sm"), "--first", str(tmp_path / "f.csv"),
                 "--class", "0", "--out", str(tmp_path / "g")]) == 2


def test_run_and_emit_curves(tmp_path, tiny_config):
    out = tmp_path / "run"
    assert main(["run", "--config", str(tiny_config), "--seed", "3", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report) >= {"config_hash", "segmentation", "uplift", "table1", "first_frame_fid"}
    assert len(report["table1"]["rows"]) == 6
    assert not (out / "FAILED").exists()
    (out / "curves.csv").unlink()
    assert main(["emit-curves", "--run-dir", str(out)]) == 0
    assert (out / "curves.csv").exists() and (out / "boundaries.csv").exists()
    assert (out / "loss_seq_w3.csv").exists()


def test_emit_curves_missing_artifacts(tmp_path):
    assert main(["emit-curves", "--run-dir", str(tmp_path)]) == 2


def test_bad_corpus_path_in_config(tmp_path):
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"corpus": str(tmp_path / "missing")}))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "run")]) == 2


def test_failed_stage_leaves_marker(tmp_path, tiny_config):
    _flat_bundle(tmp_path / "c", tiny_config)
    cfg = json.loads(tiny_config.read_text())
    cfg["corpus"] = str(tmp_path / "c")
    cfg["segment"]["fallback"] = False
    path = tmp_path / "flat.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert main(["run", "--config", str(path), "--out", str(out)]) == 4
    assert (out / "FAILED").read_text().startswith("DegenerateSegmentationError")
    assert (out / "corpus" / "train" / "manifest.json").exists()


def test_config_round_trip_and_hash():
    c = cfgmod.PipelineConfig()
    again = cfgmod.from_dict(c.to_dict())
    assert again.digest() == c.digest()
    assert cfgmod.from_dict({"seed": 1}).digest() != c.digest()
    paper = cfgmod.paper_scale()
    assert paper.seq.width == 512 and paper.synthetic.length == 610
