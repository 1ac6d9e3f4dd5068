import json
import shutil

import pytest

from conftest import SMOKE_CONFIG, run_cli
from curbsense.config import ConfigError, config_from_dict, default_config, parse_config
from curbsense.pipeline import STAGES


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


# -- config -----------------------------------------------------------------


def test_minimal_config_gets_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, {"seed": 3}))
    assert cfg.window.classifier == 450
    assert cfg.window.overlap == 0.9
    assert cfg.train.cnn.lr == 1e-4
    assert cfg.evaluation.kmeans_k == 16
    assert cfg == default_config(3)


def test_misspelled_key_is_named(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key: train.cnn.learning_rate"):
        parse_config(write(tmp_path, {"seed": 1, "train": {"cnn": {"learning_rate": 0.1}}}))
    with pytest.raises(ConfigError, match="unknown config key: sed"):
        parse_config(write(tmp_path, {"seed": 1, "sed": 2}))


def test_seed_is_required(tmp_path):
    with pytest.raises(ConfigError, match="seed"):
        parse_config(write(tmp_path, {"out": "x"}))


def test_config_round_trip(tmp_path):
    cfg = parse_config(SMOKE_CONFIG)
    again = parse_config(write(tmp_path, json.loads(cfg.to_json())))
    assert again == cfg
    assert again.hash() == cfg.hash()
    assert cfg.with_seed(8).hash() != cfg.hash()


def test_config_validation():
    with pytest.raises(ConfigError, match="window.classifier"):
        config_from_dict({"seed": 1, "window": {"classifier": 400}})
    with pytest.raises(ConfigError, match="train.cnn"):
        config_from_dict({"seed": 1, "train": {"cnn": {"lr": -1.0}}})
    with pytest.raises(ConfigError, match="users"):
        config_from_dict({"seed": 1, "users": "/nonexistent.json"})


def test_shipped_configs_parse():
    for name in ("default.json", "smoke.json", "acceptance.json"):
        parse_config(SMOKE_CONFIG.parent / name)


# -- dispatch ---------------------------------------------------------------


def test_usage_errors_exit_1(tmp_path):
    assert run_cli("bogus").returncode == 1
    proc = run_cli("simulate", "--out", tmp_path, "--set", "noequals")
    assert proc.returncode == 1 and "KEY=VALUE" in proc.stderr
    proc = run_cli("simulate", "--out", tmp_path)
    assert proc.returncode == 1 and "seed" in proc.stderr
    proc = run_cli("simulate", "--seed", 1, "--out", tmp_path, "--set", "train.cnn.lr=-1")
    assert proc.returncode == 1


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    out = tmp_path_factory.mktemp("prepared")
    for stage in ("simulate", "preprocess"):
        proc = run_cli(stage, "--config", SMOKE_CONFIG, "--out", out)
        assert proc.returncode == 0, proc.stderr
    return out


def test_missing_artifact_exit_2(tmp_path, prepared):
    proc = run_cli("evaluate", "--config", SMOKE_CONFIG, "--out", prepared)
    assert proc.returncode == 2
    assert "cnn_fold0.csws" in proc.stderr and "train-cnn" in proc.stderr
    proc = run_cli("preprocess", "--config", SMOKE_CONFIG, "--out", tmp_path / "empty")
    assert proc.returncode == 2 and "recordings" in proc.stderr


def test_divergence_exit_3(tmp_path, prepared):
    out = tmp_path / "diverge"
    shutil.copytree(prepared, out)
    proc = run_cli("train-cnn", "--config", SMOKE_CONFIG, "--out", out, "--set", "train.cnn.lr=1e30")
    assert proc.returncode == 3, proc.stderr
    assert "numeric failure" in proc.stderr


def test_simulate_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        proc = run_cli("simulate", "--config", SMOKE_CONFIG, "--seed", 42, "--out", tmp_path / name)
        assert proc.returncode == 0, proc.stderr
    files = sorted(p.name for p in (tmp_path / "a" / "recordings").iterdir())
    assert len(files) == 6
    for f in files:
        assert (tmp_path / "a" / "recordings" / f).read_bytes() == (tmp_path / "b" / "recordings" / f).read_bytes()
    other = tmp_path / "c"
    run_cli("simulate", "--config", SMOKE_CONFIG, "--seed", 43, "--out", other)
    assert (other / "recordings" / files[0]).read_bytes() != (tmp_path / "a" / "recordings" / files[0]).read_bytes()


def test_all_writes_manifest_once_per_stage(smoke_runs):
    out = smoke_runs[0]
    man = json.loads((out / "manifest.json").read_text())
    assert sorted(man["stages"]) == sorted(STAGES)
    cfg_hash = parse_config(out / "config.json").hash()
    assert man["config_hash"] == cfg_hash and man["seed"] == 7
    seen = set()
    for stage, entry in man["stages"].items():
        assert entry["config_hash"] == cfg_hash and entry["seed"] == 7
        assert entry["outputs"], stage
        for rel in entry["outputs"] + entry["inputs"]:
            assert (out / rel).exists(), rel
        assert not seen & set(entry["outputs"])
        seen |= set(entry["outputs"])
    timing = json.loads((out / "timing.json").read_text())
    assert sorted(timing) == sorted(STAGES)


def test_stage_reports(smoke_runs):
    out = smoke_runs[0]
    sup = json.loads((out / "metrics" / "supervised.json").read_text())
    assert set(sup["mean"]) >= {"raw_knn", "mv_knn", "heuristic_mlp", "cnn", "cnn_mlp"}
    assert "CNN + MLP" in (out / "reports" / "table1.txt").read_text()
    for name in ("posnet", "clusters", "semi_supervised", "vae"):
        assert (out / "metrics" / f"{name}.json").exists()
    for name in ("clusters", "barriers_vae"):
        assert (out / "maps" / f"{name}.geojson").exists() and (out / "maps" / f"{name}.svg").exists()
