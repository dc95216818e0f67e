import json
import os
import shutil

import numpy as np
import pytest

from stemgenre import cli, pipeline
from stemgenre.errors import ConfigError, PipelineError, StaleArtifact, StemMismatch
from stemgenre.synth import write_mini_corpus

TINY = dict(
    vocal_net={"hidden_per_direction": 4, "dense_sizes": [8, 8, 8]},
    accomp_net={"conv_channels": [2, 2, 2, 2], "dense_hidden": 8},
    train_vocal={"epochs": 2, "learning_rate": 3e-3},
    train_accomp={"epochs": 2, "learning_rate": 3e-3},
)


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    corpus = write_mini_corpus(root / "corpus", clips_per_genre=4, seed=3)
    cfg = pipeline.mini_run_config(corpus, root / "base", seed=1, **TINY)
    pipeline.cmd_prepare(cfg)
    pipeline.cmd_featurize(cfg)
    return root, cfg


def fresh_copy(prepared, name):
    root, cfg = prepared
    dst = root / name
    shutil.copytree(cfg.workdir, dst)
    return pipeline.mini_run_config(cfg.corpus, dst, seed=1, **TINY)


def test_prepare_outputs(prepared):
    _, cfg = prepared
    wd = pipeline.WorkDir(cfg.workdir)
    raw = json.loads(wd.manifest.read_text())
    assert raw["config_hash"] == cfg.prepare_hash()
    m = pipeline.Manifest.from_dict(raw["manifest"])
    assert len(m) == 120
    assert len(m.select("test")) == 30 and len(m.select("train")) == 90
    m.check_clip_coherent()
    e = m.entries[0]
    assert (wd.root / e.stems["vocal"]).exists() and e.stems["vocal"].endswith(".vocals.wav")


def test_featurize_is_idempotent(prepared):
    cfg = fresh_copy(prepared, "idem")
    wd = pipeline.WorkDir(cfg.workdir)
    before = wd.features.read_bytes(), (wd.root / "features" / "mfcc.bin.json").read_bytes()
    pipeline.cmd_featurize(cfg)
    after = wd.features.read_bytes(), (wd.root / "features" / "mfcc.bin.json").read_bytes()
    assert before == after


def test_evaluate_before_training(prepared):
    cfg = fresh_copy(prepared, "early")
    with pytest.raises(PipelineError, match="vocal.json"):
        pipeline.cmd_evaluate(cfg, "vocal")
    with pytest.raises(PipelineError, match="stacking.json"):
        pipeline.cmd_evaluate(cfg, "stack_logreg")


def test_stale_configuration_refused(prepared):
    _, cfg = prepared
    other = pipeline.mini_run_config(cfg.corpus, cfg.workdir, seed=2, **TINY)
    with pytest.raises(StaleArtifact):
        pipeline.cmd_featurize(other)
    changed = pipeline.mini_run_config(cfg.corpus, cfg.workdir, seed=1, features={"n_mels": 64}, **TINY)
    with pytest.raises(StaleArtifact):
        pipeline.cmd_train_base(changed)


def test_report_with_base_models_only(prepared):
    cfg = fresh_copy(prepared, "baseonly")
    pipeline.cmd_train_base(cfg, "both")
    rows = pipeline.cmd_report(cfg)
    assert [(r["section"], r["key"]) for r in rows] == [("Individual Models", "accomp"),
                                                       ("Individual Models", "vocal")]
    out = pipeline.WorkDir(cfg.workdir).reports
    assert (out / "table.md").read_text().count("Individual Models") == 2
    for name in ("vocal.json", "vocal.csv", "vocal.svg", "accomp.json"):
        assert (out / name).exists()
    hist = json.loads((pipeline.WorkDir(cfg.workdir).model("vocal").parent / "vocal.history.json").read_text())
    assert len(hist["history"]) == 2


def test_full_run_table_order(prepared):
    cfg = fresh_copy(prepared, "full")
    rows = pipeline.run_all(cfg, ensembles=("stack_logreg", "stack_gbdt", "mean", "soft_vote"))
    assert [r["key"] for r in rows] == ["stack_gbdt", "stack_logreg", "mean", "soft_vote", "accomp", "vocal"]
    sections = [r["section"] for r in rows]
    assert sections == sorted(sections, key=["Stacking Ensembles", "Bagging Ensembles",
                                             "Individual Models"].index)
    report = json.loads((pipeline.WorkDir(cfg.workdir).reports / "stack_logreg.json").read_text())
    assert report["config_hash"] == cfg.meta_hash("logreg")
    assert report["level"] == "segment" and "clip_level_accuracy" in report
    info = json.loads((pipeline.WorkDir(cfg.workdir).stack_dir("logreg") / "stacking.json").read_text())
    assert not set(info["split_a"]) & set(info["split_b"])
    # base models of a stack never see the test partition
    m = pipeline._load_manifest(pipeline.WorkDir(cfg.workdir), cfg)
    test_ids = {e.segment_id for e in m.select("test")}
    assert not test_ids & (set(info["split_a"]) | set(info["split_b"]))


def test_stale_report_dropped_from_table(prepared):
    cfg = fresh_copy(prepared, "stalerep")
    pipeline.cmd_train_base(cfg)
    pipeline.cmd_evaluate(cfg, "mean")
    out = pipeline.WorkDir(cfg.workdir).reports
    r = json.loads((out / "mean.json").read_text())
    r["config_hash"] = "stale"
    (out / "mean.json").write_text(json.dumps(r))
    assert "mean" not in [row["key"] for row in pipeline.cmd_report(cfg)]


def test_external_stems(prepared, tmp_path):
    root, cfg = prepared
    wd = pipeline.WorkDir(cfg.workdir)
    stems = tmp_path / "stems"
    shutil.copytree(wd.stems, stems)
    ext = pipeline.mini_run_config(cfg.corpus, tmp_path / "w", seed=1, separator="external",
                                   stems_dir=os.fspath(stems), **TINY)
    m = pipeline.cmd_prepare(ext)
    assert all(os.path.isabs(e.stems["vocal"]) for e in m.entries)
    victim = sorted(stems.iterdir())[0]
    victim.write_bytes(victim.read_bytes()[:2000])
    with pytest.raises(StemMismatch):
        pipeline.cmd_prepare(ext)


def test_run_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        pipeline.RunConfig.from_dict({"workdir": "w", "nonsense": 1})
    with pytest.raises(ConfigError):
        pipeline.RunConfig.from_dict({"workdir": "w", "features": {"n_melz": 3}})
    with pytest.raises(ConfigError):
        pipeline.RunConfig.from_dict({"workdir": "w", "separator": "external"})
    with pytest.raises(ConfigError):
        pipeline.RunConfig.from_dict({"workdir": "w", "ensemble": "stack_svm"})
    with pytest.raises(ConfigError):
        pipeline.RunConfig.from_dict({"workdir": "w", "train_vocal": {"learning_rate": -1}})


def test_seed_derivation():
    assert pipeline.derive_seed(0, "train", "vocal") == pipeline.derive_seed(0, "train", "vocal")
    assert pipeline.derive_seed(0, "train", "vocal") != pipeline.derive_seed(1, "train", "vocal")
    assert pipeline.derive_seed(0, "train", "vocal") != pipeline.derive_seed(0, "train", "accomp")


# -- command line --------------------------------------------------------------

def run_cli(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_error_line_and_code(tmp_path, capsys):
    code, _, err = run_cli(["evaluate", "--workdir", os.fspath(tmp_path), "--ensemble", "vocal"], capsys)
    assert code == 1
    assert len(err.strip().splitlines()) == 1
    assert err.startswith("error code=PIPELINE_ERROR message=") and "manifest.json" in err


def test_cli_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"workdir": os.fspath(tmp_path), "bogus": True}))
    code, _, err = run_cli(["prepare", "--config", os.fspath(cfg)], capsys)
    assert code == 1 and err.startswith("error code=CONFIG_ERROR")


def test_cli_missing_config_file(tmp_path, capsys):
    code, _, err = run_cli(["prepare", "--config", os.fspath(tmp_path / "nope.json")], capsys)
    assert code == 1 and "nope.json" in err


def test_cli_workdir_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("STEMGENRE_WORKDIR", os.fspath(tmp_path / "envwd"))
    code, _, err = run_cli(["featurize"], capsys)
    assert code == 1 and "envwd" in err and "manifest.json" in err


def test_cli_lock_prevents_concurrent_commands(tmp_path, capsys):
    (tmp_path / ".lock").write_text("12345")
    code, _, err = run_cli(["featurize", "--workdir", os.fspath(tmp_path)], capsys)
    assert code == 1 and "locked" in err
    assert (tmp_path / ".lock").exists()


def test_cli_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train-base", "--which", "piano"])
    assert exc.value.code == 2


def test_cli_report_success(prepared, capsys):
    cfg = fresh_copy(prepared, "clirep")
    path = os.path.join(cfg.workdir, "run.json")
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh)
    assert run_cli(["train-base", "--config", path, "--which", "vocal"], capsys)[0] == 0
    assert run_cli(["train-base", "--config", path, "--which", "accomp"], capsys)[0] == 0
    code, out, _ = run_cli(["report", "--config", path], capsys)
    assert code == 0 and "LSTM on Vocals" in out and "CNN on Accompaniments" in out
    assert not os.path.exists(os.path.join(cfg.workdir, ".lock"))


def test_cli_mini_corpus(tmp_path, capsys):
    assert run_cli(["mini-corpus", os.fspath(tmp_path / "c"), "--clips", "1"], capsys)[0] == 0
    assert sorted(p.name for p in (tmp_path / "c").iterdir()) == ["classical", "hiphop", "metal"]
