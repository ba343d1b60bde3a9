import filecmp
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from fusehar import tensor
from fusehar.cli import main
from fusehar.pipeline import (ConfigError, PipelineConfig, RunError, ablate_modality,
                              build_trial_images, load_dataset, repeat_ablation, repeat_runs,
                              run_once)
from fusehar.stages import FEATURE_INDEX

from conftest import TINY_CONFIG


def tree_files(root):
    root = Path(root)
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def assert_same_tree(a, b, skip=()):
    files_a = [f for f in tree_files(a) if str(f) not in skip]
    assert files_a == [f for f in tree_files(b) if str(f) not in skip]
    for f in files_a:
        assert filecmp.cmp(Path(a) / f, Path(b) / f, shallow=False), f


def test_run_all_writes_reports(tiny_config, tmp_path):
    out = tmp_path / "run"
    assert main(["run-all", "--config", str(tiny_config), "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert 0.0 <= metrics["overall_accuracy"] <= 1.0
    for name in ("metrics.csv", "metrics.svg", "ablation.json", "ablation.svg", "split.json",
                 "models/depth/model.json", "models/inertial/model.json"):
        assert (out / name).is_file(), name
    assert set(json.loads((out / "ablation.json").read_text())) == {"depth", "inertial", "fused"}
    widths = {m: json.loads((out / "features" / m / FEATURE_INDEX).read_text())["width"]
              for m in ("depth", "inertial")}
    assert widths == {"depth": 500, "inertial": 500}
    w = tensor.load(out / "classifiers" / "svm_fused" / "W.hart")
    assert w.shape == (3, 1000)
    assert tensor.load(out / "classifiers" / "svm_depth" / "W.hart").shape == (3, 500)


def test_run_all_equals_subcommand_chain(tiny_config, tmp_path):
    ref = tmp_path / "ref"
    assert main(["run-all", "--config", str(tiny_config), "--out", str(ref)]) == 0

    out, data = tmp_path / "chain", tmp_path / "data"
    syn = TINY_CONFIG["synth"]
    train_cfg = tmp_path / "train.json"
    train_cfg.write_text(json.dumps({"max_epochs": 1}))
    steps = [
        ["synth", "--out", data, "--seed", 7, "--num-classes", syn["num_classes"],
         "--trials-per-class", syn["trials_per_class"], "--frames", syn["frames"],
         "--height", syn["height"], "--width", syn["width"],
         "--inertial-len", syn["inertial_len"], "--noise-level", syn["noise_level"]],
        ["make-sfi", "--manifest", data / "manifest.json", "--out", out / "sfi", "--size", 16],
        ["make-signal-images", "--manifest", data / "manifest.json", "--out", out / "signal"],
        ["augment", "--images", out / "signal", "--out", out / "signal_aug", "--seed", 0],
        ["split", "--manifest", data / "manifest.json", "--out", out / "split.json",
         "--seed", 0],
        ["train-depth", "--images", out / "sfi", "--split", out / "split.json",
         "--out", out / "models" / "depth", "--config", train_cfg, "--seed", 0],
        ["train-inertial", "--images", out / "signal_aug", "--split", out / "split.json",
         "--out", out / "models" / "inertial", "--config", train_cfg, "--seed", 0],
        ["extract", "--model", out / "models" / "depth", "--images", out / "sfi",
         "--out", out / "features" / "depth"],
        ["extract", "--model", out / "models" / "inertial", "--images", out / "signal",
         "--out", out / "features" / "inertial"],
    ]
    feats = ["--depth-features", out / "features" / "depth",
             "--inertial-features", out / "features" / "inertial", "--split", out / "split.json"]
    for modality in ("fused", "depth", "inertial"):
        steps.append(["fit-classifier", "--head", "svm", "--modality", modality, *feats,
                      "--out", out / "classifiers" / f"svm_{modality}"])
    steps.append(["evaluate", "--classifier", out / "classifiers" / "svm_fused", *feats,
                  "--out", out])
    for step in steps:
        assert main([str(a) for a in step]) == 0, step

    # config.json and the ablation chart exist only for run-all
    assert_same_tree(ref, out, skip={"config.json", "ablation.json", "ablation.svg"})


def test_flags_override_config(tiny_config, tmp_path):
    out = tmp_path / "run"
    code = main(["run-all", "--config", str(tiny_config), "--out", str(out),
                 "--head", "softmax", "--modality", "depth", "--seed", "3"])
    assert code == 0
    cfg = json.loads((out / "config.json").read_text())
    assert (cfg["head"], cfg["modality"], cfg["seed"]) == ("softmax", "depth", 3)
    assert (out / "classifiers" / "softmax_depth" / "classifier.json").is_file()
    assert json.loads((out / "split.json").read_text())["seed"] == 3


def test_relative_paths_follow_config_location(tmp_path):
    sub = tmp_path / "cfg"
    sub.mkdir()
    (sub / "c.json").write_text(json.dumps(TINY_CONFIG))
    cfg = PipelineConfig.load(sub / "c.json")
    assert cfg.path(cfg.data_dir) == sub.resolve() / "data"


def test_repeat_cli(tiny_config, tmp_path):
    out = tmp_path / "rep"
    assert main(["repeat", "--config", str(tiny_config), "--out", str(out), "--runs", "2"]) == 0
    doc = json.loads((out / "summary.json").read_text())
    assert doc["fused"]["seeds"] == [0, 1]
    for m in ("depth", "inertial", "fused"):
        assert (out / f"summary_{m}.csv").read_text().startswith("class_id,accuracy\n")
    assert (out / "summary.svg").is_file()


def test_exit_codes(tiny_config, tmp_path, capsys):
    assert main(["no-such-command"]) == 2
    assert main(["run-all"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**TINY_CONFIG, "head": "forest"}))
    assert main(["run-all", "--config", str(bad)]) == 2
    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({**TINY_CONFIG, "synth": None, "manifest": "nope.json"}))
    assert main(["run-all", "--config", str(missing), "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "stage run-all failed" in err
    diverge = tmp_path / "diverge.json"
    diverge.write_text(json.dumps({**TINY_CONFIG, "depth_train": {"max_epochs": 3,
                                                                   "initial_lr": 1e12}}))
    assert main(["run-all", "--config", str(diverge), "--out", str(tmp_path / "d")]) == 4
    assert main(["evaluate", "--classifier", "x", "--split", "y", "--out", "z",
                 "--formats", "pdf"]) == 2


def test_data_error_from_stage(tmp_path, capsys):
    tensor.save(np.ones((4, 4), np.float32), tmp_path / "x.hart")
    assert main(["extract", "--model", str(tmp_path / "none"), "--images", str(tmp_path),
                 "--out", str(tmp_path / "f")]) == 3
    assert "stage extract failed" in capsys.readouterr().err


# -- in-memory protocol -----------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_trials(tmp_path_factory):
    base = tmp_path_factory.mktemp("mem")
    cfg = PipelineConfig.from_json(TINY_CONFIG, base)
    manifest = load_dataset(cfg)
    return cfg, build_trial_images(manifest, cfg.sfi_epsilon, cfg.sfi_size), manifest.num_classes


def test_run_once_shapes(tiny_trials):
    cfg, trials, k = tiny_trials
    assert all(t.sfis.shape == (3, 16, 16) for t in trials)  # T - 1 SFIs per trial
    res = run_once(cfg, trials, k, seed=0, modalities=("depth", "fused"))
    assert res.models["depth"].feature_dim == 500
    assert res.models["fused"].feature_dim == 1000
    assert res.metrics["fused"].num_test == 3


def test_repeat_is_reproducible(tiny_trials):
    cfg, trials, k = tiny_trials
    a = repeat_ablation(cfg, 3, 5, trials=trials, num_classes=k)
    b = repeat_ablation(cfg, 3, 5, trials=trials, num_classes=k)
    assert {m: s.to_json() for m, s in a.items()} == {m: s.to_json() for m, s in b.items()}
    assert a["fused"].seeds == [5, 6, 7]
    for s in a.values():
        assert min(s.per_run_accuracy) <= s.mean <= max(s.per_run_accuracy)
    single = repeat_runs(cfg, 1, 5, trials=trials, num_classes=k)
    assert single.std == 0.0 and single.mean == a["fused"].per_run_accuracy[0]


def test_ablation_switch(tiny_trials):
    cfg, trials, k = tiny_trials
    s = ablate_modality(cfg, "inertial", 1, 0, trials=trials, num_classes=k)
    assert s.label == "inertial"
    with pytest.raises(ConfigError):
        ablate_modality(cfg, "rgb", 1, 0, trials=trials, num_classes=k)


def test_run_errors_carry_index_and_stage(tiny_trials):
    cfg, trials, k = tiny_trials
    bad = replace(cfg, train_fraction=0.01)
    with pytest.raises(RunError) as info:
        repeat_ablation(bad, 2, 0, trials=trials, num_classes=k)
    assert info.value.run_index == 0 and info.value.stage == "split"


def test_config_errors():
    with pytest.raises(ConfigError):
        PipelineConfig.from_json({"synth": TINY_CONFIG["synth"], "colour": 1})
    with pytest.raises(ConfigError):
        PipelineConfig.from_json({})
    with pytest.raises(ConfigError):
        PipelineConfig.from_json({**TINY_CONFIG, "ablations": ["rgb"]})
    with pytest.raises(ConfigError):
        PipelineConfig.from_json({**TINY_CONFIG, "depth_train": {"momentum": 2}})
