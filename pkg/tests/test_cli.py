import json

import pytest

from se2kit.cli import DEFAULTS, CLIError, main, merge_config

SMALL = {
    "data": {"n_test": 4},
    "train": {"epochs": 60},
    "selection": {"n_validation": 0},
    "quantize": {"steps": 20, "restarts": 2},
    "device": {"n_test": 2, "n_chips": 2},
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return p


def test_merge_rejects_unknown_keys():
    merged = merge_config(DEFAULTS, {"train": {"epochs": 3}})
    assert merged["train"]["epochs"] == 3 and DEFAULTS["train"]["epochs"] == 40000
    with pytest.raises(CLIError):
        merge_config(DEFAULTS, {"train": {"epoch": 3}})


def test_pipeline_subcommands(tmp_path, cfg_file, capsys):
    rd = tmp_path / "run"
    common = ["--seed", "3", "--config", str(cfg_file), "--run-dir", str(rd)]
    assert main(common + ["gen-data"]) == 0
    assert main(common + ["train", "--data", str(rd / "data.npz")]) == 0
    assert main(common + ["map", "--net", str(rd / "net.json")]) == 0
    assert main(common + ["quantize", "--spec", str(rd / "spec.json")]) == 0
    assert main(common + ["deploy", "--spec", str(rd / "spec.json"), "--quant", str(rd / "quant.json")]) == 0
    assert main(common + ["run-device", "--device-config", str(rd / "config.json"),
                          "--input", str(rd / "target0_events.csv")]) == 0
    assert main(common + ["reverse", "--device-config", str(rd / "config.json")]) == 0
    assert main(common + ["evaluate", "--data", str(rd / "data.npz"),
                          "--device-config", str(rd / "config.json"), "--n-test", "2"]) == 0
    manifest = json.loads((rd / "manifest.json").read_text())
    steps = manifest["steps"]
    assert [s["command"] for s in steps] == ["gen-data", "train", "map", "quantize", "deploy",
                                             "run-device", "reverse", "evaluate"]
    assert all(s["seed"] == 3 for s in steps)
    assert all(len(h) == 64 for s in steps for h in s["outputs"].values())
    assert "numpy" in steps[0]["versions"]
    assert (rd / "output_events.csv").read_text().startswith("timestamp_us,address")


def test_repro_and_bench(tmp_path, cfg_file, capsys):
    rd = tmp_path / "repro"
    assert main(["--config", str(cfg_file), "--run-dir", str(rd), "repro"]) == 0
    out = capsys.readouterr().out
    assert "stage,set,n" in out and "device ordering correct on" in out
    for name in ("table.csv", "frr_all.csv", "config.json", "device_target0_output.csv"):
        assert (rd / name).exists()
    assert main(["--run-dir", str(rd), "bench", "--epochs", "3", "--backend", "numpy"]) == 0
    assert (rd / "bench.csv").read_text().startswith("backend,")


def test_errors_return_status_2(tmp_path, capsys):
    assert main(["--run-dir", str(tmp_path), "map", "--net", str(tmp_path / "missing.json")]) == 2
    assert "does not exist" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": 1}))
    assert main(["--config", str(bad), "--run-dir", str(tmp_path), "gen-data"]) == 2


def test_defaults_command(capsys):
    assert main(["defaults"]) == 0
    assert json.loads(capsys.readouterr().out)["train"]["epochs"] == 40000
