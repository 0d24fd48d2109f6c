import json

import pytest

from cfa_forecast import config as C
from cfa_forecast.cli import main
from cfa_forecast.data import TimeSeries, write_jsonl
from cfa_forecast.exceptions import ConfigError
from cfa_forecast.schemas import validate_artifact

SMALL_CFA = {"epochs": 1, "max_batches_per_epoch": 3, "batch_size": 8, "d_model": 8, "hidden": 8,
             "disc_hidden": 8, "n_heads": 2, "n_conv_layers": 2}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def synth(tmp_path):
    cfg = write(tmp_path / "syn.json", {"synthetic": {"n_series": 40, "tau_c": 40, "tau_f": 8, "p_min": 6,
                                                      "p_max": 9, "seed": 1},
                                        "n_train": 30, "output_dir": str(tmp_path / "data")})
    assert main(["synth", "--config", cfg]) == 0
    return tmp_path / "data"


def _src(data, name="train.jsonl"):
    return {"path": str(data / name), "kind": "synthetic", "tau_c": 40, "tau_f": 8}


@pytest.fixture
def trained(tmp_path, synth):
    cfg = write(tmp_path / "train.json", {"model": "cfa", "params": SMALL_CFA, "sources": [_src(synth)],
                                          "output_dir": str(tmp_path / "run")})
    assert main(["train", "--config", cfg]) == 0
    return tmp_path / "run"


def test_synth_outputs_and_byte_reproducible(tmp_path, synth):
    files = {f: (synth / f).read_bytes() for f in ("train.jsonl", "test.jsonl", "manifest.json")}
    assert files["train.jsonl"].count(b"\n") == 30 and files["test.jsonl"].count(b"\n") == 10
    man = json.loads(files["manifest.json"])
    assert man["synthetic"]["seed"] == 1 and man["n_train"] == 30
    for f in files:
        validate_artifact(synth / f)
    cfg = str(tmp_path / "syn.json")
    assert main(["synth", "--config", cfg]) == 2  # refuses to overwrite
    assert main(["synth", "--config", cfg, "--overwrite"]) == 0
    assert {f: (synth / f).read_bytes() for f in files} == files
    assert main(["synth", "--config", cfg, "--overwrite", "--seed", "2"]) == 0
    assert (synth / "train.jsonl").read_bytes() != files["train.jsonl"]


def test_synth_single_series(tmp_path):
    cfg = write(tmp_path / "s.json", {"synthetic": {"n_series": 1}, "output_dir": str(tmp_path / "o")})
    assert main(["synth", "--config", cfg]) == 0
    lines = (tmp_path / "o" / "train.jsonl").read_text().splitlines() + \
        (tmp_path / "o" / "test.jsonl").read_text().splitlines()
    assert len(lines) == 1


def test_synth_table_one_sizes(tmp_path):
    cfg = write(tmp_path / "s.json", {"synthetic": {"p_min": 15, "p_max": 20}, "output_dir": str(tmp_path / "o")})
    assert main(["synth", "--config", cfg]) == 0
    assert (tmp_path / "o" / "train.jsonl").read_text().count("\n") == 4000
    assert (tmp_path / "o" / "test.jsonl").read_text().count("\n") == 1000


def test_train_history_and_reproducibility(tmp_path, trained, synth):
    hist = json.loads((trained / "history.json").read_text())
    validate_artifact(trained / "history.json")
    row = hist["epochs"][0]["sources"]["train"]
    assert row["discriminator_loss"] is not None and row["forecast_loss"] > 0
    before = {f: (trained / f).read_bytes() for f in ("history.json", "model.ckpt")}
    assert main(["train", "--config", str(tmp_path / "train.json"), "--overwrite"]) == 0
    assert {f: (trained / f).read_bytes() for f in before} == before


def test_train_mean_immediate(tmp_path, synth):
    cfg = write(tmp_path / "t.json", {"model": "mean", "sources": [_src(synth)], "output_dir": str(tmp_path / "m")})
    assert main(["train", "--config", cfg]) == 0
    assert json.loads((tmp_path / "m" / "history.json").read_text())["epochs"] == []
    assert (tmp_path / "m" / "model.ckpt").read_bytes()[:8] == b"CFACKPT1"


def test_train_resume(tmp_path, trained, synth):
    ok = write(tmp_path / "r.json", {"model": "cfa", "params": SMALL_CFA, "sources": [_src(synth)],
                                     "output_dir": str(tmp_path / "r1")})
    assert main(["train", "--config", ok, "--resume", str(trained / "model.ckpt")]) == 0
    bad = write(tmp_path / "r2.json", {"model": "cfa", "params": {**SMALL_CFA, "d_model": 16},
                                       "sources": [_src(synth)], "output_dir": str(tmp_path / "r2")})
    assert main(["train", "--config", bad, "--resume", str(trained / "model.ckpt")]) == 2


def test_train_nan_exit_code(tmp_path, synth):
    params = {**SMALL_CFA, "lr": 1e30, "max_batches_per_epoch": 5, "epochs": 3}
    cfg = write(tmp_path / "t.json", {"model": "cfa", "params": params, "sources": [_src(synth)],
                                      "output_dir": str(tmp_path / "nan")})
    assert main(["train", "--config", cfg]) == 3


def test_eval_outputs_and_key_dump(tmp_path, trained, synth):
    cfg = write(tmp_path / "e.json", {"checkpoint": str(trained / "model.ckpt"), "target": _src(synth, "test.jsonl"),
                                      "metrics": ["nd"], "output_dir": str(tmp_path / "ev")})
    assert main(["eval", "--config", cfg, "--dump-keys"]) == 0
    ev = tmp_path / "ev"
    rep = json.loads((ev / "report.json").read_text())
    assert [r["metric"] for r in rep["rows"]] == ["nd"]
    for f in ("report.json", "forecasts.csv", "keys.csv"):
        validate_artifact(ev / f)
    assert (ev / "forecasts.csv").read_text().count("\n") == 1 + 10 * 8
    assert (ev / "keys.csv").read_text().splitlines()[0] == ",".join([f"k{i}" for i in range(8)] + ["period"])


def test_eval_missing_checkpoint(tmp_path, synth, capsys):
    cfg = write(tmp_path / "e.json", {"checkpoint": str(tmp_path / "nope.ckpt"), "target": _src(synth, "test.jsonl"),
                                      "output_dir": str(tmp_path / "ev")})
    assert main(["eval", "--config", cfg]) == 4
    assert "nope.ckpt" in capsys.readouterr().err


def test_eval_undefined_metric(tmp_path, trained):
    data = tmp_path / "zeros.jsonl"
    write_jsonl([TimeSeries("z", "synthetic", [0.0] * 48)], data)
    cfg = write(tmp_path / "e.json", {"checkpoint": str(trained / "model.ckpt"),
                                      "target": {"path": str(data), "kind": "synthetic", "tau_c": 40, "tau_f": 8},
                                      "metrics": ["nd"], "output_dir": str(tmp_path / "ev")})
    assert main(["eval", "--config", cfg]) == 4


def test_grid_ranges_and_resume(tmp_path):
    cfg = write(tmp_path / "g.json", {"models": ["mean", "cfa"], "seeds": [0],
                                      "synthetic": {"n_series": 30, "tau_c": 40, "tau_f": 8}, "n_train": 20,
                                      "model_params": {"cfa": SMALL_CFA}, "output_dir": str(tmp_path / "g")})
    assert main(["grid", "--config", cfg, "--ranges", "5:8,8:11"]) == 0
    out = tmp_path / "g"
    grid = json.loads((out / "grid.json").read_text())
    assert len({(r["source"], r["target"]) for r in grid["rows"]}) == 2
    for f in ("grid.json", "grid.csv", "cells.jsonl"):
        validate_artifact(out / f)
    first = (out / "grid.json").read_bytes()
    assert main(["grid", "--config", cfg, "--ranges", "5:8,8:11"]) == 0  # resumes from cells.jsonl
    assert (out / "grid.json").read_bytes() == first
    assert main(["grid", "--config", cfg, "--ranges", "5:8,8:11", "--overwrite"]) == 0
    assert (out / "grid.json").read_bytes() == first


def test_probe_command(tmp_path, trained, synth):
    e = write(tmp_path / "e.json", {"checkpoint": str(trained / "model.ckpt"), "target": _src(synth, "test.jsonl"),
                                    "output_dir": str(tmp_path / "ev"), "dump_keys": True})
    assert main(["eval", "--config", e]) == 0
    keys = str(tmp_path / "ev" / "keys.csv")
    p = write(tmp_path / "p.json", {"dump_a": keys, "dump_b": keys, "source_range": [1, 100],
                                    "output_dir": str(tmp_path / "pr")})
    assert main(["probe", "--config", p]) == 0
    res = json.loads((tmp_path / "pr" / "probe.json").read_text())
    assert res["ratio"] == 1.0
    validate_artifact(tmp_path / "pr" / "probe.json")


@pytest.mark.parametrize("obj,field", [
    ({"synthetic": {"p_min": -1}}, "p_min"),
    ({"synthetic": {"n_series": "many"}}, "n_series"),
    ({"synthetic": {"bogus": 1}}, "bogus"),
    ({"n_train": 10 ** 9}, "n_train"),
    ({}, "output_dir"),
])
def test_config_errors_name_field(tmp_path, capsys, obj, field):
    obj = {"output_dir": str(tmp_path / "x"), **obj} if field != "output_dir" else obj
    cfg = write(tmp_path / "c.json", obj)
    assert main(["synth", "--config", cfg]) == 2
    assert field in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_bad_flags(tmp_path):
    cfg = write(tmp_path / "c.json", {"output_dir": str(tmp_path / "x")})
    assert main(["synth", "--config", cfg, "--seed", "-1"]) == 2
    assert main(["synth", "--config", cfg, "--jobs", "0"]) == 2
    assert main(["synth", "--config", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["synth", "--config", str(tmp_path / "broken.json")]) == 2


def test_train_config_validation(tmp_path, synth):
    base = {"model": "cfa", "sources": [_src(synth)], "output_dir": str(tmp_path / "t")}
    with pytest.raises(ConfigError, match="lam"):
        C.train_run({**base, "params": {"lam": -1}})
    with pytest.raises(ConfigError, match="sources"):
        C.train_run({**base, "sources": []})
    with pytest.raises(ConfigError, match=r"sources\[0\].path"):
        C.train_run({**base, "sources": [{"path": str(tmp_path / "none.jsonl")}]})
    with pytest.raises(ConfigError, match="model"):
        C.train_run({**base, "model": "arima"})


def test_dataset_ref_freq_defaults(tmp_path, synth):
    ref = C.dataset_ref({"path": str(synth / "train.jsonl"), "freq": "M"}, "t")
    assert (ref.tau_c, ref.tau_f) == (36, 12)
    with pytest.raises(ConfigError, match="freq"):
        C.dataset_ref({"path": str(synth / "train.jsonl"), "freq": "W"}, "t")


def test_parse_ranges():
    assert C.parse_ranges("10:15,15:20") == [(10.0, 15.0), (15.0, 20.0)]
    with pytest.raises(ConfigError):
        C.parse_ranges("10-15")
    with pytest.raises(ConfigError):
        C.parse_ranges("20:15")


def test_grid_config_defaults(tmp_path):
    run = C.grid_run({"output_dir": str(tmp_path)})
    assert len(run.source_ranges) == 4 and run.seeds == [0, 1, 2] and run.models == ["mean", "cfa", "lstm"]
    with pytest.raises(ConfigError, match="seeds"):
        C.grid_run({"output_dir": str(tmp_path), "seeds": []})
    with pytest.raises(ConfigError, match="metric"):
        C.grid_run({"output_dir": str(tmp_path), "metric": "mae"})
