import json

import pytest

from xdjdl.cli import load_config, main

PLANTED = {"synth": {"kind": "planted", "d": 32, "k_e": 24, "k_p": 48, "t_e": 3, "t_p": 3, "n": 400},
           "train": {"k_e": 24, "k_p": 48, "t_e": 3, "t_p": 3}}


def _cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _run(cmds, cfg, out):
    for c in cmds:
        args = [c, "--out", str(out)] + (["--config", cfg] if cfg else [])
        code = main(args)
        if code:
            return code
    return 0


def test_synth_default(tmp_path):
    assert main(["synth", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "record_000.csv").exists()
    truth = json.loads((tmp_path / "record_000.fiducials.json").read_text())
    assert truth["r_peaks"] and set(truth["fiducials"]) == set("pqrst")


def test_invalid_hr_exit_2(tmp_path, capsys):
    cfg = _cfg(tmp_path, {"synth": {"hr_bpm": 0}})
    assert main(["synth", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "hr_bpm" in capsys.readouterr().err


def test_unknown_field_exit_2(tmp_path):
    cfg = _cfg(tmp_path, {"train": {"k_q": 3}})
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--seed", "5", "--out", str(a)]) == 0
    assert main(["synth", "--seed", "5", "--out", str(b)]) == 0
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_missing_model_exit_3(tmp_path):
    cfg = _cfg(tmp_path, PLANTED)
    assert _run(["synth", "train"], cfg, tmp_path) == 0
    (tmp_path / "model.xdjd").unlink()
    assert main(["infer", "--config", cfg, "--out", str(tmp_path)]) == 3


def test_corrupt_model_exit_3(tmp_path):
    cfg = _cfg(tmp_path, PLANTED)
    assert _run(["synth", "train"], cfg, tmp_path) == 0
    (tmp_path / "model.xdjd").write_bytes(b"garbage")
    assert main(["infer", "--config", cfg, "--out", str(tmp_path)]) == 3


def test_numeric_failure_exit_4(tmp_path):
    cfg = _cfg(tmp_path, dict(PLANTED, synth=dict(PLANTED["synth"], n=40)))
    assert _run(["synth", "train"], cfg, tmp_path) == 4


@pytest.fixture(scope="module")
def planted_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    out = {}
    for variant in ("xdjdl", "dct"):
        cfg = dict(PLANTED, train=dict(PLANTED["train"], variant=variant))
        d = root / variant
        d.mkdir()
        path = _cfg(d, cfg)
        assert _run(["synth", "train", "infer", "eval"], path, d) == 0
        out[variant] = json.loads((d / "report.json").read_text())
    return out


def test_planted_end_to_end(planted_runs):
    rep = planted_runs["xdjdl"]
    assert rep["rho"]["mean"] >= 0.95
    assert rep["extra"]["split"]["train_ratio"] == 0.8
    assert len(rep["extra"]["split"]["test"]) == 80


def test_dct_worse_on_planted(planted_runs):
    assert planted_runs["dct"]["rrmse"]["mean"] > planted_runs["xdjdl"]["rrmse"]["mean"]


def test_records_pipeline_with_o2o_test(tmp_path, capsys):
    cfg = _cfg(tmp_path, {"synth": {"duration": 40, "n_records": 2},
                          "preprocess": {"d": 100, "test_mode": "o2o"},
                          "train": {"k_e": 16, "k_p": 24, "t_e": 3, "t_p": 3, "max_iters": 5}})
    assert _run(["synth", "preprocess", "train", "infer", "eval"], cfg, tmp_path) == 0
    assert "rho" in capsys.readouterr().out
    info = json.loads((tmp_path / "infer.json").read_text())
    assert info["offset_compensated"] and info["mode"] == "o2o"
    assert (tmp_path / "per_cycle.csv").read_text().startswith("index,rho,rrmse")


def test_seed_override():
    cfg = load_config(None, seed=11)
    assert cfg["synth"]["seed"] == cfg["train"]["seed"] == 11
