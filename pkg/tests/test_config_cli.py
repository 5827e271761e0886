import csv
import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from specsense import cli
from specsense.config import ConfigError, build_config, defaults_for, load_config
from specsense.detectors import RatePoint
from specsense.io import RunManifest, csv_text, emit_csv, read_csv


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestConfig:
    def test_minimal_defaults(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("command: gen-data\n")
        cfg = load_config(p)
        d = cfg.params["dataset"]
        assert d["n_samples"] == 100 and d["n_h0"] == 20000 and d["snr_db"][0] == -20 and d["snr_db"][-1] == 18

    def test_misspelled_key(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("command: bandit-sim\nparams:\n  agent:\n    epislon: 0.2\n")
        with pytest.raises(ConfigError, match=r"epislon.*line 4"):
            load_config(p)

    def test_type_error(self):
        with pytest.raises(ConfigError, match="runs"):
            build_config({"command": "bandit-sim", "params": {"runs": "many"}})

    def test_unknown_top_level(self):
        with pytest.raises(ConfigError, match="sede"):
            build_config({"command": "cost", "sede": 3})

    def test_command_mismatch(self):
        with pytest.raises(ConfigError):
            build_config({"command": "cost"}, "roc")

    def test_round_trip(self, tmp_path):
        cfg = build_config({"command": "bandit-sim", "seed": 7, "preset": ["bandit", "fig12"], "params": {"runs": 3}})
        p = tmp_path / "eff.yaml"
        p.write_text(cfg.to_yaml())
        back = load_config(p)
        assert back.to_dict() == cfg.to_dict()

    def test_presets(self):
        cfg = build_config({"command": "gen-data", "preset": "dataset3"})
        assert cfg.params["dataset"]["n_samples"] == 640
        assert cfg.params["dataset"]["noise"]["kind"] == "sas"
        with pytest.raises(ConfigError):
            build_config({"command": "cost", "preset": "dataset2"})

    def test_set_override(self):
        cfg = build_config({"command": "bandit-sim"})
        cfg.set("agent.epsilon", "0.3")
        cfg.set("seed", "11")
        assert cfg.params["agent"]["epsilon"] == 0.3 and cfg.seed == 11
        with pytest.raises(ConfigError):
            cfg.set("agent.epsilonn", "0.3")

    def test_list_items_filled(self):
        cfg = build_config({"command": "bandit-sim", "params": {"plan": [{"frames": 10, "hypothesis": "H0"}]}})
        assert cfg.params["plan"] == [{"frames": 10, "hypothesis": "H0", "gsnr_db": None}]

    def test_unknown_command(self):
        with pytest.raises(ConfigError):
            defaults_for("plot")


class TestIo:
    def test_header_only(self, tmp_path):
        p = emit_csv([], tmp_path / "e.csv", ["a", "b"])
        assert p.read_text() == "a,b\n"

    def test_rate_point(self, tmp_path):
        p = emit_csv([RatePoint(0.5, 0.01, 3.0)], tmp_path / "r.csv")
        assert p.read_text() == "pd,pfa,snr_db\n0.5,0.01,3\n"

    def test_round_trip_10k(self, tmp_path):
        rng = np.random.default_rng(0)
        vals = rng.normal(scale=1e3, size=(10_000, 3))
        emit_csv(vals.tolist(), tmp_path / "x.csv", ["a", "b", "c"])
        back = np.array([[float(r[c]) for c in "abc"] for r in read_csv(tmp_path / "x.csv")])
        assert np.allclose(back, vals, rtol=5e-6, atol=0)

    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), max_size=20))
    @settings(max_examples=50)
    def test_six_digits(self, xs):
        lines = csv_text([(x,) for x in xs], ["v"]).splitlines()[1:]
        for x, line in zip(xs, lines):
            assert float(line) == pytest.approx(x, rel=1e-5, abs=1e-300)

    def test_tuple_needs_columns(self):
        with pytest.raises(ValueError):
            csv_text([(1, 2)])


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestCli:
    def test_cost(self, tmp_path):
        assert run("cost", "--out", tmp_path) == 0
        rows = read_rows(tmp_path / "cost.csv")
        assert [(r["rrm_millions"], r["weights_thousands"]) for r in rows] == [
            ("0.038", "0.5"),
            ("4.854", "30.6"),
            ("27.075", "42.7"),
        ]
        m = RunManifest.read(tmp_path / "manifest.json")
        assert m.command == "cost" and m.verify(tmp_path)

    def test_selfcheck(self, tmp_path):
        assert run("selfcheck", "--out", tmp_path) == 0
        assert all(r["passed"] == "1" for r in read_rows(tmp_path / "selfcheck.csv"))

    def test_config_error_exit(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text("command: bandit-sim\nparams:\n  agent:\n    epislon: 0.2\n")
        assert run("bandit-sim", "--config", p, "--out", tmp_path / "o") == cli.EXIT_CONFIG
        err = capsys.readouterr().err.strip()
        assert "epislon" in err and "\n" not in err

    def test_runtime_error_exit(self, tmp_path, capsys):
        code = run("nas-search", "--out", tmp_path, "--set", "evaluator.kind=planted", "--set", "evaluator.target=GAP")
        assert code == cli.EXIT_RUNTIME
        assert len(capsys.readouterr().err.strip().splitlines()) == 1

    def test_dump_config(self, capsys):
        assert run("cost", "--dump-config") == 0
        assert yaml.safe_load(capsys.readouterr().out)["command"] == "cost"

    def test_gen_data_and_train(self, tmp_path):
        sets = ["--set", "dataset.n_h0=40", "--set", "dataset.n_h1=40", "--set", "dataset.snr_db=[20]"]
        assert run("gen-data", "--out", tmp_path / "g", *sets) == 0
        assert (tmp_path / "g" / "dataset.cgsd").stat().st_size > 0
        train = sets + ["--set", "k=2", "--set", "epochs=1", "--set", "arch=C8x3,GAP"]
        assert run("train", "--out", tmp_path / "t", "--threads", 2, *train) == 0
        rows = read_rows(tmp_path / "t" / "kfold.csv")
        assert len(rows) == 3 and rows[-1]["fold"] == "mean"
        assert (tmp_path / "t" / "network.ssnet").exists()

    def test_nas_planted_and_resume(self, tmp_path):
        sets = ["--set", "evaluator.kind=planted", "--set", "evaluator.target=C32x5,GAP", "--set", "nas.n_episodes=600"]
        assert run("nas-search", "--out", tmp_path / "a", *sets) == 0
        best = read_rows(tmp_path / "a" / "best.csv")[0]
        assert best["arch_tokens"] == "C32x5,GAP" and float(best["reward"]) == 1.0
        ck = tmp_path / "a" / "checkpoint.json"
        assert run("nas-search", "--out", tmp_path / "b", *sets, "--set", f"resume={ck}") == 0
        log = read_rows(tmp_path / "b" / "checkpoint.log.csv")
        assert int(log[0]["episode"]) == 600 and len(log) == 600

    def test_bandit_fig11(self, tmp_path):
        assert run("bandit-sim", "--preset", "bandit", "--preset", "fig11", "--set", "runs=2", "--out", tmp_path) == 0
        summary = {r["policy"]: float(r["mean_average_reward"]) for r in read_rows(tmp_path / "summary.csv")}
        assert set(summary) == {"egreedy", "gb", "always-8us", "always-32us"}
        header = (tmp_path / "trace_egreedy.csv").read_text().splitlines()[0]
        assert header == "frame,section,gsnr_db,hypothesis,action_id,decision,reward,smoothed_reward"

    def test_pd_curve_and_roc(self, tmp_path):
        assert run("pd-curve", "--out", tmp_path, "--set", "trials=300", "--set", "snr_db=[-10,0,10]") == 0
        rows = read_rows(tmp_path / "pd_curve.csv")
        assert list(rows[0]) == ["detector", "n_samples", "snr_db", "pfa", "pd"]
        pd = [float(r["pd"]) for r in rows]
        assert pd == sorted(pd)
        assert run("roc", "--out", tmp_path, "--set", "trials=300", "--set", "n_points=11") == 0
        assert len(read_rows(tmp_path / "roc.csv")) == 11

    def test_byte_identical_reruns(self, tmp_path):
        args = ["bandit-sim", "--preset", "fig11", "--set", "runs=2", "--seed", 9]
        assert run(*args, "--out", tmp_path / "x") == 0
        assert run(*args, "--out", tmp_path / "y", "--threads", 3) == 0
        for name in ("summary.csv", "trace_egreedy.csv", "trace_gb.csv", "bank.csv"):
            assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()
        mx = json.loads((tmp_path / "x" / "manifest.json").read_text())
        assert mx["seed"] == 9 and mx["outputs"]["summary.csv"]

    def test_different_seed_differs(self, tmp_path):
        base = ["bandit-sim", "--preset", "fig11", "--set", "runs=1"]
        run(*base, "--seed", 1, "--out", tmp_path / "a")
        run(*base, "--seed", 2, "--out", tmp_path / "b")
        assert (tmp_path / "a" / "trace_egreedy.csv").read_bytes() != (tmp_path / "b" / "trace_egreedy.csv").read_bytes()
