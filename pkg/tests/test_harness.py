import os

import numpy as np
import pytest

from gaclab.agents import TrainConfig
from gaclab.harness import cli
from gaclab.harness.config import coerce_overrides, load_ablation
from gaclab.harness.io import RunManifest, format_value, read_csv, read_manifest, write_csv

FAST = ["--hidden", "16", "--batch-size", "32", "--warmup", "100", "--log-every", "100",
        "--eval-episodes", "2"]


def _run(argv, capsys=None):
    return cli.main(argv)


def _data_rows(path):
    with open(path) as fh:
        return fh.read()


class TestParse:
    def test_concentration_example(self):
        args = cli.parse_cli(["validate-concentration", "--dim", "3", "--samples", "50000",
                              "--kappas", "-2,-1,0,0.5,1,2", "--seed", "0"])
        assert args.kappas == [-2.0, -1.0, 0.0, 0.5, 1.0, 2.0] and args.samples == 50000

    def test_train_fills_defaults(self):
        args = cli.parse_cli(["train", "--env", "point-mass", "--dim", "4", "--policy", "gac",
                              "--steps", "50000", "--radius", "2.5"])
        cfg = cli.config_from_args(args)
        assert cfg == TrainConfig(steps=50000, radius=2.5)
        assert (cfg.gamma, cfg.tau, cfg.batch_size, cfg.actor_lr, cfg.critic_lr) == (
            0.99, 0.005, 256, 3e-4, 1e-3)

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.parse_cli(["saturation", "--bogus", "1"])
        assert exc.value.code == 2
        assert "--bogus" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.parse_cli(["frobnicate"])
        assert exc.value.code == 2
        assert "frobnicate" in capsys.readouterr().err

    def test_missing_env(self):
        with pytest.raises(SystemExit) as exc:
            cli.parse_cli(["train", "--dim", "4"])
        assert exc.value.code == 2

    def test_help_lists_defaults(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.parse_cli(["train", "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "--kappa-max" in out and "default: 5.0" in out

    def test_every_flag_has_default_help(self):
        parser = cli.build_parser()
        sub = next(a for a in parser._actions if a.dest == "command")
        for name, p in sub.choices.items():
            for action in p._actions:
                if action.dest != "help":
                    assert action.help, (name, action.dest)

    def test_out_dir_env_var(self, monkeypatch, tmp_path):
        monkeypatch.setenv("GAC_OUT_DIR", str(tmp_path))
        assert cli.parse_cli(["saturation"]).out == str(tmp_path)


class TestIo:
    def test_format_value(self):
        assert format_value(0.1) == "0.1"
        assert format_value(np.float32(0.5)) == "0.5"
        assert format_value(float("nan")) == "nan"
        assert format_value(True) == "true" and format_value(None) == ""
        assert format_value(np.int64(3)) == "3"

    def test_csv_round_trip(self, tmp_path):
        p = write_csv(tmp_path / "x.csv", ("a", "b"), [{"a": 1, "b": 2.5}, {"a": 2}])
        assert read_csv(p) == [{"a": "1", "b": "2.5"}, {"a": "2", "b": ""}]

    def test_manifest_round_trip(self, tmp_path):
        out = tmp_path / "o.csv"
        out.write_text("x\n")
        m = RunManifest("gaclab x", "x", 3, config={"a": 1.5}, results={"ok": True},
                        outputs={"o": str(out), "missing": str(tmp_path / "nope")},
                        checkpoints={"policy": str(out)})
        m.write(tmp_path / "m.txt")
        back = read_manifest(tmp_path / "m.txt")
        assert back["seed"] == "3" and back["config.a"] == "1.5" and back["result.ok"] == "true"
        assert "output.missing" not in back and len(back["sha256.policy"]) == 64

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / "m").write_text("no separator here\n")
        with pytest.raises(ValueError):
            read_manifest(tmp_path / "m")


class TestConfig:
    def test_coerce(self):
        out = coerce_overrides({"no_kappa": "yes", "steps": "10", "radius": "1.5",
                                "dtype": "float64"})
        assert out == {"no_kappa": True, "steps": 10, "radius": 1.5, "dtype": "float64"}
        with pytest.raises(KeyError):
            coerce_overrides({"nope": "1"})
        with pytest.raises(ValueError):
            coerce_overrides({"no_kappa": "maybe"})

    def test_load(self, tmp_path):
        p = tmp_path / "a.ini"
        p.write_text("[ablation]\nenv = directional-shell\ndim = 3\nseeds = 0, 1\nsteps = 50\n\n"
                     "[variant:a]\nradius = 0.5\n\n[variant:b]\nsteps = 20\n")
        plan = load_ablation(p)
        assert [v.name for v in plan.variants] == ["a", "b"]
        assert plan.variants[0].overrides == {"steps": 50, "radius": 0.5}
        assert plan.variants[1].overrides == {"steps": 20}
        assert len(plan.runs()) == 4

    def test_load_errors(self, tmp_path):
        p = tmp_path / "bad.ini"
        p.write_text("[other]\nx = 1\n")
        with pytest.raises(ValueError):
            load_ablation(p)


class TestRun:
    def test_concentration_csv(self, tmp_path):
        code = _run(["validate-concentration", "--samples", "500", "--out", str(tmp_path)])
        assert code == 0
        rows = read_csv(tmp_path / "concentration.csv")
        assert len(rows) == 6 and list(rows[0]) == list(cli.CONCENTRATION_COLUMNS)
        man = read_manifest(tmp_path / "manifest.txt")
        assert man["result.exit_code"] == "0" and man["config.samples"] == "500"

    def test_unwritable_out(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert _run(["saturation", "--samples", "10", "--out", str(blocker / "sub")]) == 1

    def test_bad_value_is_usage_error(self, tmp_path):
        code = _run(["saturation", "--threshold", "1.5", "--samples", "10", "--out", str(tmp_path)])
        assert code == 2
        assert read_manifest(tmp_path / "manifest.txt")["result.exit_code"] == "2"

    def test_bench_unknown_mode(self, tmp_path):
        assert _run(["bench-sampling", "--modes", "warp", "--out", str(tmp_path)]) == 2

    def test_determinism(self, tmp_path):
        for sub in ("a", "b"):
            assert _run(["train", "--env", "directional-shell", "--dim", "3", "--steps", "300",
                         "--seed", "5", *FAST, "--out", str(tmp_path / sub)]) == 0
            assert _run(["saturation", "--samples", "1000", "--seed", "5",
                         "--out", str(tmp_path / sub / "sat")]) == 0
        for name in ("train.csv", "episodes.csv", "sat/saturation.csv"):
            assert _data_rows(tmp_path / "a" / name) == _data_rows(tmp_path / "b" / name)
        ma = read_manifest(tmp_path / "a" / "manifest.txt")
        mb = read_manifest(tmp_path / "b" / "manifest.txt")
        assert ma["sha256.policy"] == mb["sha256.policy"]

    def test_gaussian_run_and_saturation_from_log(self, tmp_path):
        assert _run(["train", "--env", "point-mass", "--dim", "2", "--steps", "250",
                     "--policy", "gaussian", *FAST, "--out", str(tmp_path)]) == 0
        assert os.path.exists(tmp_path / "pre_squash.csv")
        assert _run(["saturation", "--from-log", str(tmp_path / "pre_squash.csv"),
                     "--threshold", "0.05,0.1", "--out", str(tmp_path / "s")]) == 0
        rows = read_csv(tmp_path / "s" / "saturation.csv")
        assert [r["source"] for r in rows] == ["policy-log", "policy-log"]
        assert float(rows[0]["mc_fraction"]) <= float(rows[1]["mc_fraction"])

    def test_eval_reproduces_recorded_return(self, tmp_path):
        assert _run(["train", "--env", "point-mass", "--dim", "3", "--steps", "300", *FAST,
                     "--dump-trajectories", "--out", str(tmp_path / "t")]) == 0
        assert os.path.exists(tmp_path / "t" / "trajectories.csv")
        assert _run(["eval", "--manifest", str(tmp_path / "t" / "manifest.txt"),
                     "--out", str(tmp_path / "e")]) == 0
        man = read_manifest(tmp_path / "e" / "manifest.txt")
        assert man["result.matches_recorded"] == "true"

    def test_eval_missing_manifest(self, tmp_path):
        assert _run(["eval", "--manifest", str(tmp_path / "none.txt"),
                     "--out", str(tmp_path)]) == 1

    def test_divergence_exit_code(self, tmp_path, monkeypatch):
        from gaclab.envs import DirectionalShell

        orig = DirectionalShell._step

        def exploding(self, action):
            res = orig(self, action)
            res.next_observation = res.next_observation * np.inf
            return res

        monkeypatch.setattr(DirectionalShell, "_step", exploding)
        with pytest.warns(RuntimeWarning):
            code = _run(["train", "--env", "directional-shell", "--dim", "3", "--steps", "300",
                         *FAST, "--out", str(tmp_path)])
        assert code == 3
        man = read_manifest(tmp_path / "manifest.txt")
        assert man["result.status"] == "diverged" and "checkpoint.policy" not in man
        assert os.path.exists(man["output.train"])


class TestAblate:
    def _write(self, path, variants, seeds="0, 1, 2"):
        text = ("[ablation]\nenv = directional-shell\ndim = 3\nr_star = 1.0\neval_episodes = 1\n"
                f"seeds = {seeds}\nsteps = 300\nwarmup = 100\nhidden = 16\nbatch_size = 32\n"
                "log_every = 100\n")
        for name, body in variants:
            text += f"\n[variant:{name}]\n{body}\n"
        path.write_text(text)
        return path

    def test_empty(self, tmp_path):
        cfg = self._write(tmp_path / "a.ini", [])
        assert _run(["ablate", str(cfg), "--out", str(tmp_path / "o")]) == 0
        assert read_csv(tmp_path / "o" / "ablation.csv") == []

    def test_radius_sweep(self, tmp_path):
        cfg = self._write(tmp_path / "a.ini", [("r0.5", "radius = 0.5"), ("r1.0", "radius = 1.0"),
                                                ("r2.5", "radius = 2.5")])
        assert _run(["ablate", str(cfg), "--out", str(tmp_path / "o")]) == 0
        rows = read_csv(tmp_path / "o" / "ablation.csv")
        assert [r["kind"] for r in rows] == ["run"] * 9 + ["aggregate"] * 3
        agg = {r["variant"]: float(r["final_window_return"]) for r in rows
               if r["kind"] == "aggregate"}
        assert max(agg, key=agg.get) == "r1.0"

    def test_bad_variant_key(self, tmp_path):
        cfg = self._write(tmp_path / "a.ini", [("x", "learning_rate = 1")])
        assert _run(["ablate", str(cfg), "--out", str(tmp_path / "o")]) == 2
