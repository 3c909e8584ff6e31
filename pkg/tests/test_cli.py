import json

import numpy as np
import pytest

from srmmd.cli import main, parse_spec
from srmmd.errors import ConfigurationError
from srmmd.experiments import (
    EXPERIMENTS,
    OUTPUT_ROOT_ENV,
    prepare_experiment,
    read_particles_csv,
    resolve_config,
    run_experiment,
    write_particles_csv,
)
from srmmd.imaging import PpmImage, write_ppm


def write_config(path, **cfg):
    path.write_text(json.dumps(cfg))
    return path


def quick_toy(out, **extra):
    cfg = {"experiment": "toy-mixture", "num_particles": 12, "output_dir": str(out),
           "flow": {"iterations": 15, "cadence": 5}}
    cfg.update(extra)
    return cfg


def diverging(out):
    # a huge SVGD step overshoots the score target so positions overflow on the second step
    return {"experiment": "sampling-mixture", "num_particles": 5, "output_dir": str(out),
            "flow": {"kind": "svgd", "step_size": 1e300, "iterations": 5}}


@pytest.fixture
def images(tmp_path):
    rng = np.random.default_rng(0)
    src, tgt = tmp_path / "src.ppm", tmp_path / "tgt.ppm"
    write_ppm(PpmImage(rng.integers(0, 120, size=(6, 6, 3), dtype=np.uint8)), src)
    write_ppm(PpmImage(rng.integers(120, 256, size=(6, 6, 3), dtype=np.uint8)), tgt)
    return src, tgt


class TestConfigResolution:
    def test_defaults_filled(self):
        cfg = resolve_config({"experiment": "toy-mixture"})
        assert cfg["flow"]["iterations"] == 4000
        assert cfg["output_dir"] == "toy-mixture"
        assert cfg["seed"] == 0 and cfg["flow"]["seed"] == 0

    def test_flow_seed_promoted(self):
        assert resolve_config({"experiment": "toy-mixture", "flow": {"seed": 7}})["seed"] == 7

    @pytest.mark.parametrize("raw,field", [
        ({"experiment": "nope"}, "experiment"),
        ({"experiment": "toy-mixture", "flow": {"step_size": -1}}, "step_size"),
        ({"experiment": "toy-mixture", "flow": {"speed": 1}}, "flow"),
        ({"experiment": "toy-mixture", "num_particles": 0}, "num_particles"),
        ({"experiment": "toy-mixture", "seed": "zero"}, "seed"),
    ])
    def test_invalid(self, raw, field):
        with pytest.raises(ConfigurationError, match=field):
            resolve_config(raw)

    def test_other_target_kind_replaces_default(self):
        cfg = resolve_config({"experiment": "toy-mixture", "target": {"kind": "standard_normal", "dim": 3}})
        assert cfg["target"] == {"kind": "standard_normal", "dim": 3}

    @pytest.mark.parametrize("name", sorted(EXPERIMENTS))
    def test_every_experiment_resolves(self, name):
        assert resolve_config({"experiment": name})["experiment"] == name


class TestRunExperiment:
    def test_outputs_and_header(self, tmp_path):
        res = run_experiment(quick_toy(tmp_path / "toy"))
        names = sorted(p.name for p in res.files)
        assert names == ["config_resolved.json", "metrics.csv", "particles_final.csv", "particles_initial.csv"]
        lines = (tmp_path / "toy" / "metrics.csv").read_text().splitlines()
        assert lines[0] == "step,mmd2,ksd2,w2,wall_ms"
        assert [int(l.split(",")[0]) for l in lines[1:]] == [0, 5, 10, 15]
        step, mmd2, ksd2, w2, wall = lines[1].split(",")
        assert float(mmd2) > 0 and ksd2 == "" and float(w2) > 0 and wall == ""

    def test_rerun_is_byte_identical(self, tmp_path):
        a = run_experiment(quick_toy(tmp_path / "a"))
        b = run_experiment(quick_toy(tmp_path / "b"))
        for pa, pb in zip(a.files, b.files):
            if pa.name == "config_resolved.json":
                continue
            assert pa.read_bytes() == pb.read_bytes(), pa.name

    def test_config_echo_complete(self, tmp_path):
        run_experiment(quick_toy(tmp_path / "toy"))
        echo = json.loads((tmp_path / "toy" / "config_resolved.json").read_text())
        assert echo["kernel"] == {"kind": "gaussian", "lengthscale": 1.0}
        assert set(echo["flow"]) == {"kind", "step_size", "iterations", "reg", "alpha", "noise", "cadence", "seed"}
        assert echo["init"]["scale"] == 0.5
        # the echo reproduces the run
        echo["output_dir"] = str(tmp_path / "again")
        again = run_experiment(echo)
        assert (tmp_path / "again" / "metrics.csv").read_bytes() == (tmp_path / "toy" / "metrics.csv").read_bytes()
        assert again.status == 0

    def test_wall_time_opt_in(self, tmp_path):
        run_experiment(quick_toy(tmp_path / "toy", record_wall_time=True))
        row = (tmp_path / "toy" / "metrics.csv").read_text().splitlines()[2]
        assert float(row.split(",")[4]) >= 0

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
        res = run_experiment(quick_toy("nested/run"))
        assert res.output_dir == tmp_path / "nested" / "run"
        assert (tmp_path / "nested" / "run" / "metrics.csv").is_file()

    def test_invalid_pairing_writes_nothing(self, tmp_path):
        out = tmp_path / "bad"
        with pytest.raises(ConfigurationError, match="flow.kind"):
            run_experiment(quick_toy(out, flow={"kind": "svgd"}))
        assert not out.exists()

    def test_snapshots(self, tmp_path):
        run_experiment(quick_toy(tmp_path / "toy", snapshot_every=5))
        X = read_particles_csv(tmp_path / "toy" / "snapshots.csv")
        assert X.shape == (4 * 12, 2)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit(self, tmp_path):
        res = run_experiment(diverging(tmp_path / "div"))
        assert res.status == 3
        assert len((tmp_path / "div" / "metrics.csv").read_text().splitlines()) == 2
        assert np.all(np.isfinite(read_particles_csv(tmp_path / "div" / "particles_final.csv")))

    def test_logistic(self, tmp_path):
        cfg = {"experiment": "logistic", "output_dir": str(tmp_path / "lr"), "flow": {"iterations": 5, "cadence": 5}}
        run_experiment(cfg)
        lines = (tmp_path / "lr" / "predictive.csv").read_text().splitlines()
        assert lines[0] == "step,accuracy,log_likelihood" and len(lines) == 3
        metrics = (tmp_path / "lr" / "metrics.csv").read_text().splitlines()
        assert metrics[1].split(",")[1] == "" and float(metrics[1].split(",")[2]) > 0

    def test_stein_sampling(self, tmp_path):
        cfg = {"experiment": "sampling-mixture", "num_particles": 10, "output_dir": str(tmp_path / "s"),
               "flow": {"iterations": 2, "cadence": 1}}
        res = run_experiment(cfg)
        ksd = res.trajectory.column("ksd2")
        assert np.all(np.isfinite(ksd)) and len(ksd) == 3


class TestStudentTeacher:
    def small(self, out, **extra):
        cfg = {"experiment": "student-teacher", "num_particles": 4, "output_dir": str(out),
               "target": {"num_train": 20, "num_val": 20, "batch_size": 10},
               "flow": {"iterations": 0}}
        cfg.update(extra)
        return cfg

    def test_zero_iterations_single_row(self, tmp_path):
        run_experiment(self.small(tmp_path / "st"))
        rows = (tmp_path / "st" / "objectives.csv").read_text().splitlines()
        assert rows[0] == "step,train,validation" and len(rows) == 2
        assert len((tmp_path / "st" / "metrics.csv").read_text().splitlines()) == 2

    def test_students_at_teacher_stay(self, tmp_path):
        cfg = resolve_config(self.small(tmp_path / "st", num_particles=10, flow={"iterations": 3, "cadence": 1}))
        teacher = prepare_experiment(dict(cfg))["setup"].teacher
        start = tmp_path / "teacher.csv"
        write_particles_csv(teacher, start)
        cfg["init"] = {"kind": "file", "path": str(start)}
        res = run_experiment(cfg)
        np.testing.assert_array_equal(res.trajectory.final, teacher)
        assert np.all(res.trajectory.column("mmd2") == 0)
        assert np.all(res.trajectory.column("validation") == 0)


class TestColorTransferRun:
    def test_writes_image(self, tmp_path, images):
        src, tgt = images
        cfg = {"experiment": "color-transfer", "source": str(src), "target": str(tgt), "num_particles": 20,
               "output_dir": str(tmp_path / "ct"), "flow": {"iterations": 3}}
        res = run_experiment(cfg)
        assert "recolored.ppm" in [p.name for p in res.files]
        again = run_experiment({**cfg, "output_dir": str(tmp_path / "ct2")})
        assert (tmp_path / "ct" / "recolored.ppm").read_bytes() == (tmp_path / "ct2" / "recolored.ppm").read_bytes()
        assert again.status == 0

    def test_missing_image(self, tmp_path):
        with pytest.raises(ConfigurationError, match="source"):
            run_experiment({"experiment": "color-transfer", "source": str(tmp_path / "none.ppm"),
                            "target": str(tmp_path / "none.ppm"), "output_dir": str(tmp_path / "x")})
        assert not (tmp_path / "x").exists()


class TestCli:
    def test_run(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.json", **quick_toy(tmp_path / "out"))
        assert main(["run", str(path)]) == 0
        assert "metrics.csv" in capsys.readouterr().out

    def test_run_output_root(self, tmp_path):
        path = write_config(tmp_path / "c.json", **quick_toy("rel"))
        assert main(["run", str(path), "--output-root", str(tmp_path / "root")]) == 0
        assert (tmp_path / "root" / "rel" / "metrics.csv").is_file()

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.json", **quick_toy(tmp_path / "out", flow={"kind": "ksd"}))
        assert main(["run", str(path)]) == 2
        assert "flow.kind" in capsys.readouterr().err
        assert not (tmp_path / "out").exists()

    def test_missing_config(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.json")]) == 2

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        assert main(["run", str(p)]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_code(self, tmp_path):
        path = write_config(tmp_path / "c.json", **diverging(tmp_path / "out"))
        assert main(["run", str(path)]) == 3

    def test_color_transfer(self, tmp_path, images):
        src, tgt = images
        cfg = write_config(tmp_path / "c.json", flow={"iterations": 2})
        code = main(["color-transfer", str(src), str(tgt), "--config", str(cfg), "--num-particles", "10",
                     "--output", "out.ppm", "--output-root", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "color-transfer" / "out.ppm").is_file()

    def test_color_transfer_bad_image(self, tmp_path, images):
        src, _ = images
        bad = tmp_path / "bad.ppm"
        bad.write_bytes(b"P6\n2 2\n255\n\x00")
        assert main(["color-transfer", str(src), str(bad), "--num-particles", "1",
                     "--output-root", str(tmp_path)]) == 1

    def test_stein_check(self, capsys):
        assert main(["stein-check", "standard_normal", "-M", "20000", "--points", "[[0.5], [-1.0]]"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 2 and all(line.endswith("pass") for line in out)

    def test_stein_check_single_sample(self, capsys):
        assert main(["stein-check", "four_gaussians", "-M", "1", "--num-points", "1"]) == 0
        assert "n/a" in capsys.readouterr().out

    def test_eval(self, tmp_path, capsys):
        p = tmp_path / "x.csv"
        write_particles_csv(np.random.default_rng(0).normal(size=(8, 2)), p)
        assert main(["eval", str(p), '{"kind": "four_gaussians", "representation": "analytic"}']) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["num_particles"] == 8 and out["mmd2"] > 0 and out["w2"] > 0
        assert main(["eval", str(p), '{"kind": "four_gaussians", "representation": "stein"}']) == 0
        assert json.loads(capsys.readouterr().out)["ksd2"] > 0

    def test_parse_spec(self, tmp_path):
        assert parse_spec("four_gaussians") == {"kind": "four_gaussians"}
        assert parse_spec('{"kind": "x"}') == {"kind": "x"}
        p = write_config(tmp_path / "t.json", kind="y")
        assert parse_spec(str(p)) == {"kind": "y"}
        with pytest.raises(ConfigurationError):
            parse_spec("{oops")
