import numpy as np
import pytest

from gwmc.cli import RunConfig, SweepConfig, main, parse_kv_file, run_sweep
from gwmc.errors import ConfigError


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestConfigParsing:
    def test_default_coupling_regime(self):
        cfg = RunConfig()
        assert (cfg.jx, cfg.jz, cfg.gamma) == (0.9, 1.0, 1.0)
        assert cfg.dt == 0.01
        assert cfg.sample_interval == 1.0
        assert cfg.burn_in == 200.0

    def test_mapping_roundtrip(self):
        cfg = RunConfig(jy=1.7, width=4, height=4, t_total=50.0, burn_in=10.0, seed=9)
        back = RunConfig.from_mapping(cfg.to_mapping())
        assert back == cfg

    def test_unknown_keys_ignored(self):
        cfg = RunConfig.from_mapping({"jy": "1.5", "code_version": "9.9", "command": "run"})
        assert cfg.jy == 1.5

    def test_bad_engine(self):
        with pytest.raises(ConfigError):
            RunConfig(engine="magic")

    def test_exact_engine_site_cap(self):
        with pytest.raises(ConfigError):
            RunConfig(engine="exact", width=4, height=3)

    def test_kv_file(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("jy = 1.5  # ferromagnetic side\n\nwidth = 4\n")
        assert parse_kv_file(path) == {"jy": "1.5", "width": "4"}
        bad = tmp_path / "bad.txt"
        bad.write_text("jy 1.5\n")
        with pytest.raises(ConfigError):
            parse_kv_file(bad)


def _run_args(tmp_path, name, **over):
    args = {
        "width": "3", "height": "3", "jy": "1.2", "t-total": "30", "burn-in": "10",
        "seed": "5", "out": str(tmp_path / name),
    }
    args.update(over)
    out = []
    for key, value in args.items():
        out.extend([f"--{key}", value])
    return out


class TestRunCommand:
    def test_writes_series_and_meta(self, tmp_path):
        assert main(["run", *_run_args(tmp_path, "a")]) == 0
        series = (tmp_path / "a_series.csv").read_text().splitlines()
        assert series[0] == "time,Mx,My,Mz,Sxx_inst,jumps_this_interval"
        assert len(series) == 32  # t=0 plus 30 samples, one per 1/gamma
        first = series[1].split(",")
        assert first[0] == "0" and first[1] == "1"
        meta = parse_kv_file(tmp_path / "a_meta.txt")
        assert meta["rng_algorithm"] == "philox4x64"
        assert meta["engine"] == "gutzwiller"
        assert "code_version" in meta

    def test_byte_determinism(self, tmp_path):
        main(["run", *_run_args(tmp_path, "d1")])
        main(["run", *_run_args(tmp_path, "d2")])
        assert _read(tmp_path / "d1_series.csv") == _read(tmp_path / "d2_series.csv")

    def test_meta_roundtrip_reproduces_csv(self, tmp_path):
        main(["run", *_run_args(tmp_path, "orig")])
        meta_path = str(tmp_path / "orig_meta.txt")
        assert main(["run", "--config", meta_path, "--out", str(tmp_path / "redo")]) == 0
        assert _read(tmp_path / "orig_series.csv") == _read(tmp_path / "redo_series.csv")

    def test_xxz_trapped_recorded(self, tmp_path):
        args = _run_args(tmp_path, "trap", **{"width": "4", "height": "4", "jx": "0.9",
                                              "jy": "0.9", "t-total": "150", "burn-in": "0"})
        assert main(["run", *args]) == 0
        meta = parse_kv_file(tmp_path / "trap_meta.txt")
        assert "trapped_at" in meta
        assert float(meta["trapped_at"]) < 150.0
        # Mx decays to zero in the series
        last = (tmp_path / "trap_series.csv").read_text().splitlines()[-1].split(",")
        assert abs(float(last[1])) < 1e-12

    def test_minus_x_mirrors_plus_x(self, tmp_path):
        main(["run", *_run_args(tmp_path, "pl")])
        main(["run", *_run_args(tmp_path, "mi", **{"initial-state": "minus_x"})])
        rows_p = (tmp_path / "pl_series.csv").read_text().splitlines()[1:]
        rows_m = (tmp_path / "mi_series.csv").read_text().splitlines()[1:]
        for rp, rm in zip(rows_p, rows_m):
            fp, fm = rp.split(","), rm.split(",")
            assert float(fm[1]) == -float(fp[1])  # Mx mirrored
            assert fm[4] == fp[4]  # Sxx invariant

    def test_engine_caps_exit_code(self, tmp_path):
        args = _run_args(tmp_path, "big", engine="fullwfmc", width="6", height="6")
        assert main(["run", *args]) == 1

    def test_exact_engine_small_system(self, tmp_path):
        args = _run_args(tmp_path, "ex", engine="exact", width="2", height="1",
                         **{"t-total": "10", "burn-in": "2"})
        assert main(["run", *args]) == 0
        rows = (tmp_path / "ex_series.csv").read_text().splitlines()[1:]
        assert len(rows) == 11
        # the exact engine records true pair expectations, jumps column stays 0
        assert all(r.split(",")[5] == "0" for r in rows)


class TestSweepCommand:
    def test_empty_values_config_error(self, tmp_path):
        args = _run_args(tmp_path, "s") + ["--values", "", "--trajectories", "1"]
        assert main(["sweep", *args]) == 1

    def test_missing_values_flag(self, tmp_path):
        assert main(["sweep", *_run_args(tmp_path, "s")]) == 1

    def test_rows_and_determinism(self, tmp_path):
        args = _run_args(tmp_path, "s1") + ["--values", "1.2,2.5", "--trajectories", "2"]
        assert main(["sweep", *args]) == 0
        rows = (tmp_path / "s1_sweep.csv").read_text().splitlines()
        assert rows[0] == "jy,L,Sxx_k0,Sxx_stderr,Mx_abs_mean,sample_count,trajectories"
        assert [r.split(",")[0] for r in rows[1:]] == ["1.2", "2.5"]
        assert all(r.split(",")[1] == "3" for r in rows[1:])
        assert all(r.split(",")[6] == "2" for r in rows[1:])

    def test_worker_count_invariance(self, tmp_path):
        for name, workers in (("w1", "1"), ("w2", "2")):
            args = _run_args(tmp_path, name, workers=workers) + [
                "--values", "1.2,1.8", "--trajectories", "2",
            ]
            assert main(["sweep", *args]) == 0
        assert _read(tmp_path / "w1_sweep.csv") == _read(tmp_path / "w2_sweep.csv")

    def test_meta_roundtrip(self, tmp_path):
        args = _run_args(tmp_path, "sm") + ["--values", "1.2,1.5", "--trajectories", "1"]
        main(["sweep", *args])
        assert main(["sweep", "--config", str(tmp_path / "sm_meta.txt"),
                     "--out", str(tmp_path / "sm2")]) == 0
        assert _read(tmp_path / "sm_sweep.csv") == _read(tmp_path / "sm2_sweep.csv")

    def test_size_sweep(self, tmp_path):
        args = _run_args(tmp_path, "sz") + ["--param", "size", "--values", "3,4"]
        assert main(["sweep", *args]) == 0
        rows = (tmp_path / "sz_sweep.csv").read_text().splitlines()[1:]
        assert [r.split(",")[1] for r in rows] == ["3", "4"]

    def test_single_trajectory_uses_batch_means(self, tmp_path):
        sweep = SweepConfig(
            base=RunConfig(width=3, height=3, t_total=60.0, burn_in=10.0, seed=4,
                           out=str(tmp_path / "x")),
            values=(1.2,),
            trajectories=1,
        )
        rows = run_sweep(sweep)
        assert rows[0]["sample_count"] == 51
        assert rows[0]["Sxx_stderr"] > 0


class TestCorrelateCommand:
    def test_frozen_plus_x_input(self, tmp_path):
        # unitary isotropic couplings hold the all-+x state frozen, so every
        # class must report exactly 1
        args = _run_args(tmp_path, "c", **{"jx": "0.7", "jy": "0.7", "jz": "0.7",
                                           "gamma": "0", "t-total": "20", "burn-in": "5"})
        assert main(["correlate", *args]) == 0
        rows = (tmp_path / "c_corr.csv").read_text().splitlines()
        assert rows[0] == "dx,dy,distance,corr_xx,stderr,pair_count,axis_flag"
        for row in rows[1:]:
            fields = row.split(",")
            assert float(fields[3]) == pytest.approx(1.0, abs=1e-10)

    def test_pair_counts_and_axis_flags(self, tmp_path):
        args = _run_args(tmp_path, "c4", **{"width": "4", "height": "4"})
        assert main(["correlate", *args]) == 0
        rows = [r.split(",") for r in (tmp_path / "c4_corr.csv").read_text().splitlines()[1:]]
        assert sum(int(r[5]) for r in rows) == 16 * 15
        by_disp = {(int(r[0]), int(r[1])): r for r in rows}
        assert by_disp[(1, 0)][6] == "1"
        assert by_disp[(1, 1)][6] == "0"

    def test_requires_manifold_engine(self, tmp_path):
        args = _run_args(tmp_path, "ce", engine="exact", width="2", height="2")
        assert main(["correlate", *args]) == 1


class TestMfCurveCommand:
    def test_default_grid(self, tmp_path):
        out = str(tmp_path / "mf")
        assert main(["mf-curve", "--jx", "0.9", "--jz", "1.0", "--out", out]) == 0
        rows = (tmp_path / "mf_mf.csv").read_text().splitlines()
        assert rows[0] == "jy,Sxx_mf"
        values = {float(r.split(",")[0]): float(r.split(",")[1]) for r in rows[1:]}
        transition = 1.0390625
        for jy, s in values.items():
            assert (s > 0) == (jy > transition)
        assert values[1.2] == pytest.approx(0.328839, abs=1e-5)
        meta = parse_kv_file(tmp_path / "mf_meta.txt")
        assert float(meta["transition_jy"]) == transition

    def test_degenerate_couplings_flagged(self, tmp_path):
        out = str(tmp_path / "deg")
        assert main(["mf-curve", "--jx", "1.0", "--jz", "1.0", "--out", out]) == 0
        rows = (tmp_path / "deg_mf.csv").read_text().splitlines()[1:]
        assert all(float(r.split(",")[1]) == 0.0 for r in rows)
        assert parse_kv_file(tmp_path / "deg_meta.txt")["transition_jy"] == "none"


class TestOracleCheckCommand:
    def test_passes(self, capsys):
        code = main(["oracle-check", "--sites", "2", "--trajectories", "600",
                     "--t-total", "3", "--seed", "7"])
        out = capsys.readouterr().out
        assert code == 0
        assert out.count("PASS") == 4
        assert "FAIL" not in out

    def test_corrupted_jump_fails(self, capsys):
        code = main(["oracle-check", "--sites", "2", "--trajectories", "600",
                     "--t-total", "3", "--seed", "7", "--corrupt-jumps"])
        assert code == 2
        assert "FAIL unraveling_exactness" in capsys.readouterr().out
