"""Tests for the hjmsplit command-line interface."""

import csv

import numpy as np
import pytest

from hjmsplit.calibration import synthetic_target, write_surface_csv
from hjmsplit.cli import main
from hjmsplit.curve import ForwardCurve, write_curve_csv
from hjmsplit.model import VolSpec, load_model_file, save_model_file


def three_factor_spec(**overrides):
    base = dict(
        poly_coeffs=[[0.02, 0.0, 0.0], [0.008, 0.015, 0.0], [0.005, 0.0, 0.01]],
        decay=1.5,
        scalings=[12.0, 9.0, 6.0],
        benchmarks=[0.5, 1.0, 2.0],
        ou_alpha=1.0,
        ou_loadings=[0.2, 0.15, 0.1],
    )
    base.update(overrides)
    return VolSpec(**base)


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    model = root / "model.toml"
    curve = root / "curve.csv"
    save_model_file(model, three_factor_spec())
    xs = np.arange(0, 81) * 0.125
    write_curve_csv(curve, ForwardCurve(dx=0.125,
                                        values=0.03 + 0.02 * (1 - np.exp(-xs))))
    return str(model), str(curve)


def read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


class TestSimulate:
    def test_writes_curve_csv(self, inputs, tmp_path, capsys):
        model, curve = inputs
        out = tmp_path / "sim.csv"
        rc = main(["simulate", "--model", model, "--curve", curve,
                   "--scheme", "lt_fwd", "--steps-per-year", "4",
                   "--paths", "64", "--out", str(out)])
        assert rc == 0
        header, rows = read_csv(out)
        assert header == ["maturity_years", "initial_rate", "mean_terminal_rate"]
        assert len(rows) > 8
        vals = np.array(rows, dtype=float)
        assert np.all(np.isfinite(vals))
        assert "mean v=" in capsys.readouterr().out

    def test_rerun_byte_identical(self, inputs, tmp_path):
        model, curve = inputs
        args = ["simulate", "--model", model, "--curve", curve,
                "--scheme", "nv", "--steps-per-year", "4", "--paths", "64"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_plot_flag_writes_png(self, inputs, tmp_path):
        model, curve = inputs
        out = tmp_path / "sim.csv"
        rc = main(["simulate", "--model", model, "--curve", curve,
                   "--steps-per-year", "2", "--paths", "32",
                   "--out", str(out), "--plot"])
        assert rc == 0
        png = tmp_path / "sim.png"
        assert png.exists()
        assert png.read_bytes()[:4] == b"\x89PNG"


class TestConverge:
    def test_ladder_csv_and_slopes(self, inputs, tmp_path, capsys):
        model, curve = inputs
        out = tmp_path / "conv.csv"
        rc = main(["converge", "--model", model, "--curve", curve,
                   "--ns", "2,4", "--ref-n", "8", "--paths", "256",
                   "--out", str(out)])
        assert rc == 0
        header, rows = read_csv(out)
        assert header == ["scheme", "n_steps", "n_paths", "estimate",
                          "reference", "abs_error", "fitted_slope"]
        assert len(rows) == 8  # 4 schemes x 2 step counts
        schemes = {r[0] for r in rows}
        assert schemes == {"LT_FWD", "LT_BWD", "NV", "SWSS"}
        text = capsys.readouterr().out
        assert "SWSS Richardson" in text

    def test_timings_column(self, inputs, tmp_path):
        model, curve = inputs
        out = tmp_path / "conv.csv"
        rc = main(["converge", "--model", model, "--curve", curve,
                   "--ns", "2,4", "--ref-n", "4", "--paths", "64",
                   "--timings", "--out", str(out)])
        assert rc == 0
        header, rows = read_csv(out)
        assert header[-1] == "seconds"
        assert all(float(r[-1]) >= 0 for r in rows)

    def test_bad_ns_is_input_error(self, inputs, tmp_path, capsys):
        model, curve = inputs
        rc = main(["converge", "--model", model, "--curve", curve,
                   "--ns", "2,four", "--out", str(tmp_path / "x.csv")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


class TestPrice:
    def test_single_row(self, inputs, tmp_path, capsys):
        model, curve = inputs
        out = tmp_path / "price.csv"
        rc = main(["price", "--model", model, "--curve", curve,
                   "--payoff", "caplet", "--maturity", "0.5",
                   "--tenor", "0.25", "--strike", "0.03",
                   "--steps-per-year", "4", "--paths", "128",
                   "--out", str(out)])
        assert rc == 0
        header, rows = read_csv(out)
        assert header[-1] == "value" and len(rows) == 1
        assert float(rows[0][-1]) > 0
        assert "caplet value" in capsys.readouterr().out

    def test_thread_count_independent_bytes(self, inputs, tmp_path):
        model, curve = inputs
        tail = ["price", "--model", model, "--curve", curve,
                "--payoff", "payer_swaption", "--maturity", "1.0",
                "--tenor", "0.25", "--strike", "0.04", "--payments", "4",
                "--steps-per-year", "4", "--paths", "256"]
        a, b = tmp_path / "t1.csv", tmp_path / "t8.csv"
        assert main(["--threads", "1"] + tail + ["--out", str(a)]) == 0
        assert main(["--threads", "8"] + tail + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestMartingale:
    def test_gap_row(self, inputs, tmp_path, capsys):
        model, curve = inputs
        out = tmp_path / "mart.csv"
        rc = main(["martingale", "--model", model, "--curve", curve,
                   "--horizon", "1.0", "--tenor", "0.25",
                   "--steps-per-year", "4", "--paths", "512",
                   "--out", str(out)])
        assert rc == 0
        header, rows = read_csv(out)
        assert header[-3:] == ["simulated", "curve_implied", "rel_gap"]
        assert abs(float(rows[0][-1])) < 0.05
        assert "martingale gap" in capsys.readouterr().out


class TestCalibrate:
    def test_smoke_round_trip(self, inputs, tmp_path, capsys):
        model, curve = inputs
        surface = tmp_path / "surface.csv"
        target = synthetic_target(
            three_factor_spec(),
            lambda x: 0.03 + 0.02 * (1 - np.exp(-x)),
            maturities=(0.5, 1.0),
            moneyness=(0.9, 1.0, 1.1),
            quote_kind="price",
            n_paths=128,
            steps_per_year=4,
        )
        write_surface_csv(surface, target)
        settings = tmp_path / "settings.txt"
        settings.write_text(
            "population = 6\ngenerations = 2\nmax_iters = 2\n"
            "scheme = lt_fwd\nsteps_per_year = 4\npaths = 128\n"
        )
        out = tmp_path / "fit.csv"
        out_model = tmp_path / "fitted.toml"
        rc = main(["calibrate", "--model", model, "--curve", curve,
                   "--surface", str(surface), "--settings", str(settings),
                   "--out", str(out), "--out-model", str(out_model)])
        assert rc == 0
        header, rows = read_csv(out)
        assert header == ["cell", "maturity", "strike", "market", "model",
                          "residual"]
        assert len(rows) == 6
        fitted = load_model_file(out_model)
        assert fitted.benchmarks.tolist() == [0.5, 1.0, 2.0]
        assert "rmse=" in capsys.readouterr().out

    def test_unknown_setting_key(self, inputs, tmp_path, capsys):
        model, curve = inputs
        settings = tmp_path / "settings.txt"
        settings.write_text("warp_speed = 9\n")
        rc = main(["calibrate", "--model", model, "--curve", curve,
                   "--surface", "nowhere.csv", "--settings", str(settings),
                   "--out", str(tmp_path / "fit.csv")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_surface(self, inputs, tmp_path, capsys):
        model, curve = inputs
        rc = main(["calibrate", "--model", model, "--curve", curve,
                   "--surface", str(tmp_path / "absent.csv"),
                   "--out", str(tmp_path / "fit.csv")])
        assert rc == 2
        assert "surface file" in capsys.readouterr().err


class TestBudget:
    def test_known_plan(self, tmp_path, capsys):
        out = tmp_path / "budget.csv"
        rc = main(["budget", "--order", "2", "--eps", "1e-2",
                   "--c-disc", "1", "--c-int", "1", "--out", str(out)])
        assert rc == 0
        assert "n=15 K=200" in capsys.readouterr().out
        header, rows = read_csv(out)
        assert header[-2:] == ["n_steps_per_year", "n_paths"]
        assert rows[0][-2:] == ["15", "200"]

    def test_bad_epsilon_is_domain_error(self, capsys):
        rc = main(["budget", "--order", "2", "--eps", "-1",
                   "--c-disc", "1", "--c-int", "1"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestExitCodes:
    def test_missing_model_file(self, inputs, tmp_path, capsys):
        _, curve = inputs
        rc = main(["simulate", "--model", str(tmp_path / "absent.toml"),
                   "--curve", curve, "--out", str(tmp_path / "x.csv")])
        assert rc == 2
        assert "model file" in capsys.readouterr().err

    def test_malformed_curve(self, inputs, tmp_path, capsys):
        model, _ = inputs
        bad = tmp_path / "bad.csv"
        bad.write_text("maturity_years,rate\n0.5,0.03\n1.0,0.03\n")
        rc = main(["simulate", "--model", model, "--curve", str(bad),
                   "--out", str(tmp_path / "x.csv")])
        assert rc == 2
        assert "curve file" in capsys.readouterr().err

    def test_unknown_scheme(self, inputs, tmp_path, capsys):
        model, curve = inputs
        rc = main(["simulate", "--model", model, "--curve", curve,
                   "--scheme", "milstein", "--out", str(tmp_path / "x.csv")])
        assert rc == 2
        assert "unknown scheme" in capsys.readouterr().err

    def test_domain_error_is_exit_one(self, inputs, tmp_path, capsys):
        model, curve = inputs
        rc = main(["simulate", "--model", model, "--curve", curve,
                   "--paths", "0", "--out", str(tmp_path / "x.csv")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err
