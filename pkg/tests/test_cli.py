import csv

import pytest

from cnn_recover.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from cnn_recover.errors import ConfigError
from cnn_recover.experiments import FIG_A_ACTIVATIONS, FIG_A_GRID, MOMENTS_HEADER, parse_config


def write(tmp_path, body, name="exp.ini"):
    path = tmp_path / name
    path.write_text("[experiment]\n" + body)
    return str(path)


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def run(tmp_path, command, body, *extra, out="out"):
    code = main([command, "--config", write(tmp_path, body), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def test_defaults_per_command():
    ec = parse_config("[experiment]\n", "fig-a")
    assert ec.activation_list == FIG_A_ACTIVATIONS and ec.n_grid == FIG_A_GRID
    ec = parse_config("[experiment]\n", "fig-b")
    assert (ec.step_size, ec.n, ec.init, ec.resample) == (0.01, 1000, "gaussian", (False,))
    ec = parse_config("[experiment]\n", "pipeline")
    assert (ec.n, ec.T, ec.resample) == (200000, 500, (True, False))
    ec = parse_config("[experiment]\nT = 7\nseeds = 3, 4\nstep_size = auto\n", "fig-b", overrides={"seed": 9})
    assert ec.T == 7 and ec.seeds == (3, 4) and ec.step_size == "auto" and ec.seed == 9


@pytest.mark.parametrize("text", [
    "[experiment]\nbogus = 1\n",
    "[experiment]\n[other]\n",
    "[something]\nk = 3\n",
    "[experiment]\nk = three\n",
    "[experiment]\nresample = maybe\n",
    "[experiment]\nk = 2\nt = 3\n",
    "[experiment]\nactivation = softsign\n",
    "[experiment]\nkappa = 0.5\n",
    "[experiment]\nsigmas = 1, -1\n",
    "no section at all\n",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text, "pipeline")


def test_config_errors_exit_2(tmp_path, capsys):
    code, _ = run(tmp_path, "fig-b", "bogus = 1\n")
    assert code == EXIT_CONFIG and "bogus" in capsys.readouterr().err
    assert main(["fig-b", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    code, _ = run(tmp_path, "fig-b", "", "--threads", "0")
    assert code == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        main(["fig-c", "--config", "x"])
    assert info.value.code == 2


def test_rank_deficiency_exits_3(tmp_path, capsys):
    code, _ = run(tmp_path, "pipeline", "n = 1000\nT = 500\nresample = true\n")
    assert code == EXIT_NUMERICAL
    assert "RankDeficiencyError" in capsys.readouterr().err


def test_moments_table(tmp_path):
    code, out = run(tmp_path, "moments-table", "activations = relu, sigmoid, erf\nsigmas = 1, 2\n")
    assert code == EXIT_OK
    table = rows(out / "moments_table.csv")
    assert list(table[0]) == MOMENTS_HEADER
    assert [(r["activation"], r["sigma"]) for r in table] == [
        ("relu", "1.0"), ("relu", "2.0"), ("sigmoid", "1.0"), ("sigmoid", "2.0"), ("erf", "1.0"), ("erf", "2.0")]
    relu = table[0]
    assert abs(float(relu["rho_closed"]) - float(relu["rho_quad"])) < 1e-12
    assert table[2]["rho_closed"] == "" and float(table[2]["rho_quad"]) > 0


def test_moments_table_notes_unconverged_quadrature(tmp_path):
    code, out = run(tmp_path, "moments-table", "activations = erf\nsigmas = 10\n")
    assert code == EXIT_OK
    row = rows(out / "moments_table.csv")[0]
    assert row["rho_quad"] == "" and row["rho_closed"] != "" and "did not converge" in row["note"]


def test_check_derivatives_branches(tmp_path):
    code, out = run(tmp_path, "check-derivatives", "activations = sigmoid, relu\ninstances = 2\nn = 100\n")
    assert code == EXIT_OK
    table = rows(out / "check_derivatives.csv")
    relu_h = [r for r in table if r["activation"] == "relu" and r["check"] == "hessian"]
    assert len(relu_h) == 2 and all(r["passed"] == "" and "skipped" in r["note"] for r in relu_h)
    assert all(r["passed"] == "true" for r in table if r["passed"])


FIG_A_SMALL = "n_grid = 100, 1000\nn_mc = 20000\n"


def test_fig_a_small_grid(tmp_path, capsys):
    code, out = run(tmp_path, "fig-a", FIG_A_SMALL)
    table = rows(out / "fig_a.csv")
    assert len(table) == 4 * 2 + 4
    emp = [r for r in table if r["source"] == "empirical"]
    for r in emp:
        if r["activation"] == "quadratic":
            assert float(r["lambda_min"]) < 1e-8
        else:
            assert float(r["lambda_min"]) > 0
    assert (out / "fig_a.svg").read_text().startswith("<?xml")
    assert code in (EXIT_OK, EXIT_CHECK)  # the 3-stderr check is loose at small n_mc
    assert "fig-a quadratic" in capsys.readouterr().out


def test_fig_a_threads_and_reruns_are_byte_identical(tmp_path):
    run(tmp_path, "fig-a", FIG_A_SMALL, out="a")
    run(tmp_path, "fig-a", FIG_A_SMALL, "--threads", "3", out="b")
    for name in ("fig_a.csv", "fig_a.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_output(tmp_path):
    run(tmp_path, "fig-a", FIG_A_SMALL + "activations = relu\n", out="a")
    run(tmp_path, "fig-a", FIG_A_SMALL + "activations = relu\n", "--seed", "5", out="b")
    assert (tmp_path / "a" / "fig_a.csv").read_bytes() != (tmp_path / "b" / "fig_a.csv").read_bytes()


def test_fig_b_columns(tmp_path):
    code, out = run(tmp_path, "fig-b", "seeds = 0, 1, 2\nT = 4000\n")
    assert code == EXIT_OK
    with open(out / "fig_b.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["iter", "loss_seed0", "loss_seed1", "loss_seed2"]
    summary = rows(out / "fig_b_summary.csv")
    assert all(float(r["final_loss"]) < 1e-8 and float(r["tail_r2"]) > 0.95 for r in summary)


def test_fig_b_failed_check_exits_4(tmp_path, capsys):
    code, _ = run(tmp_path, "fig-b", "seeds = 0\nT = 20\nplot = false\n")
    assert code == EXIT_CHECK
    assert "FAIL" in capsys.readouterr().out


def test_pipeline_modes_and_timing(tmp_path):
    code, out = run(tmp_path, "pipeline", "n = 30000\nT = 40\n")
    table = rows(out / "pipeline.csv")
    assert [r["resample"] for r in table] == ["true", "false"]
    assert all(float(r["final_rel_error"]) < float(r["init_rel_error"]) for r in table)
    assert "wall_seconds" not in table[0]
    assert list(rows(out / "pipeline_timing.csv")[0]) == ["resample", "wall_seconds"]
    for tag in ("resample", "no_resample"):
        assert (out / f"pipeline_trace_{tag}.csv").exists()
        assert (out / f"pipeline_W0_{tag}.csv").exists()
    assert code in (EXIT_OK, EXIT_CHECK)
