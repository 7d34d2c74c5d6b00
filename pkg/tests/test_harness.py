import io
import json

import pytest

from clforge import checks, cli, config, harness, metrics, model
from clforge.errors import ConfigError, NonFiniteUpdate, SchemaMismatch

SMALL = """
name = "small"
seeds = 2

[data]
d = 10
K = 3
n_train = 30
n_test = 40

[model]
m = 12

[train]
eta = 1.0
T = 6
eval_every = 3
"""


def write(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# --- config ------------------------------------------------------------------

def test_defaults_and_single_cell():
    cfg = config.parse(SMALL)
    cells = cfg.cells()
    assert len(cells) == 1 and cells[0].axes == {}
    assert cells[0].params["train"]["loss"] == "linear"
    assert cfg.seed_list == [0, 1]


def test_sweep_and_variants_product():
    cfg = config.parse(SMALL + """
[[variant]]
label = "a"
"model.activation" = "gelu"

[[variant]]
label = "b"
"train.loss" = "hinge"

[sweep]
"train.eta" = [0.5, 1.0, 2.0]
""")
    cells = cfg.cells()
    assert len(cells) == 6
    assert cells[0].axes == {"variant": "a", "train.eta": 0.5}
    assert cells[0].params["model"]["activation"] == "gelu"
    assert cells[5].params["train"]["loss"] == "hinge"
    assert cells[5].params["model"]["activation"] == "quadratic"


@pytest.mark.parametrize("text,key", [
    ("[train]\netaa = 1.0\n", "train.etaa"),
    ("[train]\neta = \"fast\"\n", "train.eta"),
    ("[model]\nactivation = \"tanh\"\n", "model.activation"),
    ("[sweep]\n\"train.nope\" = [1]\n", "train.nope"),
    ("[data]\nd = 4\nK = 3\n", "data.d"),
    ("[train]\neta = -1.0\n", "train.eta"),
    ("[data]\nK = 2\nn_train = [1, 2, 3]\n", "data.n_train"),
    ("[model]\nkind = \"linearized\"\n[train]\nloss = \"hinge\"\n", "closed_form"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        config.parse(text)


def test_syntax_error_reports_line():
    with pytest.raises(ConfigError, match="line 2"):
        config.parse("[data]\nd = = 3\n", "bad.cfg")


def test_cell_cap():
    with pytest.raises(ConfigError, match="max_cells"):
        config.parse("max_cells = 2\n[sweep]\n\"train.T\" = [1, 2, 3]\n")


def test_all_recipes_parse():
    names = config.recipe_names()
    assert names == sorted([f"fig{i}" for i in range(1, 10)] + ["mnist"])
    for name in names:
        cfg = config.load(name)
        assert cfg.cells()


def test_fig1_recipe_parameters():
    cfg = config.load("fig1")
    assert [c.params["data"]["n_train"] for c in cfg.cells()] == [2500, 5000]
    p = cfg.cells()[0].params
    assert (p["data"]["d"], p["model"]["m"], p["train"]["eta"], p["train"]["T"]) == (50, 1000, 2.0, 200)
    assert (p["data"]["sigma_coeff"], p["data"]["K"]) == (0.1, 3)
    assert (p["model"]["activation"], p["train"]["loss"]) == ("quadratic", "linear")


# --- run ---------------------------------------------------------------------

def test_run_outputs_and_determinism(tmp_path):
    cfg = config.parse(SMALL + "[sweep]\n\"data.n_train\" = [30, [20, 30, 40]]\n")
    harness.run(cfg, tmp_path / "a")
    harness.run(cfg, tmp_path / "b", jobs=2)
    for name in ("results.csv", "report.csv", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "results.csv").read_text().splitlines()[0]
    assert header.split(",") == ["data.n_train"] + metrics.RESULT_COLUMNS
    meta = json.loads((tmp_path / "a" / "meta.json").read_text())
    assert meta["seed_count"] == 2 and meta["schema_version"] == harness.SCHEMA_VERSION
    assert "polylog" in meta["constants"]


def test_report_rows_satisfy_identity(tmp_path):
    harness.run(config.parse(SMALL), tmp_path)
    rows = (tmp_path / "report.csv").read_text().splitlines()
    cols = rows[0].split(",")
    for line in rows[1:]:
        r = dict(zip(cols, line.split(",")))
        f = {k: float(r[k]) for k in ("f_tr", "f_ts", "gen_gap", "pre_gap")}
        assert abs(f["f_ts"] - (f["f_tr"] + f["gen_gap"] + f["pre_gap"])) <= 1e-12


def test_linearized_model_runs(tmp_path):
    cfg = config.parse(SMALL.replace("m = 12", 'm = 12\nkind = "linearized"'))
    out = harness.run(cfg, tmp_path)
    assert {r["iter"] for r in out["results"]} == {0, 6, 12, 18}


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_names_cell(tmp_path):
    cfg = config.parse(SMALL.replace("eta = 1.0", "eta = 1e200").replace("T = 6", "T = 40"))
    with pytest.raises(NonFiniteUpdate, match="cell 0"):
        harness.run(cfg, tmp_path)


# --- bounds and plots ----------------------------------------------------------

def test_bounds_table_columns():
    buf = io.StringIO()
    with pytest.warns(UserWarning):
        harness.write_bounds(config.load("fig1"), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",")[:3] == ["data.n_train", "d", "n"]
    assert len(lines) == 1 + 2 * 3


def test_plot_fig1_layout(tmp_path):
    cfg = config.parse(SMALL + "[sweep]\n\"data.n_train\" = [30, 60]\n")
    harness.run(cfg, tmp_path)
    (path,) = harness.plot(tmp_path / "results.csv", config.load("fig1").base["plot"], tmp_path, "fig1")
    svg = path.read_text()
    assert svg.count("task 1") == 2 and svg.count("task 3") == 2


@pytest.mark.parametrize("kind", ["curves", "task1_vs_task", "forgetting_vs_iter"])
def test_plot_kinds(tmp_path, kind):
    harness.run(config.parse(SMALL), tmp_path)
    (path,) = harness.plot(tmp_path / "results.csv", {"kind": kind, "metric": "loss", "split": "train"},
                           tmp_path, kind)
    assert path.exists() and path.read_text().startswith("<?xml")


def test_plot_single_row(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text(",".join(metrics.RESULT_COLUMNS) + "\nr,0,1,0,1,test,0.5,0.25\n")
    for kind in ("curves", "task1_vs_task", "forgetting_vs_iter"):
        harness.plot(p, {"kind": kind, "metric": "err", "split": "test"}, tmp_path, kind)


def test_plot_schema_mismatch(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("run_id,seed,phase_task,iter,eval_task,split,loss\n")
    with pytest.raises(SchemaMismatch, match="'err'"):
        harness.plot(p, {"kind": "curves", "metric": "err", "split": "test"}, tmp_path)


# --- CLI and verify --------------------------------------------------------------

def test_cli_run_and_plot(tmp_path, capsys):
    cfgp = write(tmp_path, SMALL)
    assert cli.main(["run", "--config", str(cfgp), "--out", str(tmp_path / "o")]) == 0
    assert cli.main(["plot", "--in", str(tmp_path / "o" / "results.csv"), "--recipe", "fig1",
                     "--out", str(tmp_path)]) == 0
    assert (tmp_path / "fig1.svg").exists()
    assert cli.main(["bounds", "--config", str(cfgp)]) == 0
    assert "thm1" in capsys.readouterr().out


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfgp = write(tmp_path, "[train]\nbogus = 1\n")
    assert cli.main(["run", "--config", str(cfgp)]) == 2
    assert "train.bogus" in capsys.readouterr().err


def test_gradient_check_detects_sign_flip():
    assert checks.gradient_check(cases_per_act=3).passed
    flipped = checks.gradient_check(cases_per_act=3,
                                    grad_fn=lambda p, x, a: -model.grad_margin(p, x, a))
    assert not flipped.passed


def test_verify_deterministic():
    a = checks.u_statistic_check(draws=50, n=100)
    b = checks.u_statistic_check(draws=50, n=100)
    assert a.measured == b.measured


def test_verify_exit_code(monkeypatch, capsys):
    ok = checks.Check("ok", True, {"x": 1.0})
    bad = checks.Check("bad", False, {"x": 2.0})
    monkeypatch.setattr(checks, "quick_suite", lambda: [lambda: ok])
    assert cli.main(["verify"]) == 0
    monkeypatch.setattr(checks, "quick_suite", lambda: [lambda: ok, lambda: bad])
    assert cli.main(["verify"]) == 1
    out = capsys.readouterr().out
    assert "[FAIL] bad" in out and "1/2 checks passed" in out


@pytest.mark.slow
def test_verify_quick_suite_passes(capsys):
    assert cli.main(["verify"]) == 0
