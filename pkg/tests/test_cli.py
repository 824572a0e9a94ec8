"""Config parsing, canonical JSON round-trip, output schema, exit codes.

CLI commands run through click's test runner; a scratch scenario file
keeps every solve small.  Golden header strings freeze the CSV schema.
"""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from fluidq.cli import PASSAGE_CSV_HEADER, STEADY_CSV_HEADER, main
from fluidq.config import ConfigError, load_config, scenario_to_json
from fluidq.waiting import solve_waiting_metrics

SMALL_CFG = """\
[scenario]
name = small

[arrivals]
kind = poisson
rate = 1.5

[service]
servers = 2
rate = 1.0

[patience]
kind = piecewise
breakpoints = 0, 1
values = 0.3, 1.0

[steady]
K = 10, 50
cdf_grid = 0.1, 0.2

[passage]
kind = virtual
a = 0
b = 0.5, 1.0
tau = 1, 5
orders = 25
families = erlang, cme
pi0 = 1, 0, 0
theta0 = 1

[simulation]
arrivals = 40000
replications = 2000
batches = 4
warmup = 0.1
seed = 11

[output]
format = csv
"""


@pytest.fixture()
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL_CFG)
    return p


# ------------------------------------------------------------------ parsing


def test_parse_small_config(small_cfg):
    cfg = load_config(small_cfg)
    assert cfg.name == "small"
    assert cfg.arrivals == {"kind": "poisson", "rate": 1.5}
    assert cfg.servers == 2 and cfg.service_rate == 1.0
    assert cfg.patience == {"kind": "piecewise", "breakpoints": (0.0, 1.0),
                            "values": (0.3, 1.0)}
    assert cfg.k_values == (10, 50)
    assert cfg.cdf_grid == (0.1, 0.2)
    assert cfg.passage["b_values"] == (0.5, 1.0)
    assert cfg.passage["tau_values"] == (1.0, 5.0)
    assert cfg.passage["orders"] == (25,)
    assert cfg.passage["families"] == ("erlang", "cme")
    assert cfg.passage["theta0_list"] == ((1.0,),)
    assert cfg.sim_arrivals == 40000 and cfg.sim_batches == 4
    assert cfg.seed == 11
    assert cfg.output_format == "csv"


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(SMALL_CFG.replace("rate = 1.5", "rate = 1.5\nshape = 2"))
    with pytest.raises(ConfigError, match=r"\[arrivals\].*shape"):
        load_config(p)


def test_unknown_section_rejected(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(SMALL_CFG + "\n[extras]\nfoo = 1\n")
    with pytest.raises(ConfigError, match="extras"):
        load_config(p)


def test_malformed_matrix_row_names_the_row(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("""\
[scenario]
name = inline

[arrivals]
kind = inline
C = -3 1; 0.5 x
D = 1 1; 0.5 0.5

[service]
servers = 1
rate = 1.0

[patience]
kind = exponential
rate = 1.0
""")
    with pytest.raises(ConfigError, match="C row 2"):
        load_config(p)


def test_missing_section_rejected(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[scenario]\nname = x\n")
    with pytest.raises(ConfigError, match="arrivals"):
        load_config(p)


def test_even_cme_order_rejected(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(SMALL_CFG.replace("orders = 25", "orders = 10"))
    with pytest.raises(ConfigError, match="odd"):
        load_config(p)


def test_sweep_requires_scalable_arrivals(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(SMALL_CFG.replace(
        "kind = poisson\nrate = 1.5",
        "kind = superposed-mmpp\ncount = 3") + "\n[sweep]\nparameter = load\nvalues = 0.5, 1.0\n")
    with pytest.raises(ConfigError, match="sweep"):
        load_config(p)


# ---------------------------------------------------------------- round trip


def test_canonical_json_round_trip(small_cfg, tmp_path):
    cfg = load_config(small_cfg)
    dump = scenario_to_json(cfg)
    q = tmp_path / "canon.json"
    q.write_text(dump)
    again = load_config(q)
    assert again == cfg
    assert scenario_to_json(again) == dump


def test_shipped_configs_parse_and_round_trip(tmp_path):
    import pathlib
    cfg_dir = pathlib.Path(__file__).resolve().parents[1] / "configs"
    shipped = sorted(cfg_dir.glob("*.cfg"))
    assert len(shipped) >= 11
    for path in shipped:
        cfg = load_config(path)
        q = tmp_path / (path.stem + ".json")
        q.write_text(scenario_to_json(cfg))
        assert load_config(q) == cfg, path.name


# ------------------------------------------------------------------- output


def test_steady_csv_schema_and_values(small_cfg):
    res = CliRunner().invoke(main, ["steady", "--config", str(small_cfg)])
    assert res.exit_code == 0, res.output
    lines = res.output.strip().splitlines()
    assert lines[0] == STEADY_CSV_HEADER
    assert len(lines) == 3  # one row per K
    cfg = load_config(small_cfg)
    from fluidq.config import build_waiting_model
    want = solve_waiting_metrics(build_waiting_model(cfg, K=10))
    row = dict(zip(lines[0].split(","), lines[1].split(",")))
    assert row["scenario"] == "small" and row["K"] == "10"
    assert row["source"] == "analysis" and row["hw_pr_abandon"] == ""
    assert float(row["pr_zero_wait"]) == pytest.approx(want.pr_zero_wait, abs=1e-9)
    assert float(row["cdf_0.1"]) == pytest.approx(want.cond_cdf_samples[0][1], abs=1e-9)


def test_steady_simulate_rows_and_seed_override(small_cfg):
    args = ["steady", "--config", str(small_cfg), "--simulate", "--seed", "5"]
    r1 = CliRunner().invoke(main, args)
    r2 = CliRunner().invoke(main, args)
    r3 = CliRunner().invoke(main, ["steady", "--config", str(small_cfg),
                                   "--simulate", "--seed", "6"])
    assert r1.exit_code == 0, r1.output
    assert r1.output == r2.output
    assert r1.output != r3.output
    sims = [l for l in r1.output.splitlines() if ",sim," in l]
    assert len(sims) == 1  # the simulation does not depend on K
    assert all(l.split(",")[3] == "sim" for l in sims)


def test_passage_csv_schema(small_cfg):
    res = CliRunner().invoke(main, ["passage", "--config", str(small_cfg)])
    assert res.exit_code == 0, res.output
    lines = res.output.strip().splitlines()
    assert lines[0] == PASSAGE_CSV_HEADER
    # grid: 1 theta0 x 2 tau x 2 b x (erlang-9, cme-9)
    assert len(lines) == 1 + 8
    row = dict(zip(lines[0].split(","), lines[1].split(",")))
    assert row["kind"] == "virtual" and row["family"] == "erlang"
    assert row["order"] == "25" and row["source"] == "analysis"
    p = float(row["probability"])
    assert 0.0 <= p <= 1.0


def test_passage_kind_override_and_sim_column(small_cfg):
    res = CliRunner().invoke(main, ["passage", "--config", str(small_cfg),
                                    "--kind", "actual", "--simulate"])
    assert res.exit_code == 0, res.output
    lines = res.output.strip().splitlines()[1:]
    assert all(l.split(",")[1] == "actual" for l in lines)
    sims = [l for l in lines if ",sim," in l]
    assert len(sims) == 4  # one per (tau, b)
    hw = float(sims[0].split(",")[-1])
    assert hw > 0.0


def test_table_and_json_formats(small_cfg):
    rt = CliRunner().invoke(main, ["steady", "--config", str(small_cfg),
                                   "--format", "table"])
    assert rt.exit_code == 0 and "pr_zero_wait" in rt.output
    rj = CliRunner().invoke(main, ["passage", "--config", str(small_cfg),
                                   "--format", "json"])
    assert rj.exit_code == 0
    doc = json.loads(rj.output)
    assert doc["schema"] == "fluidq.passage.v1"
    assert len(doc["rows"]) == 8
    assert doc["rows"][0]["family"] == "erlang"


def test_out_writes_file(small_cfg, tmp_path):
    out = tmp_path / "res.csv"
    res = CliRunner().invoke(main, ["steady", "--config", str(small_cfg),
                                    "--out", str(out)])
    assert res.exit_code == 0
    assert out.read_text().splitlines()[0] == STEADY_CSV_HEADER


def test_simulate_command_deterministic(small_cfg):
    args = ["simulate", "--config", str(small_cfg)]
    r1 = CliRunner().invoke(main, args)
    r2 = CliRunner().invoke(main, args)
    assert r1.exit_code == 0, r1.output
    assert r1.output == r2.output
    lines = r1.output.strip().splitlines()
    assert lines[0] == STEADY_CSV_HEADER
    assert all(",sim," in l for l in lines[1:])


def test_simulate_rejects_zero_budget(small_cfg, tmp_path):
    p = tmp_path / "zero.cfg"
    p.write_text(SMALL_CFG.replace("arrivals = 40000", "arrivals = 0"))
    res = CliRunner().invoke(main, ["simulate", "--config", str(p)])
    assert res.exit_code == 2
    assert "budget" in res.output


def test_validate_emits_canonical_json(small_cfg):
    res = CliRunner().invoke(main, ["validate", "--config", str(small_cfg)])
    assert res.exit_code == 0, res.output
    doc = json.loads(res.output)
    assert doc["schema"] == "fluidq.scenario.v1"
    assert doc["scenario"]["name"] == "small"


def test_config_error_exit_code(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[scenario]\nname = broken\n")
    res = CliRunner().invoke(main, ["steady", "--config", str(p)])
    assert res.exit_code == 2
    assert "arrivals" in res.output


def test_numerical_failure_exit_code(small_cfg, tmp_path):
    # order-101 signed horizon coefficients are not representable in doubles,
    # so realizing them is a numerical failure, not a config error
    p = tmp_path / "c101.cfg"
    p.write_text(SMALL_CFG.replace("orders = 25", "orders = 101")
                 .replace("families = erlang, cme", "families = cme"))
    res = CliRunner().invoke(main, ["passage", "--config", str(p)])
    assert res.exit_code == 3


def test_worker_count_does_not_change_output(small_cfg, monkeypatch):
    monkeypatch.setenv("FLUIDQ_WORKERS", "1")
    r1 = CliRunner().invoke(main, ["passage", "--config", str(small_cfg)])
    monkeypatch.setenv("FLUIDQ_WORKERS", "2")
    r2 = CliRunner().invoke(main, ["passage", "--config", str(small_cfg)])
    assert r1.exit_code == 0 and r2.exit_code == 0
    assert r1.output == r2.output


def test_piecewise_csv_patience_loads(tmp_path):
    law = tmp_path / "law.csv"
    law.write_text("0,0.2\n0.5,0.6\n1.5,1.0\n")
    p = tmp_path / "csvlaw.cfg"
    p.write_text(SMALL_CFG.replace(
        "kind = piecewise\nbreakpoints = 0, 1\nvalues = 0.3, 1.0",
        f"kind = piecewise-csv\npath = {law.name}"))
    cfg = load_config(p)
    assert cfg.patience["kind"] == "piecewise"
    assert cfg.patience["breakpoints"] == (0.0, 0.5, 1.5)
    assert cfg.patience["values"] == (0.2, 0.6, 1.0)
