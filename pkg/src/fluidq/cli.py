"""Command-line front end: table reproduction and machine-readable output.

Subcommands: steady, passage, simulate, validate.  Scenario files are
INI or canonical JSON (see config).  Grid points run through a worker
pool sized by FLUIDQ_WORKERS (default: available cores); output order
is the grid order, never completion order.  Exit codes: 0 ok, 2 config
error, 3 numerical failure.
"""

import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import click

from .config import (
    ConfigError,
    build_passage_grid,
    build_waiting_model,
    load_config,
    scenario_to_json,
    sweep_points,
)
from .simulate import simulate_passage_probability, simulate_waiting_metrics
from .passage import solve_passage
from .waiting import solve_waiting_metrics

_METRICS = ("pr_zero_wait", "pr_zero_wait_given_success", "pr_abandon",
            "mean_wait_given_success", "var_wait_given_success")


def _steady_columns(grid):
    cols = ["scenario", "sweep_value", "K", "source"]
    for name in _METRICS:
        cols += [name, "hw_" + name]
    for x in grid:
        cols += [f"cdf_{x:g}", f"hw_cdf_{x:g}"]
    return cols


STEADY_CSV_HEADER = ",".join(_steady_columns((0.1, 0.2)))
PASSAGE_CSV_HEADER = ("scenario,kind,theta0,tau,b,family,order,source,"
                      "probability,hw_probability")


# ------------------------------------------------------------------- workers

def _workers():
    raw = os.environ.get("FLUIDQ_WORKERS", "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FLUIDQ_WORKERS: not an integer: '{raw}'") from None
    if n < 1:
        raise ConfigError("FLUIDQ_WORKERS: must be at least 1")
    return n


def _run_tasks(worker, tasks):
    n = _workers()
    if n == 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(worker, tasks))


def _steady_worker(args):
    cfg, sweep_value, K, source, seed = args
    model = build_waiting_model(cfg, K if K is not None else cfg.k_values[-1],
                                sweep_value)
    row = {"scenario": cfg.name, "sweep_value": sweep_value, "K": K,
           "source": source}
    if source == "analysis":
        met = solve_waiting_metrics(model, cdf_grid=cfg.cdf_grid)
        for name in _METRICS:
            row[name] = getattr(met, name)
            row["hw_" + name] = None
        for x, val in met.cond_cdf_samples:
            row[f"cdf_{x:g}"] = val
            row[f"hw_cdf_{x:g}"] = None
    else:
        sim = simulate_waiting_metrics(
            model, total_arrivals=cfg.sim_arrivals, batches=cfg.sim_batches,
            warmup=cfg.sim_warmup, cdf_grid=cfg.cdf_grid, seed=seed,
            confidence=cfg.sim_confidence)
        for name in _METRICS:
            est = getattr(sim, name)
            row[name] = est.value
            row["hw_" + name] = est.halfwidth
        for x, est in sim.cond_cdf_samples:
            row[f"cdf_{x:g}"] = est.value
            row[f"hw_cdf_{x:g}"] = est.halfwidth
    return row


def _passage_worker(args):
    cfg, query, theta0, tau, b, family, order, source, seed = args
    model = build_waiting_model(cfg, cfg.k_values[-1], None)
    row = {"scenario": cfg.name, "kind": query.kind,
           "theta0": "|".join(f"{x:g}" for x in theta0),
           "tau": tau, "b": b, "family": family, "order": order,
           "source": source}
    if source == "analysis":
        row["probability"] = float(solve_passage(model, query))
        row["hw_probability"] = None
    else:
        sim = simulate_passage_probability(
            model, query, replications=cfg.sim_replications, seed=seed,
            confidence=cfg.sim_confidence)
        row["probability"] = sim.probability.value
        row["hw_probability"] = sim.probability.halfwidth
    return row


def _steady_rows(cfg, with_sim, seed):
    tasks = []
    sim_index = 0
    for label, _, _ in sweep_points(cfg):
        for K in cfg.k_values:
            tasks.append((cfg, label, K, "analysis", 0))
        if with_sim:
            tasks.append((cfg, label, None, "sim", seed + sim_index))
            sim_index += 1
    return _run_tasks(_steady_worker, tasks)


def _sim_only_rows(cfg, seed):
    tasks = [(cfg, label, None, "sim", seed + i)
             for i, (label, _, _) in enumerate(sweep_points(cfg))]
    return _run_tasks(_steady_worker, tasks)


def _passage_rows(cfg, kind, with_sim, seed):
    grid = build_passage_grid(cfg, kind)
    tasks = []
    sim_index = 0
    for key, group in itertools.groupby(grid, key=lambda r: (r[0], r[1], r[2])):
        group = list(group)
        if with_sim:
            theta0, tau, b = key
            tasks.append((cfg, group[0][5], theta0, tau, b, "sim", None,
                          "sim", seed + sim_index))
            sim_index += 1
        for theta0, tau, b, family, order, q in group:
            tasks.append((cfg, q, theta0, tau, b, family, order, "analysis", 0))
    return _run_tasks(_passage_worker, tasks)


# ----------------------------------------------------------------- rendering

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, int):
        return str(v)
    return f"{v:.10g}"


def _render_csv(columns, rows):
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(c)) for c in columns))
    return "\n".join(lines) + "\n"


def _render_json(schema, rows):
    return json.dumps({"schema": schema, "rows": rows}, indent=2) + "\n"


def _cell(value, hw):
    if value is None:
        return ""
    if hw is None:
        return f"{value:.5f}"
    return f"{value:.5f} ± {hw:.5f}"


def _render_steady_table(cfg, rows):
    blocks = []
    for (scenario, sweep_value), group in itertools.groupby(
            rows, key=lambda r: (r["scenario"], r["sweep_value"])):
        group = list(group)
        head = f"scenario: {scenario}"
        if sweep_value is not None:
            head += f"   {cfg.sweep['parameter']}: {_fmt(sweep_value)}"
        cols = [("K=" + _fmt(r["K"])) if r["source"] == "analysis" else "sim"
                for r in group]
        names = list(_METRICS) + [f"cdf_{x:g}" for x in cfg.cdf_grid]
        width = max(len(n) for n in names) + 2
        cwidth = max(22, max(len(c) for c in cols) + 2)
        lines = [head, "".join(["metric".ljust(width)]
                               + [c.rjust(cwidth) for c in cols])]
        for name in names:
            cells = [_cell(r.get(name), r.get("hw_" + name)) for r in group]
            lines.append("".join([name.ljust(width)]
                                 + [c.rjust(cwidth) for c in cells]))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def _render_passage_table(cfg, rows):
    blocks = []
    for (kind, theta0), group in itertools.groupby(
            rows, key=lambda r: (r["kind"], r["theta0"])):
        group = list(group)
        cols = []
        for r in group:
            label = "sim" if r["source"] == "sim" else f"{r['family']}-{r['order']}"
            if label not in cols:
                cols.append(label)
        lines = [f"scenario: {group[0]['scenario']}   kind: {kind}   "
                 f"theta0: {theta0}",
                 "".join(["tau".rjust(8), "b".rjust(8)]
                         + [c.rjust(22) for c in cols])]
        for (tau, b), cells in itertools.groupby(
                group, key=lambda r: (r["tau"], r["b"])):
            by_col = {}
            for r in cells:
                label = ("sim" if r["source"] == "sim"
                         else f"{r['family']}-{r['order']}")
                by_col[label] = _cell(r["probability"], r["hw_probability"])
            lines.append("".join([_fmt(tau).rjust(8), _fmt(b).rjust(8)]
                                 + [by_col.get(c, "").rjust(22) for c in cols]))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


def _render(cfg, fmt, rows, schema, columns, table_fn):
    if fmt == "csv":
        return _render_csv(columns, rows)
    if fmt == "json":
        return _render_json(schema, rows)
    return table_fn(cfg, rows)


# ---------------------------------------------------------------- commands

def _load(config_path):
    try:
        return load_config(config_path)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)


def _execute(rows_fn):
    try:
        return rows_fn()
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)
    except Exception as e:
        click.echo(f"numerical failure: {e}", err=True)
        sys.exit(3)


def _require_budget(value, key):
    if value < 1:
        raise ConfigError(f"[simulation] {key}: simulation budget must be "
                          "positive")


_config_opt = click.option("--config", "config_path", required=True,
                           type=click.Path(), help="scenario file (.cfg or .json)")
_format_opt = click.option("--format", "fmt",
                           type=click.Choice(["table", "csv", "json"]),
                           default=None, help="output format (default: config)")
_out_opt = click.option("--out", type=click.Path(), default=None,
                        help="write output to a file instead of stdout")
_seed_opt = click.option("--seed", type=int, default=None,
                         help="override the simulation seed")


@click.group()
def main():
    """Waiting-time and first-passage analysis of multi-server queues
    with Markovian arrivals and impatient customers."""


@main.command()
@_config_opt
@_format_opt
@_out_opt
@_seed_opt
@click.option("--simulate", "with_sim", is_flag=True,
              help="append simulation rows")
def steady(config_path, fmt, out, seed, with_sim):
    """Steady-state waiting metrics, one row per regime count K."""
    cfg = _load(config_path)
    seed = cfg.seed if seed is None else seed
    fmt = fmt or cfg.output_format

    def run():
        if with_sim:
            _require_budget(cfg.sim_arrivals, "arrivals")
        return _steady_rows(cfg, with_sim, seed)

    rows = _execute(run)
    _emit(_render(cfg, fmt, rows, "fluidq.steady.v1",
                  _steady_columns(cfg.cdf_grid), _render_steady_table), out)


@main.command()
@_config_opt
@_format_opt
@_out_opt
@_seed_opt
@click.option("--simulate", "with_sim", is_flag=True,
              help="prepend a simulation row per grid point")
@click.option("--kind", type=click.Choice(["virtual", "actual"]), default=None,
              help="override the passage kind")
def passage(config_path, fmt, out, seed, with_sim, kind):
    """First-passage probabilities over the configured grid."""
    cfg = _load(config_path)
    seed = cfg.seed if seed is None else seed
    fmt = fmt or cfg.output_format

    def run():
        if with_sim:
            _require_budget(cfg.sim_replications, "replications")
        return _passage_rows(cfg, kind, with_sim, seed)

    rows = _execute(run)
    columns = PASSAGE_CSV_HEADER.split(",")
    _emit(_render(cfg, fmt, rows, "fluidq.passage.v1", columns,
                  _render_passage_table), out)


@main.command("simulate")
@_config_opt
@_format_opt
@_out_opt
@_seed_opt
def simulate_cmd(config_path, fmt, out, seed):
    """Run the discrete-event estimator standalone."""
    cfg = _load(config_path)
    seed = cfg.seed if seed is None else seed
    fmt = fmt or cfg.output_format

    def run():
        _require_budget(cfg.sim_arrivals, "arrivals")
        return _sim_only_rows(cfg, seed)

    rows = _execute(run)
    _emit(_render(cfg, fmt, rows, "fluidq.steady.v1",
                  _steady_columns(cfg.cdf_grid), _render_steady_table), out)


@main.command()
@_config_opt
@_out_opt
def validate(config_path, out):
    """Check a scenario file and print its canonical JSON form."""
    cfg = _load(config_path)
    _emit(scenario_to_json(cfg), out)


if __name__ == "__main__":
    main()
