"""Scenario configuration: INI files, canonical JSON, model builders.

A scenario file holds named sections with the arrival process, the
service pool, the patience law, and optional steady-state, sweep,
passage, simulation, and output blocks.  Parsing normalizes everything
into a ScenarioConfig of plain scalars and tuples, so a scenario round
trips losslessly through its canonical JSON dump.  Unknown sections or
keys are rejected with a diagnostic naming the offending field.
"""

import configparser
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .arrivals import (
    MapProcess,
    build_correlated_map,
    build_superposed_mmpp,
    hyperexp_balanced_means,
    validate_map,
)
from .passage import CmeHorizon, ErlangHorizon, PassageQuery
from .patience import (
    Deterministic,
    ErlangK,
    Exponential,
    HyperExponential,
    MixtureExponentialWithBalking,
    PiecewiseConstantGa,
    Weibull,
    piecewise_from_csv,
)
from .waiting import CallCenterModel

SCHEMA = "fluidq.scenario.v1"


class ConfigError(Exception):
    """A scenario file failed validation; the message names the field."""


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    arrivals: dict
    servers: int
    service_rate: float
    patience: dict
    k_values: tuple = (250,)
    cdf_grid: tuple = (0.1, 0.2)
    sweep: Optional[dict] = None
    passage: Optional[dict] = None
    sim_arrivals: int = 2_000_000
    sim_replications: int = 100_000
    sim_batches: int = 32
    sim_warmup: float = 0.1
    sim_confidence: float = 0.95
    seed: int = 0
    output_format: str = "table"


# ------------------------------------------------------------------ parsing

_SECTION_KEYS = {
    "scenario": {"name"},
    "service": {"servers", "rate"},
    "steady": {"k", "cdf_grid"},
    "sweep": {"parameter", "values"},
    "passage": {"kind", "a", "b", "tau", "orders", "families", "pi0", "theta0"},
    "simulation": {"arrivals", "replications", "batches", "warmup",
                   "confidence", "seed"},
    "output": {"format"},
}
_ARRIVAL_KEYS = {
    "poisson": {"rate"},
    "superposed-mmpp": {"count"},
    "correlated-map": {"mean", "scv", "psi"},
    "inline": {"c", "d"},
}
_PATIENCE_KEYS = {
    "exponential": {"rate"},
    "balking-mixture": {"atom", "weights", "rates"},
    "hyperexponential": {"weights", "rates"},
    "deterministic": {"threshold"},
    "weibull": {"rate", "shape"},
    "erlang": {"stages", "mean"},
    "piecewise": {"breakpoints", "values"},
    "piecewise-csv": {"path"},
}
_SCALABLE_ARRIVALS = ("poisson", "correlated-map")


def _floats(text, where):
    toks = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    if not toks:
        raise ConfigError(f"{where}: expected at least one number")
    try:
        return tuple(float(t) for t in toks)
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None


def _ints(text, where):
    vals = _floats(text, where)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"{where}: expected integers")
    return tuple(int(v) for v in vals)


def _float(text, where):
    (v,) = _floats(text, where)
    return v


def _int(text, where):
    (v,) = _ints(text, where)
    return v


def _matrix(text, where):
    rows = []
    for i, chunk in enumerate(text.split(";"), start=1):
        try:
            rows.append(tuple(float(t) for t in re.split(r"[,\s]+", chunk.strip()) if t))
        except ValueError as e:
            raise ConfigError(f"{where} row {i}: {e}") from None
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ConfigError(f"{where}: ragged rows")
    return tuple(rows)


def _check_keys(section, present, allowed):
    extra = set(present) - allowed
    if extra:
        raise ConfigError(f"[{section}]: unknown key '{sorted(extra)[0]}'")


def _need(sec, key, section):
    if key not in sec:
        raise ConfigError(f"[{section}]: missing key '{key}'")
    return sec[key]


def _parse_arrivals(sec):
    kind = _need(sec, "kind", "arrivals").strip()
    if kind not in _ARRIVAL_KEYS:
        raise ConfigError(f"[arrivals]: unknown kind '{kind}'")
    _check_keys("arrivals", set(sec) - {"kind"}, _ARRIVAL_KEYS[kind])
    if kind == "poisson":
        return {"kind": kind, "rate": _float(_need(sec, "rate", "arrivals"),
                                             "[arrivals] rate")}
    if kind == "superposed-mmpp":
        return {"kind": kind, "count": _int(_need(sec, "count", "arrivals"),
                                            "[arrivals] count")}
    if kind == "correlated-map":
        return {"kind": kind,
                "mean": _float(_need(sec, "mean", "arrivals"), "[arrivals] mean"),
                "scv": _float(_need(sec, "scv", "arrivals"), "[arrivals] scv"),
                "psi": _float(_need(sec, "psi", "arrivals"), "[arrivals] psi")}
    return {"kind": kind,
            "C": _matrix(_need(sec, "c", "arrivals"), "[arrivals] C"),
            "D": _matrix(_need(sec, "d", "arrivals"), "[arrivals] D")}


def _parse_patience(sec, base_dir):
    kind = _need(sec, "kind", "patience").strip()
    if kind not in _PATIENCE_KEYS:
        raise ConfigError(f"[patience]: unknown kind '{kind}'")
    _check_keys("patience", set(sec) - {"kind"}, _PATIENCE_KEYS[kind])
    get = lambda key: _need(sec, key, "patience")
    w = lambda key: f"[patience] {key}"
    if kind == "exponential":
        return {"kind": kind, "rate": _float(get("rate"), w("rate"))}
    if kind == "balking-mixture":
        return {"kind": kind, "atom": _float(get("atom"), w("atom")),
                "weights": _floats(get("weights"), w("weights")),
                "rates": _floats(get("rates"), w("rates"))}
    if kind == "hyperexponential":
        return {"kind": kind,
                "weights": _floats(get("weights"), w("weights")),
                "rates": _floats(get("rates"), w("rates"))}
    if kind == "deterministic":
        return {"kind": kind, "threshold": _float(get("threshold"), w("threshold"))}
    if kind == "weibull":
        return {"kind": kind, "rate": _float(get("rate"), w("rate")),
                "shape": _float(get("shape"), w("shape"))}
    if kind == "erlang":
        return {"kind": kind, "stages": _int(get("stages"), w("stages")),
                "mean": _float(get("mean"), w("mean"))}
    if kind == "piecewise":
        return {"kind": kind,
                "breakpoints": _floats(get("breakpoints"), w("breakpoints")),
                "values": _floats(get("values"), w("values"))}
    path = (base_dir / get("path").strip()).resolve()
    try:
        law = piecewise_from_csv(path)
    except (OSError, ValueError) as e:
        raise ConfigError(f"[patience] path: {e}") from None
    return {"kind": "piecewise", "breakpoints": law.breakpoints,
            "values": law.values}


def _parse_passage(sec):
    families = tuple(t.strip() for t in sec.get("families", "erlang, cme").split(","))
    theta0_list = tuple(_floats(chunk, "[passage] theta0")
                        for chunk in _need(sec, "theta0", "passage").split(";"))
    return {"kind": sec.get("kind", "virtual").strip(),
            "a": _float(sec.get("a", "0"), "[passage] a"),
            "b_values": _floats(_need(sec, "b", "passage"), "[passage] b"),
            "tau_values": _floats(_need(sec, "tau", "passage"), "[passage] tau"),
            "orders": _ints(_need(sec, "orders", "passage"), "[passage] orders"),
            "families": families,
            "pi0": _floats(_need(sec, "pi0", "passage"), "[passage] pi0"),
            "theta0_list": theta0_list}


def arrival_order(spec):
    kind = spec["kind"]
    if kind == "poisson":
        return 1
    if kind == "superposed-mmpp":
        return spec["count"] + 1
    if kind == "correlated-map":
        return 2
    return len(spec["C"])


def _validate_scenario(cfg):
    if cfg.servers < 1:
        raise ConfigError("[service] servers: need at least one server")
    if cfg.service_rate <= 0:
        raise ConfigError("[service] rate: must be positive")
    if any(k < 1 for k in cfg.k_values):
        raise ConfigError("[steady] K: regime counts must be positive")
    if len(cfg.cdf_grid) > 2:
        raise ConfigError("[steady] cdf_grid: at most two sample points")
    if not 0.0 <= cfg.sim_warmup < 1.0:
        raise ConfigError("[simulation] warmup: must lie in [0, 1)")
    if not 0.0 < cfg.sim_confidence < 1.0:
        raise ConfigError("[simulation] confidence: must lie in (0, 1)")
    if cfg.output_format not in ("table", "csv", "json"):
        raise ConfigError(f"[output] format: unknown format '{cfg.output_format}'")
    try:
        mp = build_arrivals_process(cfg.arrivals)
        validate_map(mp.C, mp.D)
    except ValueError as e:
        raise ConfigError(f"[arrivals]: {e}") from None
    try:
        build_patience_spec(cfg.patience)
    except ValueError as e:
        raise ConfigError(f"[patience]: {e}") from None

    if cfg.sweep is not None:
        if cfg.sweep["parameter"] not in ("load", "servers"):
            raise ConfigError(
                f"[sweep] parameter: unknown parameter '{cfg.sweep['parameter']}'")
        if cfg.arrivals["kind"] not in _SCALABLE_ARRIVALS:
            raise ConfigError("[sweep]: only poisson or correlated-map arrivals "
                              "can be rescaled by a sweep")
        if cfg.sweep["parameter"] == "servers" and any(
                v != int(v) or v < 1 for v in cfg.sweep["values"]):
            raise ConfigError("[sweep] values: server counts must be positive "
                              "integers")

    if cfg.passage is not None:
        p = cfg.passage
        if p["kind"] not in ("virtual", "actual"):
            raise ConfigError(f"[passage]: unknown kind '{p['kind']}'")
        if not p["families"] or not set(p["families"]) <= {"erlang", "cme"}:
            raise ConfigError(f"[passage]: unknown family in {p['families']}")
        if not p["orders"]:
            raise ConfigError("[passage] orders: need at least one order")
        if "cme" in p["families"] and any(o % 2 == 0 for o in p["orders"]):
            raise ConfigError("[passage] orders: the signed horizon tables are "
                              "shipped for odd orders only")
        m = arrival_order(cfg.arrivals)
        if any(len(t) != m for t in p["theta0_list"]):
            raise ConfigError("[passage] theta0: length must match the arrival "
                              f"order {m}")
        if len(p["pi0"]) != cfg.servers + 1:
            raise ConfigError("[passage] pi0: needs one entry per ladder level "
                              f"({cfg.servers + 1})")
        try:
            for theta0 in p["theta0_list"]:
                for tau in p["tau_values"]:
                    for b in p["b_values"]:
                        PassageQuery(a=p["a"], b=b, pi0=p["pi0"], theta0=theta0,
                                     tau=tau, horizon=ErlangHorizon(p["orders"][0]),
                                     kind=p["kind"])
        except ValueError as e:
            raise ConfigError(f"[passage]: {e}") from None


def _from_ini(text, base_dir):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                   interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None

    known = set(_SECTION_KEYS) | {"arrivals", "patience"}
    for section in cp.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")
    for required in ("scenario", "arrivals", "service", "patience"):
        if not cp.has_section(required):
            raise ConfigError(f"missing section [{required}]")
    for section, allowed in _SECTION_KEYS.items():
        if cp.has_section(section):
            _check_keys(section, cp[section].keys(), allowed)

    kw = {}
    kw["name"] = _need(cp["scenario"], "name", "scenario").strip()
    kw["arrivals"] = _parse_arrivals(cp["arrivals"])
    kw["servers"] = _int(_need(cp["service"], "servers", "service"),
                         "[service] servers")
    kw["service_rate"] = _float(_need(cp["service"], "rate", "service"),
                                "[service] rate")
    kw["patience"] = _parse_patience(cp["patience"], base_dir)
    if cp.has_section("steady"):
        sec = cp["steady"]
        if "k" in sec:
            kw["k_values"] = _ints(sec["k"], "[steady] K")
        if "cdf_grid" in sec:
            kw["cdf_grid"] = _floats(sec["cdf_grid"], "[steady] cdf_grid")
    if cp.has_section("sweep"):
        sec = cp["sweep"]
        kw["sweep"] = {"parameter": _need(sec, "parameter", "sweep").strip(),
                       "values": _floats(_need(sec, "values", "sweep"),
                                         "[sweep] values")}
    if cp.has_section("passage"):
        kw["passage"] = _parse_passage(cp["passage"])
    if cp.has_section("simulation"):
        sec = cp["simulation"]
        if "arrivals" in sec:
            kw["sim_arrivals"] = _int(sec["arrivals"], "[simulation] arrivals")
        if "replications" in sec:
            kw["sim_replications"] = _int(sec["replications"],
                                          "[simulation] replications")
        if "batches" in sec:
            kw["sim_batches"] = _int(sec["batches"], "[simulation] batches")
        if "warmup" in sec:
            kw["sim_warmup"] = _float(sec["warmup"], "[simulation] warmup")
        if "confidence" in sec:
            kw["sim_confidence"] = _float(sec["confidence"],
                                          "[simulation] confidence")
        if "seed" in sec:
            kw["seed"] = _int(sec["seed"], "[simulation] seed")
    if cp.has_section("output"):
        kw["output_format"] = _need(cp["output"], "format", "output").strip()

    cfg = ScenarioConfig(**kw)
    _validate_scenario(cfg)
    return cfg


# ------------------------------------------------------------- canonical JSON

def _tupled(obj):
    if isinstance(obj, dict):
        return {k: _tupled(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return tuple(_tupled(v) for v in obj)
    return obj


def scenario_to_json(cfg: ScenarioConfig) -> str:
    doc = {
        "schema": SCHEMA,
        "scenario": {
            "name": cfg.name,
            "arrivals": cfg.arrivals,
            "servers": cfg.servers,
            "service_rate": cfg.service_rate,
            "patience": cfg.patience,
            "k_values": cfg.k_values,
            "cdf_grid": cfg.cdf_grid,
            "sweep": cfg.sweep,
            "passage": cfg.passage,
            "sim_arrivals": cfg.sim_arrivals,
            "sim_replications": cfg.sim_replications,
            "sim_batches": cfg.sim_batches,
            "sim_warmup": cfg.sim_warmup,
            "sim_confidence": cfg.sim_confidence,
            "seed": cfg.seed,
            "output_format": cfg.output_format,
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}") from None
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise ConfigError(f"expected a {SCHEMA} document")
    body = doc.get("scenario")
    if not isinstance(body, dict):
        raise ConfigError("missing 'scenario' object")
    fields = set(ScenarioConfig.__dataclass_fields__)
    _check_keys("scenario", body.keys(), fields)
    missing = {"name", "arrivals", "servers", "service_rate", "patience"} - set(body)
    if missing:
        raise ConfigError(f"scenario: missing field '{sorted(missing)[0]}'")
    cfg = ScenarioConfig(**{k: _tupled(v) for k, v in body.items()})
    _validate_scenario(cfg)
    return cfg


def load_config(path) -> ScenarioConfig:
    """Parse a scenario file: INI by default, canonical JSON for .json."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(str(e)) from None
    if path.suffix == ".json":
        return _from_json(text)
    return _from_ini(text, path.parent)


# ------------------------------------------------------------------ builders

def build_arrivals_process(spec) -> MapProcess:
    kind = spec["kind"]
    if kind == "poisson":
        lam = spec["rate"]
        return MapProcess(C=np.array([[-lam]]), D=np.array([[lam]]))
    if kind == "superposed-mmpp":
        return build_superposed_mmpp(spec["count"])
    if kind == "correlated-map":
        v, T = hyperexp_balanced_means(spec["mean"], spec["scv"])
        return build_correlated_map(v, T, spec["psi"])
    return MapProcess(C=np.array(spec["C"], dtype=float),
                      D=np.array(spec["D"], dtype=float))


def build_patience_spec(spec):
    kind = spec["kind"]
    if kind == "exponential":
        return Exponential(rate=spec["rate"])
    if kind == "balking-mixture":
        return MixtureExponentialWithBalking(atom=spec["atom"],
                                             weights=tuple(spec["weights"]),
                                             rates=tuple(spec["rates"]))
    if kind == "hyperexponential":
        return HyperExponential(weights=tuple(spec["weights"]),
                                rates=tuple(spec["rates"]))
    if kind == "deterministic":
        return Deterministic(threshold=spec["threshold"])
    if kind == "weibull":
        return Weibull(rate=spec["rate"], shape=spec["shape"])
    if kind == "erlang":
        return ErlangK(stages=spec["stages"], mean=spec["mean"])
    return PiecewiseConstantGa(breakpoints=tuple(spec["breakpoints"]),
                               values=tuple(spec["values"]))


def _base_arrival_rate(spec):
    if spec["kind"] == "poisson":
        return spec["rate"]
    return 1.0 / spec["mean"]


def _scaled_arrivals(spec, rate):
    if spec["kind"] == "poisson":
        return {"kind": "poisson", "rate": rate}
    return {"kind": "correlated-map", "mean": 1.0 / rate,
            "scv": spec["scv"], "psi": spec["psi"]}


def sweep_points(cfg: ScenarioConfig):
    """(label, arrivals spec, servers) per output row; one row if no sweep."""
    if cfg.sweep is None:
        return [(None, cfg.arrivals, cfg.servers)]
    points = []
    if cfg.sweep["parameter"] == "load":
        for rho in cfg.sweep["values"]:
            rate = rho * cfg.servers * cfg.service_rate
            points.append((rho, _scaled_arrivals(cfg.arrivals, rate), cfg.servers))
    else:
        rho0 = _base_arrival_rate(cfg.arrivals) / (cfg.servers * cfg.service_rate)
        for sv in cfg.sweep["values"]:
            sv = int(sv)
            rate = rho0 * sv * cfg.service_rate
            points.append((sv, _scaled_arrivals(cfg.arrivals, rate), sv))
    return points


def build_waiting_model(cfg: ScenarioConfig, K, sweep_value=None) -> CallCenterModel:
    """The queueing model for one table row; sweep_value picks the row."""
    for label, arrivals, servers in sweep_points(cfg):
        if label == sweep_value:
            return CallCenterModel(arrivals=build_arrivals_process(arrivals),
                                   servers=servers,
                                   service_rate=cfg.service_rate,
                                   patience=build_patience_spec(cfg.patience),
                                   K=K)
    raise ConfigError(f"[sweep]: no row for value {sweep_value!r}")


def build_passage_grid(cfg: ScenarioConfig, kind=None):
    """Ordered (theta0, tau, b, family, order, query) grid rows."""
    if cfg.passage is None:
        raise ConfigError("missing section [passage]")
    p = cfg.passage
    kind = kind or p["kind"]
    rows = []
    for theta0 in p["theta0_list"]:
        for tau in p["tau_values"]:
            for b in p["b_values"]:
                for family in p["families"]:
                    for order in p["orders"]:
                        horizon = (ErlangHorizon(order) if family == "erlang"
                                   else CmeHorizon(order))
                        q = PassageQuery(a=p["a"], b=b, pi0=p["pi0"],
                                         theta0=theta0, tau=tau,
                                         horizon=horizon, kind=kind)
                        rows.append((theta0, tau, b, family, order, q))
    return rows
