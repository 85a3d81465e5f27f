"""Synthetic ground-truth plant and steady-state dataset generation.

The plant is a closed-form analog of an industrial recycle process: a fresh
aromatic feed and an olefin feed are mixed with a recycle stream, evaporated,
preheated against the reactor effluent in a feed-effluent exchanger, brought
to reaction temperature, reacted (aromatic + olefin -> product), let down in
pressure, cooled, flashed, and distilled twice. The first column's overhead
is pumped back to the mixer, which nests the exchanger-preheater-reactor
loop inside the large recycle loop.

Every unit transfer function is smooth (C1 on the operating box), conserves
mass exactly, and keeps composition fractions on the simplex. Units are
deliberately mildly nonlinear: logistic vapor splits and recoveries, a
temperature-activated reaction with smooth reactant-depletion saturation.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .flowsheet import (FlowsheetError, FlowsheetGraph, StreamSpec,
                        SweepState, UnitNode)
from .nn import SIGMA_FLOOR, NormStats

logger = logging.getLogger(__name__)

SPECIES = ("aromatic", "olefin", "alkane", "product")
STREAM_VARIABLES = ("flow", "temp", "pres") + tuple(f"w_{s}" for s in SPECIES)
VARIABLE_UNITS = ("kg/s", "K", "bar") + ("kg/kg",) * len(SPECIES)
STREAM_DIM = len(STREAM_VARIABLES)

FLOW, TEMP, PRES = 0, 1, 2
W = slice(3, 3 + len(SPECIES))


class PlantError(Exception):
    pass


class OracleConvergenceError(PlantError):
    """The damped fixed-point oracle failed to reach its tolerance."""


def _logistic(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[np.logical_not(pos)])
    out[np.logical_not(pos)] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Analytic unit models
# ---------------------------------------------------------------------------


class AnalyticUnit:
    """Closed-form unit transfer function behind the flat UnitModel contract.

    `predict` takes the concatenation of input-stream vectors plus extra
    inputs and returns output-stream vectors plus extra outputs, all in
    physical units. Vectorized over leading axes.
    """

    def __init__(self, kind: str, params: dict, n_in: int, n_out: int,
                 n_extra_in: int, n_extra_out: int):
        self.kind = kind
        self.params = dict(params)
        self.n_in = n_in
        self.n_out = n_out
        self.n_extra_in = n_extra_in
        self.n_extra_out = n_extra_out
        self.d_in = n_in * STREAM_DIM + n_extra_in
        self.d_out = n_out * STREAM_DIM + n_extra_out

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d_in:
            raise PlantError(f"{self.kind}: expected {self.d_in} inputs, got {x.shape[-1]}")
        streams = [x[..., i * STREAM_DIM:(i + 1) * STREAM_DIM] for i in range(self.n_in)]
        extras = x[..., self.n_in * STREAM_DIM:]
        outs, extra_out = self.transfer(streams, extras)
        parts = list(outs)
        if self.n_extra_out:
            parts.append(extra_out)
        return np.concatenate(parts, axis=-1)

    def transfer(self, streams, extras):  # pragma: no cover - abstract
        raise NotImplementedError

    @staticmethod
    def masses(s: np.ndarray) -> np.ndarray:
        return s[..., FLOW:FLOW + 1] * s[..., W]


class Mixer(AnalyticUnit):
    """Adiabatic mass-weighted merge of all inlets (equal heat capacities)."""

    def __init__(self, params, n_in):
        super().__init__("mixer", params, n_in, 1, 0, 0)

    def transfer(self, streams, extras):
        flow = sum(s[..., FLOW] for s in streams)
        masses = sum(self.masses(s) for s in streams)
        temp = sum(s[..., FLOW] * s[..., TEMP] for s in streams) / flow
        pres = sum(s[..., FLOW] * s[..., PRES] for s in streams) / flow
        out = np.concatenate([flow[..., None], temp[..., None], pres[..., None],
                              masses / flow[..., None]], axis=-1)
        return [out], None


class TemperatureSet(AnalyticUnit):
    """Evaporator / heater / cooler: outlet temperature equals the target
    extra input; reports the implied heat duty."""

    def __init__(self, kind, params):
        super().__init__(kind, params, 1, 1, 1, 1)

    def transfer(self, streams, extras):
        s = streams[0]
        t_target = extras[..., 0]
        out = s.copy()
        out[..., TEMP] = t_target
        out[..., PRES] = s[..., PRES] - self.params["dp"]
        duty = s[..., FLOW] * self.params["cp"] * (t_target - s[..., TEMP])
        return [out], duty[..., None]


class Exchanger(AnalyticUnit):
    """Counter-current feed-effluent exchanger, Q = UA (T_hot_in - T_cold_in).

    The effective UA grows with throughput (film-coefficient analog,
    UA ~ (m_cold m_hot)^0.4), coupling flows into the temperature field.
    Compositions pass through each side unchanged.
    """

    def __init__(self, params):
        super().__init__("heat-exchanger", params, 2, 2, 0, 0)

    def transfer(self, streams, extras):
        cold, hot = streams
        p = self.params
        cp = p["cp"]
        fref = p.get("fref", 5.0)
        ua = p["ua"] * (cold[..., FLOW] * hot[..., FLOW] / fref ** 2) ** 0.4
        q = ua * (hot[..., TEMP] - cold[..., TEMP])
        cold_out = cold.copy()
        hot_out = hot.copy()
        cold_out[..., TEMP] = cold[..., TEMP] + q / (cold[..., FLOW] * cp)
        hot_out[..., TEMP] = hot[..., TEMP] - q / (hot[..., FLOW] * cp)
        cold_out[..., PRES] = cold[..., PRES] - p["dp_cold"]
        hot_out[..., PRES] = hot[..., PRES] - p["dp_hot"]
        return [cold_out, hot_out], None


class Reactor(AnalyticUnit):
    """Cooled tubular reactor, aromatic + olefin -> product by mass.

    Olefin conversion follows a logistic activation in inlet temperature;
    aromatic demand rho * X * m_olefin saturates smoothly against the
    available aromatic (cap * (1 - exp(-demand/cap))), which keeps every
    outlet mass strictly positive on any input with positive masses.
    Extra outputs: achieved conversion of aromatic and of olefin.
    """

    def __init__(self, params):
        super().__init__("reactor", params, 1, 1, 0, 2)

    def transfer(self, streams, extras):
        s = streams[0]
        p = self.params
        flow = s[..., FLOW]
        m = self.masses(s)
        m_aro, m_ole = m[..., 0], m[..., 1]
        x_ole = p["xmax"] * _logistic((s[..., TEMP] - p["tmid"]) / p["tscale"])
        demand = p["rho"] * x_ole * m_ole
        cap = self.params.get("cap", 0.95) * m_aro
        r_aro = cap * (-np.expm1(-demand / cap))
        r_ole = r_aro / p["rho"]
        m_out = np.stack([m_aro - r_aro, m_ole - r_ole, m[..., 2],
                          m[..., 3] + r_aro + r_ole], axis=-1)
        t_out = p["tcool"] + (s[..., TEMP] - p["tcool"]) * np.exp(-p["ntu"]) \
            + p["heat"] * r_ole / (flow * p["cp"])
        out = np.concatenate([flow[..., None], t_out[..., None],
                              (s[..., PRES] - p["dp"])[..., None],
                              m_out / flow[..., None]], axis=-1)
        conv = np.stack([r_aro / m_aro, r_ole / m_ole], axis=-1)
        return [out], conv


class Valve(AnalyticUnit):
    """Pressure letdown to the target extra input with a linear
    Joule-Thomson temperature drop."""

    def __init__(self, params):
        super().__init__("valve", params, 1, 1, 1, 0)

    def transfer(self, streams, extras):
        s = streams[0]
        p_target = extras[..., 0]
        out = s.copy()
        out[..., TEMP] = s[..., TEMP] - self.params["jt"] * (s[..., PRES] - p_target)
        out[..., PRES] = p_target
        return [out], None


class Flash(AnalyticUnit):
    """Isothermal flash: per-species vapor fraction is a logistic in
    volatility offset, temperature and pressure. Outputs vapor then liquid."""

    def __init__(self, params):
        super().__init__("flash", params, 1, 2, 0, 0)

    def transfer(self, streams, extras):
        s = streams[0]
        p = self.params
        m = self.masses(s)
        a = np.asarray(p["volatility"], dtype=np.float64)
        arg = a + p["bt"] * (s[..., TEMP:TEMP + 1] - p["tref"]) \
            - p["bp"] * (s[..., PRES:PRES + 1] - p["pref"])
        phi = _logistic(arg)
        vap = m * phi
        liq = m - vap
        outs = []
        for masses in (vap, liq):
            flow = masses.sum(axis=-1)
            outs.append(np.concatenate(
                [flow[..., None], s[..., TEMP:TEMP + 1], s[..., PRES:PRES + 1],
                 masses / flow[..., None]], axis=-1))
        return outs, None


class Column(AnalyticUnit):
    """Two-product distillation: per-species overhead recovery is a logistic
    in a volatility offset plus a reflux-ratio extra input. Each product
    leaves at a bubble-point analog: composition-weighted species boiling
    temperatures plus a linear pressure correction. Outputs overhead then
    bottoms; extra output is the reboiler duty."""

    def __init__(self, params):
        super().__init__("column", params, 1, 2, 1, 1)

    def transfer(self, streams, extras):
        s = streams[0]
        p = self.params
        reflux = extras[..., 0]
        m = self.masses(s)
        c = np.asarray(p["recovery"], dtype=np.float64)
        tb = np.asarray(p["t_boil"], dtype=np.float64)
        rec = _logistic(c + p["d"] * (reflux[..., None] - p["r_ref"]))
        top_m = m * rec
        bot_m = m - top_m
        pres = s[..., PRES]
        outs = []
        for masses, dp in ((top_m, -p["dp"]), (bot_m, p["dp"])):
            flow = masses.sum(axis=-1)
            w = masses / flow[..., None]
            temp = (w * tb).sum(axis=-1) + p["kt"] * (pres - p["pref"])
            outs.append(np.concatenate(
                [flow[..., None], temp[..., None], (pres + dp)[..., None], w],
                axis=-1))
        duty = p["q0"] + p["q1"] * s[..., FLOW] * (1.0 + reflux)
        return outs, duty[..., None]


class Pump(AnalyticUnit):
    """Raise pressure to the configured setpoint; small temperature rise and
    a shaft duty proportional to flow and head."""

    def __init__(self, params):
        super().__init__("pump", params, 1, 1, 0, 1)

    def transfer(self, streams, extras):
        s = streams[0]
        p = self.params
        out = s.copy()
        out[..., PRES] = np.full_like(s[..., PRES], p["p_set"])
        out[..., TEMP] = s[..., TEMP] + p["dt"]
        duty = p["kp"] * s[..., FLOW] * (p["p_set"] - s[..., PRES])
        return [out], duty[..., None]


_KIND_FACTORIES = {
    "mixer": lambda params, n_in: Mixer(params, n_in),
    "evaporator": lambda params, n_in: TemperatureSet("evaporator", params),
    "heater": lambda params, n_in: TemperatureSet("heater", params),
    "cooler": lambda params, n_in: TemperatureSet("cooler", params),
    "heat-exchanger": lambda params, n_in: Exchanger(params),
    "reactor": lambda params, n_in: Reactor(params),
    "valve": lambda params, n_in: Valve(params),
    "flash": lambda params, n_in: Flash(params),
    "column": lambda params, n_in: Column(params),
    "pump": lambda params, n_in: Pump(params),
}


# ---------------------------------------------------------------------------
# Plant definition file
# ---------------------------------------------------------------------------


@dataclass
class VariationKnob:
    """One varied scalar: either `stream.variable` of a feed or
    `unit.extra_input`, sampled uniformly in [low, high]."""

    target: str
    low: float
    high: float


@dataclass
class Plant:
    graph: FlowsheetGraph
    feeds: dict[str, np.ndarray]
    extras: dict[str, np.ndarray]
    extra_input_names: dict[str, list[str]]
    extra_output_names: dict[str, list[str]]
    plan: list[VariationKnob]
    path: str = ""

    def nominal_feeds(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.feeds.items()}

    def nominal_extras(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.extras.items()}

    def columns(self) -> list[str]:
        """Dataset column order: stream variables, then per-unit extra
        inputs, then per-unit extra outputs."""
        cols = []
        for s in self.graph.streams:
            cols += [f"{s}.{v}" for v in self.graph.streams[s].variables]
        for u, names in self.extra_input_names.items():
            cols += [f"{u}.{n}" for n in names]
        for u, names in self.extra_output_names.items():
            cols += [f"{u}.{n}" for n in names]
        return cols


def load_plant(path) -> Plant:
    """Build a Plant from its YAML definition file."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise PlantError(f"cannot read plant file {path}: {exc}")
    for key in ("streams", "feeds", "products", "units"):
        if not isinstance(doc, dict) or key not in doc:
            raise PlantError(f"plant file {path} lacks the {key!r} section")
    streams = {name: StreamSpec(name, STREAM_VARIABLES, VARIABLE_UNITS)
               for name in doc["streams"]}
    units: dict[str, UnitNode] = {}
    extras: dict[str, np.ndarray] = {}
    extra_in_names: dict[str, list[str]] = {}
    extra_out_names: dict[str, list[str]] = {}
    for name, u in doc["units"].items():
        kind = u["kind"]
        if kind not in _KIND_FACTORIES:
            raise PlantError(f"unit {name}: unknown kind {kind!r}")
        extra_in = u.get("extra_inputs", {}) or {}
        extra_out = list(u.get("extra_outputs", []) or [])
        model = _KIND_FACTORIES[kind](u.get("params", {}) or {}, len(u["inputs"]))
        node = UnitNode(name=name, kind=kind, inputs=list(u["inputs"]),
                        outputs=list(u["outputs"]),
                        extra_inputs=list(extra_in), extra_outputs=extra_out,
                        model=model)
        expect = (len(node.inputs) * STREAM_DIM + len(node.extra_inputs),
                  len(node.outputs) * STREAM_DIM + len(node.extra_outputs))
        if (model.d_in, model.d_out) != expect:
            raise PlantError(f"unit {name}: kind {kind} does not fit "
                             f"{len(node.inputs)} inputs / {len(node.outputs)} outputs")
        units[name] = node
        extras[name] = np.array([float(v) for v in extra_in.values()])
        extra_in_names[name] = list(extra_in)
        extra_out_names[name] = extra_out
    feeds = {}
    for name, values in doc["feeds"].items():
        feeds[name] = np.array([float(values[v]) for v in STREAM_VARIABLES])
    try:
        graph = FlowsheetGraph(streams, units, feeds=list(doc["feeds"]),
                               products=list(doc["products"]),
                               tears=doc.get("tears"))
    except FlowsheetError as exc:
        raise PlantError(f"invalid plant structure in {path}: {exc}") from exc
    plan = [VariationKnob(k["target"], float(k["low"]), float(k["high"]))
            for k in doc.get("variation_plan", [])]
    plant = Plant(graph=graph, feeds=feeds, extras=extras,
                  extra_input_names=extra_in_names,
                  extra_output_names=extra_out_names, plan=plan, path=str(path))
    _validate_plan(plant)
    return plant


def _validate_plan(plant: Plant) -> None:
    for knob in plant.plan:
        prefix, var = knob.target.split(".", 1)
        if prefix in plant.feeds:
            if var not in STREAM_VARIABLES:
                raise PlantError(f"variation target {knob.target}: unknown variable")
        elif prefix in plant.graph.units:
            if var not in plant.extra_input_names[prefix]:
                raise PlantError(f"variation target {knob.target}: unknown extra input")
        else:
            raise PlantError(f"variation target {knob.target}: unknown feed or unit")
        if not knob.low <= knob.high:
            raise PlantError(f"variation target {knob.target}: empty range")


def default_plant_path() -> Path:
    return Path(__file__).parent / "plants" / "nested_recycle.yaml"


# ---------------------------------------------------------------------------
# Steady-state oracle
# ---------------------------------------------------------------------------


def oracle_steady_state(graph: FlowsheetGraph, feeds: dict[str, np.ndarray],
                        extras: dict[str, np.ndarray], damping: float = 0.5,
                        tol: float = 1e-10, max_iter: int = 10000,
                        initial: np.ndarray | None = None) -> SweepState:
    """Solve the plant's cycles by heavily damped direct substitution.

    Deliberately self-contained (its own fixed-point loop) so data
    generation does not depend on the solver implementations under test.
    Raises OracleConvergenceError instead of returning a bad point.
    """
    state = SweepState()
    if not graph.tears:
        graph.sweep(state, feeds, extras)
        return state
    x = initial if initial is not None else _neutral_guess(graph, feeds)
    x = np.asarray(x, dtype=np.float64).copy()
    for _ in range(max_iter):
        state.set_tear_vector(graph, x)
        fx = graph.sweep(state, feeds, extras)
        residual = float(np.max(np.abs(fx - x)))
        if residual < tol:
            return state
        x = x + damping * (fx - x)
    raise OracleConvergenceError(
        f"oracle did not converge: residual {residual:.3e} after {max_iter} iterations")


def _neutral_guess(graph: FlowsheetGraph, feeds: dict[str, np.ndarray]) -> np.ndarray:
    """Feed-mix vector repeated for every tear stream: always in-domain."""
    flows = np.array([feeds[f][FLOW] for f in graph.feeds])
    total = flows.sum()
    mix = np.zeros(STREAM_DIM)
    mix[FLOW] = total
    mix[TEMP] = sum(feeds[f][FLOW] * feeds[f][TEMP] for f in graph.feeds) / total
    mix[PRES] = sum(feeds[f][FLOW] * feeds[f][PRES] for f in graph.feeds) / total
    mix[W] = sum(feeds[f][FLOW] * feeds[f][W] for f in graph.feeds) / total
    return np.concatenate([mix for _ in sorted(graph.tears)])


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Steady-state snapshots: one row per operating point.

    Columns are `stream.variable`, `unit.extra_input`, `unit.extra_output`.
    The split assigns each row to train or test; normalization statistics
    are always computed on training rows only.
    """

    columns: list[str]
    rows: np.ndarray
    split: np.ndarray  # array of "train" / "test"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._index = {c: i for i, c in enumerate(self.columns)}

    @property
    def train_rows(self) -> np.ndarray:
        return self.rows[self.split == "train"]

    @property
    def test_rows(self) -> np.ndarray:
        return self.rows[self.split == "test"]

    def column_indices(self, names: list[str]) -> np.ndarray:
        try:
            return np.array([self._index[n] for n in names], dtype=int)
        except KeyError as exc:
            raise PlantError(f"dataset is missing column {exc.args[0]!r}")

    def values(self, names: list[str], split: str | None = None) -> np.ndarray:
        idx = self.column_indices(names)
        rows = self.rows if split is None else self.rows[self.split == split]
        return rows[:, idx]

    def norm_stats(self, names: list[str]) -> NormStats:
        return NormStats.from_data(self.values(names, split="train"))

    def stream_values(self, stream: str, spec: StreamSpec,
                      split: str | None = None) -> np.ndarray:
        return self.values([f"{stream}.{v}" for v in spec.variables], split)

    # -- persistence -----------------------------------------------------

    def save(self, csv_path) -> Path:
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns + ["split"])
        for row, tag in zip(self.rows, self.split):
            writer.writerow([f"{v:.17g}" for v in row] + [tag])
        csv_path.write_text(buf.getvalue())
        meta_path = csv_path.with_suffix(csv_path.suffix + ".meta.json")
        meta_path.write_text(json.dumps(self.meta, indent=2, sort_keys=True))
        return csv_path

    @classmethod
    def load(cls, csv_path) -> "Dataset":
        csv_path = Path(csv_path)
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            body = list(reader)
        if not header or header[-1] != "split":
            raise PlantError(f"{csv_path}: not a dataset file (missing split column)")
        columns = header[:-1]
        rows = np.array([[float(v) for v in r[:-1]] for r in body])
        split = np.array([r[-1] for r in body])
        meta_path = csv_path.with_suffix(csv_path.suffix + ".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(columns=columns, rows=rows, split=split, meta=meta)


def _apply_knob(feeds: dict[str, np.ndarray], extras: dict[str, np.ndarray],
                plant: Plant, knob: VariationKnob, value: float) -> None:
    prefix, var = knob.target.split(".", 1)
    if prefix in feeds:
        feeds[prefix][STREAM_VARIABLES.index(var)] = value
    else:
        extras[prefix][plant.extra_input_names[prefix].index(var)] = value


def generate_dataset(plant: Plant, n_points: int = 397, seed: int = 0,
                     plan: list[VariationKnob] | None = None,
                     test_fraction: float = 0.1) -> Dataset:
    """Generate steady-state snapshots by varying one knob at a time.

    Point i varies knob i mod len(plan), sampled uniformly from its range
    with a per-point seed derived from the master seed; all other knobs sit
    at nominal. Oracle failures are skipped and logged; more than 10%
    skipped aborts generation.
    """
    plan = plan if plan is not None else plant.plan
    if not plan:
        raise PlantError("variation plan is empty")
    columns = plant.columns()
    rows = []
    skipped = 0
    for i in range(n_points):
        knob = plan[i % len(plan)]
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, i]))
        value = rng.uniform(knob.low, knob.high)
        feeds = plant.nominal_feeds()
        extras = plant.nominal_extras()
        _apply_knob(feeds, extras, plant, knob, value)
        try:
            state = oracle_steady_state(plant.graph, feeds, extras)
        except OracleConvergenceError as exc:
            skipped += 1
            logger.warning("point %d (%s=%.6g) skipped: %s", i, knob.target, value, exc)
            continue
        rows.append(_snapshot(plant, state, extras))
    if skipped > 0.1 * n_points:
        raise PlantError(f"{skipped}/{n_points} oracle solves failed; aborting")
    data = np.array(rows)
    n = len(rows)
    n_test = int(round(n * test_fraction))
    perm = np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFF, 0x5EED])).permutation(n)
    split = np.full(n, "train", dtype=object)
    split[perm[:n_test]] = "test"
    meta = {
        "seed": seed,
        "n_points": n_points,
        "skipped": skipped,
        "plant": plant.path,
        "plan": [{"target": k.target, "low": k.low, "high": k.high} for k in plan],
        "units": {u: plant.graph.units[u].kind for u in plant.graph.units},
        "columns": columns,
    }
    ds = Dataset(columns=columns, rows=data, split=split.astype(str), meta=meta)
    stats = ds.norm_stats(columns)
    meta["norm_stats"] = {
        c: {"mu": stats.mu[i], "sigma": stats.sigma[i], "pinned": bool(stats.pinned[i])}
        for i, c in enumerate(columns)
    }
    return ds


def _snapshot(plant: Plant, state: SweepState, extras: dict[str, np.ndarray]) -> np.ndarray:
    parts = []
    for s in plant.graph.streams:
        parts.append(np.asarray(state.values[s], dtype=np.float64))
    for u, names in plant.extra_input_names.items():
        if names:
            parts.append(np.asarray(extras[u], dtype=np.float64))
    for u, names in plant.extra_output_names.items():
        if names:
            parts.append(np.asarray(state.extra_outputs[u], dtype=np.float64))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# Per-unit training tables
# ---------------------------------------------------------------------------


def unit_io_columns(plant: Plant, unit_name: str) -> tuple[list[str], list[str]]:
    unit = plant.graph.units[unit_name]
    x_cols, y_cols = [], []
    for s in unit.inputs:
        x_cols += [f"{s}.{v}" for v in plant.graph.streams[s].variables]
    x_cols += [f"{unit_name}.{n}" for n in unit.extra_inputs]
    for s in unit.outputs:
        y_cols += [f"{s}.{v}" for v in plant.graph.streams[s].variables]
    y_cols += [f"{unit_name}.{n}" for n in unit.extra_outputs]
    return x_cols, y_cols


def extract_unit_table(dataset: Dataset, plant: Plant, unit_name: str,
                       split: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Input and output matrices for one unit, in stream-spec order."""
    if unit_name not in plant.graph.units:
        raise PlantError(f"unknown unit {unit_name}")
    x_cols, y_cols = unit_io_columns(plant, unit_name)
    return dataset.values(x_cols, split), dataset.values(y_cols, split)


# ---------------------------------------------------------------------------
# Integrity checks (used by tests and the data generation gate)
# ---------------------------------------------------------------------------


def mass_balance_errors(plant: Plant, state: SweepState) -> dict[str, float]:
    """Absolute total-mass imbalance per unit for one solved state."""
    errors = {}
    for name, unit in plant.graph.units.items():
        m_in = sum(float(state.values[s][FLOW]) for s in unit.inputs)
        m_out = sum(float(state.values[s][FLOW]) for s in unit.outputs)
        errors[name] = abs(m_in - m_out)
    return errors


def simplex_errors(state: SweepState) -> dict[str, float]:
    """Deviation of composition fractions from the simplex per stream."""
    errors = {}
    for name, value in state.values.items():
        w = np.asarray(value)[..., W]
        errors[name] = max(float(np.abs(w.sum(axis=-1) - 1.0).max()),
                           float(max(0.0, -w.min())),
                           float(max(0.0, w.max() - 1.0)))
    return errors
