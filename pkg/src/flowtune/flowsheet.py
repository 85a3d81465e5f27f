"""Directed multigraph of process units and streams.

Handles cycle detection (Tarjan), tear-stream selection, execution ordering
and the sequential-modular sweep that realizes the flowsheet response
function over the concatenated tear variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tape, Var


class FlowsheetError(Exception):
    pass


class TearSelectionError(FlowsheetError):
    """A user-specified tear set leaves at least one cycle uncut."""


class UnitEvaluationError(FlowsheetError):
    """A unit model failed or produced non-finite stream values."""


@dataclass(frozen=True)
class StreamSpec:
    """Named, ordered set of physical variables carried by one stream."""

    name: str
    variables: tuple[str, ...]
    units: tuple[str, ...] = ()

    def __post_init__(self):
        if len(set(self.variables)) != len(self.variables):
            raise FlowsheetError(f"stream {self.name}: duplicate variable names")

    @property
    def dimension(self) -> int:
        return len(self.variables)


@dataclass
class UnitNode:
    """One process unit: ordered stream connections plus a model binding.

    The model maps the concatenation of input-stream vectors and extra
    inputs to the concatenation of output-stream vectors and extra outputs.
    """

    name: str
    kind: str
    inputs: list[str]
    outputs: list[str]
    extra_inputs: list[str] = field(default_factory=list)
    extra_outputs: list[str] = field(default_factory=list)
    model: object | None = None


class FlowsheetGraph:
    """Units, streams, feeds/products, tear set and execution order."""

    def __init__(self, streams: dict[str, StreamSpec], units: dict[str, UnitNode],
                 feeds: list[str], products: list[str],
                 tears: list[str] | None = None):
        self.streams = streams
        self.units = units
        self.feeds = list(feeds)
        self.products = list(products)
        self._validate_structure()
        self.tears = self._resolve_tears(tears)
        self.order = self._execution_order()

    # -- structure ---------------------------------------------------------

    def _validate_structure(self) -> None:
        producers: dict[str, str] = {}
        consumers: dict[str, list[str]] = {s: [] for s in self.streams}
        for unit in self.units.values():
            for s in unit.inputs:
                if s not in self.streams:
                    raise FlowsheetError(f"unit {unit.name}: unknown input stream {s}")
                consumers[s].append(unit.name)
            for s in unit.outputs:
                if s not in self.streams:
                    raise FlowsheetError(f"unit {unit.name}: unknown output stream {s}")
                if s in producers:
                    raise FlowsheetError(
                        f"stream {s} produced by both {producers[s]} and {unit.name}")
                producers[s] = unit.name
        for s in self.streams:
            if s in self.feeds:
                if s in producers:
                    raise FlowsheetError(f"feed stream {s} has a producing unit")
            elif s not in producers:
                raise FlowsheetError(f"stream {s} has no producing unit and is not a feed")
            if s not in self.products and not consumers[s]:
                raise FlowsheetError(f"stream {s} has no consumer and is not a product")
        self.producer_of = producers
        self.consumers_of = consumers

    def edges(self, exclude: set[str] | None = None) -> list[tuple[str, str, str]]:
        """Unit-level directed edges (producer, consumer, stream)."""
        exclude = exclude or set()
        out = []
        for stream, producer in self.producer_of.items():
            if stream in exclude:
                continue
            for consumer in self.consumers_of[stream]:
                out.append((producer, consumer, stream))
        return out

    def find_sccs(self) -> list[list[str]]:
        """Strongly connected components of the unit graph, Tarjan's algorithm.

        Returned in topological order of the condensation; members sorted
        by name for determinism.
        """
        adj: dict[str, list[str]] = {u: [] for u in self.units}
        for producer, consumer, _ in self.edges():
            adj[producer].append(consumer)
        for u in adj:
            adj[u] = sorted(set(adj[u]))

        index: dict[str, int] = {}
        lowlink: dict[str, int] = {}
        on_stack: dict[str, bool] = {}
        stack: list[str] = []
        counter = [0]
        sccs: list[list[str]] = []

        def strongconnect(v: str) -> None:
            index[v] = lowlink[v] = counter[0]
            counter[0] += 1
            stack.append(v)
            on_stack[v] = True
            for w in adj[v]:
                if w not in index:
                    strongconnect(w)
                    lowlink[v] = min(lowlink[v], lowlink[w])
                elif on_stack.get(w):
                    lowlink[v] = min(lowlink[v], index[w])
            if lowlink[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(sorted(comp))

        for v in sorted(self.units):
            if v not in index:
                strongconnect(v)
        sccs.reverse()  # Tarjan emits components in reverse topological order
        return sccs

    def simple_cycles(self) -> list[frozenset[str]]:
        """All simple cycles of the unit multigraph, each as its set of streams.

        Suitable for desk-scale graphs (<= ~15 units); enumeration walks
        stream edges and canonicalizes on the smallest unit in the cycle.
        """
        edge_map: dict[str, list[tuple[str, str]]] = {u: [] for u in self.units}
        for producer, consumer, stream in self.edges():
            edge_map[producer].append((consumer, stream))
        cycles: set[frozenset[str]] = set()
        order = sorted(self.units)

        def walk(start: str, node: str, visited: set[str], streams: list[str]):
            for nxt, stream in edge_map[node]:
                if nxt == start:
                    cycles.add(frozenset(streams + [stream]))
                elif nxt not in visited and nxt > start:
                    walk(start, nxt, visited | {nxt}, streams + [stream])

        for start in order:
            walk(start, start, {start}, [])
        return sorted(cycles, key=lambda c: sorted(c))

    def _resolve_tears(self, requested: list[str] | None) -> list[str]:
        cycles = self.simple_cycles()
        if requested is not None:
            requested = sorted(requested)
            for s in requested:
                if s not in self.streams:
                    raise FlowsheetError(f"tear stream {s} does not exist")
            chosen = set(requested)
            remaining = [c for c in cycles if not (c & chosen)]
            if remaining:
                cyc = sorted(remaining[0])
                raise TearSelectionError(
                    f"tear set {requested} leaves a cycle through streams {cyc}")
            return requested
        return select_tears(cycles)

    def _execution_order(self) -> list[str]:
        """Topological order of the unit graph with tear-stream edges removed."""
        tear_set = set(self.tears)
        indegree = {u: 0 for u in self.units}
        adj: dict[str, list[str]] = {u: [] for u in self.units}
        for producer, consumer, stream in self.edges(exclude=tear_set):
            adj[producer].append(consumer)
            indegree[consumer] += 1
        ready = sorted(u for u, d in indegree.items() if d == 0)
        order = []
        while ready:
            u = ready.pop(0)
            order.append(u)
            for v in sorted(set(adj[u])):
                indegree[v] -= adj[u].count(v)
                if indegree[v] == 0:
                    ready.append(v)
            ready.sort()
        if len(order) != len(self.units):
            leftover = sorted(set(self.units) - set(order))
            raise TearSelectionError(
                f"tear set {sorted(tear_set)} leaves a cycle among units {leftover}")
        return order

    # -- sweep ---------------------------------------------------------------

    def bind_models(self, models: dict[str, object]) -> None:
        for name, model in models.items():
            self.units[name].model = model

    def tear_layout(self) -> list[tuple[str, int, int]]:
        """(stream, offset, dim) triples; tears sorted by name, variables in
        stream-spec order."""
        layout = []
        offset = 0
        for name in sorted(self.tears):
            dim = self.streams[name].dimension
            layout.append((name, offset, dim))
            offset += dim
        return layout

    @property
    def tear_dim(self) -> int:
        return sum(self.streams[s].dimension for s in self.tears)

    def tear_variable_names(self) -> list[str]:
        names = []
        for stream, _, _ in self.tear_layout():
            names += [f"{stream}.{v}" for v in self.streams[stream].variables]
        return names

    def sweep(self, state: "SweepState", feeds: dict[str, np.ndarray],
              extras: dict[str, np.ndarray]) -> np.ndarray:
        """Evaluate every unit once in execution order.

        Units consuming a tear stream read the current guess, never the
        value recomputed earlier in the same pass, so the returned tear
        vector is a pure function of the guess (the flowsheet response).
        """
        tear_set = set(self.tears)
        for name, value in feeds.items():
            state.values[name] = np.asarray(value, dtype=np.float64)
        for unit_name in self.order:
            unit = self.units[unit_name]
            if unit.model is None:
                raise UnitEvaluationError(f"unit {unit_name} has no model bound")
            parts = []
            for s in unit.inputs:
                src = state.guesses if s in tear_set else state.values
                if s not in src:
                    raise UnitEvaluationError(
                        f"unit {unit_name}: input stream {s} has no value")
                parts.append(src[s])
            if unit.extra_inputs:
                parts.append(np.atleast_1d(np.asarray(extras[unit_name], dtype=np.float64)))
            x = np.concatenate(parts, axis=-1)
            try:
                y = unit.model.predict(x)
            except Exception as exc:
                raise UnitEvaluationError(f"unit {unit_name} failed: {exc}") from exc
            offset = 0
            for s in unit.outputs:
                dim = self.streams[s].dimension
                value = y[..., offset:offset + dim]
                if not np.all(np.isfinite(value)):
                    raise UnitEvaluationError(
                        f"unit {unit_name}: non-finite value in stream {s}")
                state.values[s] = value
                offset += dim
            if unit.extra_outputs:
                state.extra_outputs[unit_name] = y[..., offset:]
        return np.concatenate([state.values[s] for s in sorted(self.tears)], axis=-1) \
            if self.tears else np.zeros(0)

    def record_sweep(self, tape: Tape, state_vars: dict[str, Var],
                     guess_vars: dict[str, Var], feeds_vars: dict[str, Var],
                     extras: dict[str, np.ndarray],
                     param_vars: dict[str, dict[str, Var]]) -> dict[str, Var]:
        """Tape-recorded version of sweep for differentiable unit models.

        Returns the extra-output Vars per unit; stream Vars are written into
        `state_vars`. `param_vars` maps unit name to that surrogate's
        parameter Vars (absent entries fall back to constants).
        """
        tear_set = set(self.tears)
        for name, var in feeds_vars.items():
            state_vars[name] = var
        extra_out_vars: dict[str, Var] = {}
        for unit_name in self.order:
            unit = self.units[unit_name]
            parts = []
            for s in unit.inputs:
                src = guess_vars if s in tear_set else state_vars
                parts.append(src[s])
            if unit.extra_inputs:
                ex = np.atleast_1d(np.asarray(extras[unit_name], dtype=np.float64))
                lead = parts[0].value.shape[:-1]
                if lead and ex.ndim == 1:
                    ex = np.broadcast_to(ex, lead + ex.shape)
                parts.append(tape.constant(ex))
            x = parts[0] if len(parts) == 1 else ag.concat(parts)
            y = unit.model.record(tape, x, param_vars.get(unit_name))
            offset = 0
            for s in unit.outputs:
                dim = self.streams[s].dimension
                state_vars[s] = ag.vslice(y, offset, offset + dim)
                offset += dim
            if unit.extra_outputs:
                extra_out_vars[unit_name] = ag.vslice(y, offset, y.value.shape[-1])
        return extra_out_vars


class SweepState:
    """Mutable per-solve container: stream values, tear guesses, extra outputs."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.guesses: dict[str, np.ndarray] = {}
        self.extra_outputs: dict[str, np.ndarray] = {}

    def set_tear_vector(self, graph: FlowsheetGraph, x: np.ndarray) -> None:
        for stream, offset, dim in graph.tear_layout():
            self.guesses[stream] = x[..., offset:offset + dim]

    def tear_vector(self, graph: FlowsheetGraph) -> np.ndarray:
        return np.concatenate([self.guesses[s] for s in sorted(graph.tears)], axis=-1)


def select_tears(cycles: list[frozenset[str]]) -> list[str]:
    """Greedy minimal tear set: repeatedly cut the stream on the most
    remaining cycles, ties broken lexicographically by stream name."""
    remaining = list(cycles)
    tears: list[str] = []
    while remaining:
        counts: dict[str, int] = {}
        for cyc in remaining:
            for s in cyc:
                counts[s] = counts.get(s, 0) + 1
        best = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        tears.append(best)
        remaining = [c for c in remaining if best not in c]
    return sorted(tears)


class ResponseFunction:
    """The flowsheet response f over the concatenated tear variables.

    Callable closing over feed values and extra inputs; one call runs a
    full sweep and returns the recomputed tear vector. `jacobian` uses the
    tape when every cycle unit model is recordable, otherwise central
    finite differences.
    """

    def __init__(self, graph: FlowsheetGraph, feeds: dict[str, np.ndarray],
                 extras: dict[str, np.ndarray],
                 scale: np.ndarray | None = None,
                 initial_guess: np.ndarray | None = None):
        if not graph.tears:
            raise FlowsheetError("response function requires at least one tear stream")
        self.graph = graph
        self.feeds = {k: np.asarray(v, dtype=np.float64) for k, v in feeds.items()}
        self.extras = extras
        self.scale = scale
        self.initial_guess = initial_guess
        self.dim = graph.tear_dim

    def __call__(self, x: np.ndarray) -> np.ndarray:
        state = SweepState()
        state.set_tear_vector(self.graph, np.asarray(x, dtype=np.float64))
        return self.graph.sweep(state, self.feeds, self.extras)

    def final_state(self, x: np.ndarray) -> SweepState:
        """One consistency sweep with tears fixed at x; all streams populated."""
        state = SweepState()
        state.set_tear_vector(self.graph, np.asarray(x, dtype=np.float64))
        self.graph.sweep(state, self.feeds, self.extras)
        return state

    def _recordable(self) -> bool:
        return all(hasattr(u.model, "record") for u in self.graph.units.values())

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self._recordable():
            return ag.jacobian(self._record_at, x)
        return self._fd_jacobian(x)

    def _record_at(self, xv: Var) -> Var:
        tape = xv.tape
        guess_vars = {}
        for stream, offset, dim in self.graph.tear_layout():
            guess_vars[stream] = ag.vslice(xv, offset, offset + dim)
        feeds_vars = {k: tape.constant(v) for k, v in self.feeds.items()}
        state_vars: dict[str, Var] = {}
        self.graph.record_sweep(tape, state_vars, guess_vars, feeds_vars,
                                self.extras, {})
        return ag.concat([state_vars[s] for s in sorted(self.graph.tears)])

    def _fd_jacobian(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        jac = np.empty((self.dim, n))
        for j in range(n):
            h = 1e-6 * max(1.0, abs(x[j]))
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            jac[:, j] = (self(xp) - self(xm)) / (2 * h)
        return jac


def subgraph(graph: FlowsheetGraph, unit_names: list[str]) -> FlowsheetGraph:
    """Extract the given units as an independent flowsheet.

    Streams produced outside the selection become feeds; streams consumed
    outside (or not at all) become products. Models are carried over.
    """
    chosen = set(unit_names)
    units = {}
    streams: dict[str, StreamSpec] = {}
    for name in unit_names:
        u = graph.units[name]
        units[name] = UnitNode(name=u.name, kind=u.kind, inputs=list(u.inputs),
                               outputs=list(u.outputs),
                               extra_inputs=list(u.extra_inputs),
                               extra_outputs=list(u.extra_outputs), model=u.model)
        for s in u.inputs + u.outputs:
            streams[s] = graph.streams[s]
    feeds, products = [], []
    for s in streams:
        producer = graph.producer_of.get(s)
        if producer not in chosen:
            feeds.append(s)
        consumers = [c for c in graph.consumers_of[s] if c in chosen]
        if producer in chosen and not consumers:
            products.append(s)
    return FlowsheetGraph(streams, units, sorted(feeds), sorted(products))
