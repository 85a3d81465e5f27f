"""Two-stage surrogate training.

Stage 1 fits each unit surrogate independently on its own input/output
table (full-batch Adam on normalized MSE). Stage 2 fine-tunes all
surrogates jointly by backpropagating a stream-reconstruction loss through
K unrolled tear-stream solve sweeps plus one consistency sweep, cycling
through every K in the schedule each epoch.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tape, Var
from .flowsheet import FlowsheetGraph, ResponseFunction, UnitEvaluationError
from .nn import SIGMA_FLOOR, MlpSurrogate, unit_seed
from .plantgen import Dataset, Plant, extract_unit_table, unit_io_columns
from .solvers import SolveConfig, solve_cycles

logger = logging.getLogger(__name__)


class TrainingError(Exception):
    pass


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam over a dict of named parameter arrays."""

    lr: float = 2.0e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]) -> None:
    """One in-place bias-corrected Adam update."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise TrainingError(f"gradient shape {g.shape} != parameter "
                                f"shape {p.shape} for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# r^2 reporting
# ---------------------------------------------------------------------------


def solver_scale(stats) -> np.ndarray:
    """Residual scale for tear variables: training-data sigma with a
    relative floor of 1e-6 |mu|.

    The floor keeps pinned variables (sigma at the 1e-8 normalization
    floor) from amplifying single-ulp float jitter above any reasonable
    solver tolerance; it is far below sigma for every live variable.
    """
    return np.maximum(stats.sigma, 1e-6 * np.maximum(1.0, np.abs(stats.mu)))


def r2_per_variable(pred: np.ndarray, true: np.ndarray,
                    pinned: np.ndarray | None = None) -> np.ndarray:
    """Coefficient of determination per column; pinned columns get NaN."""
    sse = ((pred - true) ** 2).sum(axis=0)
    sst = ((true - true.mean(axis=0)) ** 2).sum(axis=0)
    if pinned is None:
        pinned = sst < (SIGMA_FLOOR ** 2) * len(true)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = 1.0 - sse / sst
    return np.where(pinned, np.nan, r2)


def aggregate_r2(pred: np.ndarray, true: np.ndarray,
                 pinned: np.ndarray | None = None) -> float:
    """Mean r^2 over non-pinned variables (NaN if all pinned)."""
    r2 = r2_per_variable(pred, true, pinned)
    valid = ~np.isnan(r2)
    return float(r2[valid].mean()) if valid.any() else float("nan")


# ---------------------------------------------------------------------------
# Stage 1: independent per-unit fitting
# ---------------------------------------------------------------------------


@dataclass
class UnitReport:
    unit: str
    kind: str
    r2: float
    mse: float
    pinned_outputs: int
    epochs: int


def make_surrogates(plant: Plant, dataset: Dataset, seed: int) -> dict[str, MlpSurrogate]:
    """Seeded surrogates with normalization stats from the training split."""
    models = {}
    for name in plant.graph.units:
        x_cols, y_cols = unit_io_columns(plant, name)
        models[name] = MlpSurrogate.initialize(
            len(x_cols), len(y_cols),
            dataset.norm_stats(x_cols), dataset.norm_stats(y_cols),
            seed=unit_seed(seed, name))
    return models


def train_unit(model: MlpSurrogate, x: np.ndarray, y: np.ndarray,
               epochs: int, lr: float) -> float:
    """Full-batch Adam on normalized MSE; returns the final training loss."""
    xn = model.input_norm.normalize(x)
    yn = model.output_norm.normalize(y)
    adam = AdamState(lr=lr)
    loss_value = float("nan")
    for epoch in range(epochs):
        tape = Tape()
        pvars = model.make_param_vars(tape)
        xv = tape.constant(xn)
        target = tape.constant(yn)
        h1 = ag.softplus(ag.affine(xv, pvars["w1"], pvars["b1"]))
        h2 = ag.softplus(ag.affine(h1, pvars["w2"], pvars["b2"]))
        z = ag.affine(h2, pvars["w_out"], pvars["b_out"]) + (xv @ pvars["w_skip"])
        loss = ag.mean(ag.square(z - target))
        loss_value = float(loss.value)
        if not np.isfinite(loss_value):
            raise TrainingError(f"NaN loss at epoch {epoch}")
        tape.backward(loss)
        grads = {name: tape.grad(v) for name, v in pvars.items()}
        adam_step(adam, model.params, grads)
    return loss_value


def train_single_units(plant: Plant, dataset: Dataset, epochs: int = 20000,
                       lr: float = 2.0e-5, seed: int = 0, jobs: int = 1,
                       ) -> tuple[dict[str, MlpSurrogate], list[UnitReport]]:
    """Stage 1: fit every unit surrogate on its own extracted table."""
    models = make_surrogates(plant, dataset, seed)

    def fit(name: str) -> UnitReport:
        x_train, y_train = extract_unit_table(dataset, plant, name, split="train")
        try:
            train_unit(models[name], x_train, y_train, epochs, lr)
        except TrainingError as exc:
            raise TrainingError(f"unit {name}: {exc}") from exc
        report = evaluate_unit(models[name], plant, dataset, name, epochs)
        logger.info("unit %-12s r2=%.4f mse=%.3e", name, report.r2, report.mse)
        return report

    names = list(plant.graph.units)
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(fit, names))
    else:
        reports = [fit(name) for name in names]
    return models, reports


def evaluate_unit(model: MlpSurrogate, plant: Plant, dataset: Dataset,
                  name: str, epochs: int = 0) -> UnitReport:
    """Single-unit r^2 on held-out test rows (true inputs in, true outputs out)."""
    x_test, y_test = extract_unit_table(dataset, plant, name, split="test")
    pred = model.predict(x_test)
    pinned = model.output_norm.pinned
    r2 = aggregate_r2(pred, y_test, pinned)
    scaled = (pred - y_test) / model.output_norm.sigma
    mse = float((scaled[:, ~pinned] ** 2).mean()) if (~pinned).any() else 0.0
    return UnitReport(unit=name, kind=plant.graph.units[name].kind, r2=r2,
                      mse=mse, pinned_outputs=int(pinned.sum()), epochs=epochs)


def write_unit_report(reports: list[UnitReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "kind", "r2", "scaled_mse", "pinned_outputs"])
        for r in reports:
            writer.writerow([r.unit, r.kind, f"{r.r2:.6f}", f"{r.mse:.6e}",
                             r.pinned_outputs])


# ---------------------------------------------------------------------------
# Stage 2: fine-tuning through the unrolled solver
# ---------------------------------------------------------------------------


@dataclass
class FinetuneSchedule:
    """Fine-tuning configuration.

    k_set lists the total-solve-iteration counts cycled through every
    epoch; loss covers every stream (and unit extra outputs) after the
    final consistency sweep plus tear streams at each intermediate sweep.

    The training-time solver defaults to direct substitution, whose unroll
    is exact (gradients flow through every chained sweep). The other three
    methods are available for method-matrix experiments: their iterates are
    chained on the tape with the update coefficients (Wegstein q factors,
    Newton / BFGS step matrices from the batch-mean linearization) frozen
    as constants, so gradients still flow through every response
    evaluation but not through the update algebra itself.
    """

    k_set: tuple[int, ...] = tuple(range(11))
    epochs: int = 500
    lr: float = 2.0e-5
    method: str = "direct"
    frozen_units: tuple[str, ...] = ()
    newton_damping: float = 1.0
    wegstein_bounds: tuple[float, float] = (-5.0, 0.9)

    def __post_init__(self):
        if not self.k_set or any(k < 0 for k in self.k_set):
            raise TrainingError("k_set must be non-empty with entries >= 0")
        if self.method not in ("direct", "wegstein", "newton", "bfgs"):
            raise TrainingError(f"unknown training solve method {self.method!r}")


@dataclass
class FinetuneContext:
    """Precomputed batch tensors shared by every fine-tuning epoch."""

    feeds: dict[str, np.ndarray]
    extras: dict[str, np.ndarray]
    guess: np.ndarray
    stream_targets: dict[str, np.ndarray]
    stream_inv_sigma: dict[str, np.ndarray]
    extra_targets: dict[str, np.ndarray]
    extra_inv_sigma: dict[str, np.ndarray]
    tear_targets: dict[str, np.ndarray]
    tear_sigma: np.ndarray = None
    mean_feeds: dict[str, np.ndarray] = None
    mean_extras: dict[str, np.ndarray] = None


def _finetune_context(plant: Plant, dataset: Dataset, graph: FlowsheetGraph) -> FinetuneContext:
    train = "train"
    feeds = {s: dataset.stream_values(s, graph.streams[s], train) for s in graph.feeds}
    extras = {}
    for name, unit in graph.units.items():
        if unit.extra_inputs:
            cols = [f"{name}.{n}" for n in unit.extra_inputs]
            extras[name] = dataset.values(cols, train)
        else:
            extras[name] = np.zeros(0)
    stream_targets, stream_inv_sigma = {}, {}
    predicted = [s for s in graph.streams if s not in graph.feeds]
    for s in predicted:
        vals = dataset.stream_values(s, graph.streams[s], train)
        stats = dataset.norm_stats([f"{s}.{v}" for v in graph.streams[s].variables])
        stream_targets[s] = vals
        inv = 1.0 / stats.sigma
        inv[stats.pinned] = 0.0  # pinned variables carry no training signal
        stream_inv_sigma[s] = inv
    extra_targets, extra_inv_sigma = {}, {}
    for name, unit in graph.units.items():
        if not unit.extra_outputs:
            continue
        cols = [f"{name}.{n}" for n in unit.extra_outputs]
        stats = dataset.norm_stats(cols)
        extra_targets[name] = dataset.values(cols, train)
        inv = 1.0 / stats.sigma
        inv[stats.pinned] = 0.0
        extra_inv_sigma[name] = inv
    tear_names = graph.tear_variable_names()
    tear_stats = dataset.norm_stats(tear_names)
    n_rows = len(dataset.train_rows)
    guess = np.broadcast_to(tear_stats.mu, (n_rows, len(tear_names))).copy()
    tear_targets = {s: stream_targets[s] for s in graph.tears}
    mean_feeds = {s: v.mean(axis=0) for s, v in feeds.items()}
    mean_extras = {u: (v.mean(axis=0) if v.ndim == 2 else v)
                   for u, v in extras.items()}
    return FinetuneContext(feeds=feeds, extras=extras, guess=guess,
                           stream_targets=stream_targets,
                           stream_inv_sigma=stream_inv_sigma,
                           extra_targets=extra_targets,
                           extra_inv_sigma=extra_inv_sigma,
                           tear_targets=tear_targets,
                           tear_sigma=tear_stats.sigma.copy(),
                           mean_feeds=mean_feeds, mean_extras=mean_extras)


def _scaled_sq_terms(tape: Tape, var: Var, target: np.ndarray,
                     inv_sigma: np.ndarray) -> Var:
    diff = (var - tape.constant(target)) * tape.constant(inv_sigma)
    return ag.mean(ag.square(diff))


class _UnrollUpdate:
    """Next-guess rule for the unrolled training solver.

    Direct substitution chains the recomputed tear Vars straight through
    (exact unroll). Wegstein chains q * x + (1 - q) * f(x) with the
    per-component secant factors frozen as constants. Newton and BFGS
    apply a step matrix built from the batch-mean linearization, also
    frozen, so every response evaluation stays on the gradient path while
    the update algebra itself is treated as data.
    """

    def __init__(self, method: str, graph: FlowsheetGraph, ctx: FinetuneContext,
                 schedule: "FinetuneSchedule"):
        self.method = method
        self.graph = graph
        self.ctx = ctx
        self.schedule = schedule
        self.prev_x: np.ndarray | None = None
        self.prev_f: np.ndarray | None = None
        n = ctx.guess.shape[1]
        self.h_inv = np.eye(n)
        self.prev_grad: np.ndarray | None = None

    def _mean_jacobian_scaled(self, x_mean: np.ndarray) -> np.ndarray:
        response = ResponseFunction(self.graph, self.ctx.mean_feeds,
                                    self.ctx.mean_extras)
        s = self.ctx.tear_sigma
        return np.asarray(response.jacobian(x_mean)) * (s[None, :] / s[:, None])

    def next_guess(self, tape: Tape, x_var: Var, f_var: Var, i: int) -> Var:
        x_np, f_np = x_var.value, f_var.value
        s = self.ctx.tear_sigma
        if self.method == "direct":
            nxt = f_var
        elif self.method == "wegstein":
            if i == 0 or self.prev_x is None:
                nxt = f_var
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    a = (f_np - self.prev_f) / (x_np - self.prev_x)
                    q = a / (a - 1.0)
                q = np.where(np.isfinite(q), q, 0.0)
                q = np.clip(q, *self.schedule.wegstein_bounds)
                nxt = (x_var * tape.constant(q)) + (f_var * tape.constant(1.0 - q))
        elif self.method == "newton":
            js = self._mean_jacobian_scaled(x_np.mean(axis=0)) - np.eye(len(s))
            step_mat = np.linalg.solve(js, np.diag(1.0 / s)).T * s[None, :]
            delta = ag.matmul(f_var - x_var, tape.constant(step_mat))
            nxt = x_var - ag.scale(delta, self.schedule.newton_damping)
        else:  # bfgs
            js = self._mean_jacobian_scaled(x_np.mean(axis=0)) - np.eye(len(s))
            resid_mean = ((f_np - x_np) / s).mean(axis=0)
            grad_mean = js.T @ resid_mean
            if self.prev_grad is not None and self.prev_x is not None:
                sk = (x_np.mean(axis=0) - self.prev_x.mean(axis=0)) / s
                yk = grad_mean - self.prev_grad
                sy = float(sk @ yk)
                if sy > 1e-12:
                    rho = 1.0 / sy
                    left = np.eye(len(s)) - rho * np.outer(sk, yk)
                    self.h_inv = left @ self.h_inv @ left.T + rho * np.outer(sk, sk)
            self.prev_grad = grad_mean
            # per-row step -H (Js)^T r_hat, mapped back to raw units
            step_mat = (np.diag(1.0 / s) @ js @ self.h_inv.T * s[None, :])
            delta = ag.matmul(f_var - x_var, tape.constant(step_mat))
            nxt = x_var - delta
        self.prev_x, self.prev_f = x_np, f_np
        return nxt


def _record_k_sweeps(tape: Tape, graph: FlowsheetGraph, ctx: FinetuneContext,
                     k: int, param_vars: dict[str, dict[str, Var]],
                     schedule: "FinetuneSchedule") -> Var:
    """Record k solve sweeps plus the consistency sweep; return the loss.

    Loss terms: scaled squared error on the recomputed tear streams after
    each of the k solve sweeps, and on every stream plus unit extra outputs
    after the final sweep. Terms are averaged; the result is later scaled
    by 1/len(k_set) for the schedule normalization.
    """
    feeds_vars = {s: tape.constant(v) for s, v in ctx.feeds.items()}
    extras = {name: ctx.extras[name] for name in graph.units}
    layout = graph.tear_layout()
    guess_var = tape.constant(ctx.guess)
    update = _UnrollUpdate(schedule.method, graph, ctx, schedule)
    terms: list[Var] = []

    def split_guess(var: Var) -> dict[str, Var]:
        return {stream: ag.vslice(var, off, off + dim)
                for stream, off, dim in layout}

    for sweep_idx in range(k):
        state_vars: dict[str, Var] = {}
        graph.record_sweep(tape, state_vars, split_guess(guess_var), feeds_vars,
                           extras, param_vars)
        for s in graph.tears:
            terms.append(_scaled_sq_terms(tape, state_vars[s],
                                          ctx.tear_targets[s],
                                          ctx.stream_inv_sigma[s]))
        f_var = ag.concat([state_vars[s] for s in sorted(graph.tears)])
        guess_var = update.next_guess(tape, guess_var, f_var, sweep_idx)
    state_vars = {}
    extra_vars = graph.record_sweep(tape, state_vars, split_guess(guess_var),
                                    feeds_vars, extras, param_vars)
    for s, target in ctx.stream_targets.items():
        terms.append(_scaled_sq_terms(tape, state_vars[s], target,
                                      ctx.stream_inv_sigma[s]))
    for name, target in ctx.extra_targets.items():
        terms.append(_scaled_sq_terms(tape, extra_vars[name], target,
                                      ctx.extra_inv_sigma[name]))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return ag.scale(total, 1.0 / len(terms))


@dataclass
class FinetuneLogEntry:
    epoch: int
    k: int
    loss: float
    grad_norm: float


def finetune(plant: Plant, dataset: Dataset, models: dict[str, MlpSurrogate],
             schedule: FinetuneSchedule,
             graph: FlowsheetGraph | None = None,
             ) -> tuple[dict[str, MlpSurrogate], list[FinetuneLogEntry]]:
    """Stage 2: end-to-end training through the unrolled cycle solver.

    Returns fresh fine-tuned copies (frozen units keep their exact arrays)
    and the per-(epoch, K) training log. One Adam update is applied per
    schedule entry per epoch; the loss is normalized by the number of
    recorded terms and by the schedule length, a constant that Adam's
    scale invariance makes immaterial.
    """
    graph = graph if graph is not None else plant.graph
    for name in schedule.frozen_units:
        if name not in graph.units:
            raise TrainingError(f"frozen unit {name} not in graph")
    models = {name: m.copy() for name, m in models.items()}
    graph.bind_models(models)
    ctx = _finetune_context(plant, dataset, graph)
    trainable = [n for n in graph.units if n not in schedule.frozen_units]
    adam = AdamState(lr=schedule.lr)
    log: list[FinetuneLogEntry] = []
    halved = False
    schedule_scale = 1.0 / len(schedule.k_set)
    for epoch in range(schedule.epochs):
        for k in schedule.k_set:
            tape = Tape()
            param_vars = {name: models[name].make_param_vars(tape)
                          for name in graph.units}
            loss = ag.scale(_record_k_sweeps(tape, graph, ctx, k, param_vars,
                                             schedule),
                            schedule_scale)
            loss_value = float(loss.value)
            if not np.isfinite(loss_value):
                if halved:
                    raise TrainingError(
                        f"non-finite loss recurred at epoch {epoch}, K={k}")
                adam.lr *= 0.5
                halved = True
                logger.warning("non-finite loss at epoch %d K=%d; halving lr", epoch, k)
                continue
            tape.backward(loss)
            flat_params: dict[str, np.ndarray] = {}
            flat_grads: dict[str, np.ndarray] = {}
            for name in trainable:
                for pname, pvar in param_vars[name].items():
                    flat_params[f"{name}/{pname}"] = models[name].params[pname]
                    flat_grads[f"{name}/{pname}"] = tape.grad(pvar)
            gnorm = float(np.sqrt(sum(float((g * g).sum())
                                      for g in flat_grads.values())))
            adam_step(adam, flat_params, flat_grads)
            log.append(FinetuneLogEntry(epoch=epoch, k=k, loss=loss_value,
                                        grad_norm=gnorm))
    return models, log


def write_finetune_log(log: list[FinetuneLogEntry], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "k", "loss", "grad_norm"])
        for e in log:
            writer.writerow([e.epoch, e.k, f"{e.loss:.10e}", f"{e.grad_norm:.10e}"])


# ---------------------------------------------------------------------------
# Evaluation: solve the surrogate flowsheet over test rows
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    """Metrics for one (method, K) evaluation over a dataset split."""

    method: str
    k: int
    product_errors: np.ndarray  # per-row mean scaled |error| on the product stream
    percentiles: tuple[float, float, float]
    stream_r2: dict[str, float]
    end_to_end_r2: float
    failures: int
    parity: dict[str, np.ndarray]  # variable -> (n, 2) true/pred


def evaluate(plant: Plant, dataset: Dataset, models: dict[str, MlpSurrogate],
             cfg: SolveConfig, k: int, split: str = "test",
             graph: FlowsheetGraph | None = None,
             product_stream: str = "product") -> EvalResult:
    """Per-row cycle solve with at most k iterations, then score the
    product stream and every predicted stream against the true snapshot."""
    graph = graph if graph is not None else plant.graph
    graph.bind_models({name: models[name] for name in graph.units})
    tear_names = graph.tear_variable_names()
    tear_stats = dataset.norm_stats(tear_names)
    x0 = tear_stats.mu.copy()
    cfg = SolveConfig(method=cfg.method, max_iterations=max(k, 1),
                      tolerance=cfg.tolerance, scale=solver_scale(tear_stats),
                      wegstein_bounds=cfg.wegstein_bounds,
                      newton_damping=cfg.newton_damping,
                      bfgs_armijo_c1=cfg.bfgs_armijo_c1,
                      bfgs_max_halvings=cfg.bfgs_max_halvings)
    rows_mask = dataset.split == split
    n_rows = int(rows_mask.sum())
    predicted = [s for s in graph.streams if s not in graph.feeds]
    stream_stats = {s: dataset.norm_stats([f"{s}.{v}" for v in graph.streams[s].variables])
                    for s in predicted}
    true_vals = {s: dataset.stream_values(s, graph.streams[s], split) for s in predicted}
    preds = {s: np.full_like(true_vals[s], np.nan) for s in predicted}
    failures = 0
    feeds_all = {s: dataset.stream_values(s, graph.streams[s], split) for s in graph.feeds}
    extras_all = {}
    for name, unit in graph.units.items():
        if unit.extra_inputs:
            cols = [f"{name}.{n}" for n in unit.extra_inputs]
            extras_all[name] = dataset.values(cols, split)
        else:
            extras_all[name] = np.zeros((n_rows, 0))
    for i in range(n_rows):
        feeds = {s: feeds_all[s][i] for s in graph.feeds}
        extras = {name: extras_all[name][i] for name in graph.units}
        try:
            if k == 0:
                response = ResponseFunction(graph, feeds, extras, scale=cfg.scale)
                state = response.final_state(x0)
            else:
                state, trace = solve_cycles(graph, feeds, extras, cfg,
                                            initial_guess=x0.copy())
                if trace.failed:
                    failures += 1
            for s in predicted:
                preds[s][i] = state.values[s]
        except UnitEvaluationError:
            failures += 1
            # row keeps NaN predictions; scored as worst case below
    product_stats = stream_stats[product_stream]
    not_pinned = ~product_stats.pinned
    diff = (preds[product_stream] - true_vals[product_stream]) / product_stats.sigma
    with np.errstate(invalid="ignore"):
        row_err = np.abs(diff[:, not_pinned]).mean(axis=1)
    row_err = np.where(np.isfinite(row_err), row_err, np.inf)
    pct = tuple(float(np.percentile(row_err, q)) for q in (25, 50, 75))
    stream_r2 = {}
    for s in predicted:
        ok = np.all(np.isfinite(preds[s]), axis=1)
        if ok.sum() < 2:
            stream_r2[s] = float("-inf")
            continue
        stream_r2[s] = aggregate_r2(preds[s][ok], true_vals[s][ok],
                                    stream_stats[s].pinned)
    parity = {}
    for j, v in enumerate(graph.streams[product_stream].variables):
        if product_stats.pinned[j]:
            continue
        parity[v] = np.column_stack([true_vals[product_stream][:, j],
                                     preds[product_stream][:, j]])
    return EvalResult(method=cfg.method, k=k, product_errors=row_err,
                      percentiles=pct, stream_r2=stream_r2,
                      end_to_end_r2=stream_r2[product_stream],
                      failures=failures, parity=parity)
