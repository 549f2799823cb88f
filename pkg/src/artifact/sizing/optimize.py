"""Sizing loop: suggest, bias search, evaluate, record."""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..circuit_ir import CircuitError, parse_netlist
from ..sim_driver import SimError, SpiceEngine
from .bias import DEFAULT_STAGES, DEFAULT_WINDOW, SimFail, circuit_sweep, multires_bias_search
from .objective import ObjectiveSpec, evaluate_objective, objective_value
from .params import ParamRange, ParamSpace
from .tpe import TrialRecord, tpe_suggest

log = logging.getLogger(__name__)

BIAS_PARAM = "bias"


class AllTrialsFailed(RuntimeError):
    pass


class BiasFail(SimFail):
    pass


# evaluate(params) -> (objective, metrics, bias); raises BiasFail or SimFail
Evaluator = Callable[[dict], tuple[float, dict, float | None]]


@dataclass
class OptimizeResult:
    best: TrialRecord
    history: list[TrialRecord]
    running_best: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"best": self.best.to_dict(), "history": [t.to_dict() for t in self.history],
                "running_best": self.running_best}


def running_best(history: Sequence[TrialRecord]) -> list[float]:
    out, best = [], -math.inf
    for t in history:
        if t.ok and t.objective > best:
            best = t.objective
        out.append(best)
    return out


def circuit_evaluator(space: ParamSpace, objective: ObjectiveSpec, stages: Sequence[int] = DEFAULT_STAGES,
                      window: tuple[float, float] = DEFAULT_WINDOW, engine: SpiceEngine | None = None) -> Evaluator:
    """Simulator-backed evaluator; a ``bias`` entry in params skips the search."""

    def evaluate(params: dict):
        values = {k: v for k, v in params.items() if k != BIAS_PARAM}
        try:
            circuit = parse_netlist(space.render(values))
        except (CircuitError, KeyError) as exc:
            raise SimFail(f"template did not render: {exc}") from exc
        vdd = objective.supply if objective.supply is not None else circuit.meta.supply_voltage
        if vdd is None:
            raise SimFail("no supply voltage declared")
        if BIAS_PARAM in params:
            bias = float(params[BIAS_PARAM])
        else:
            try:
                found = multires_bias_search(circuit_sweep(circuit, engine=engine), vdd, stages, window)
            except SimError as exc:
                raise BiasFail(str(exc)) from exc
            bias = found.bias
        metrics = evaluate_objective(circuit, bias, objective, engine)
        return objective_value(metrics, objective.target), metrics, bias

    return evaluate


def optimize(space: ParamSpace, objective: ObjectiveSpec = ObjectiveSpec(), budget: int = 1000, seed: int = 0,
             evaluate: Evaluator | None = None, engine: SpiceEngine | None = None,
             stages: Sequence[int] = DEFAULT_STAGES, window: tuple[float, float] = DEFAULT_WINDOW,
             include_bias: bool = False, multivariate: bool = True, n_startup: int | None = None,
             initial_first: bool = True, history_path: str | Path | None = None,
             plot_path: str | Path | None = None) -> OptimizeResult:
    """Run ``budget`` trials and return the best ok one.

    The first quarter of the budget is random start-up. With
    ``initial_first`` the extracted initial values are trial 0, so the
    result is never worse than the unoptimised design.
    """
    if budget < 1:
        raise AllTrialsFailed("a budget of zero trials evaluates nothing")
    if include_bias:
        supply = objective.supply
        if supply is None:
            raise ValueError("include_bias needs ObjectiveSpec.supply")
        lo, hi = window[0] * supply, window[1] * supply
        space = replace(space, ranges=(*space.ranges, ParamRange(BIAS_PARAM, max(lo, 1e-6), hi, kind="bias")))
    evaluate = evaluate or circuit_evaluator(space, objective, stages, window, engine)
    n_startup = budget // 4 if n_startup is None else n_startup
    rng = np.random.default_rng(seed)
    history: list[TrialRecord] = []
    for i in range(budget):
        if i == 0 and initial_first and space.initial and all(n in space.initial for n in space.names):
            params = {n: float(space.initial[n]) for n in space.names}
        else:
            params = tpe_suggest(history, space, rng, n_startup=n_startup, multivariate=multivariate)
        try:
            value, metrics, bias = evaluate(params)
            rec = TrialRecord(i, params, bias, float(value), metrics, "ok")
            if not math.isfinite(rec.objective):
                raise SimFail("non-finite objective")
        except BiasFail as exc:
            rec = TrialRecord(i, params, None, float("nan"), {"error": str(exc)}, "bias_fail")
        except (SimFail, SimError, ValueError) as exc:
            rec = TrialRecord(i, params, None, float("nan"), {"error": str(exc)}, "sim_fail")
        history.append(rec)
        log.debug("trial %d %s %s", i, rec.status, rec.objective)
    ok = [t for t in history if t.ok]
    if not ok:
        raise AllTrialsFailed(f"all {budget} trials failed")
    best = max(ok, key=lambda t: (t.objective, -t.trial_id))
    result = OptimizeResult(best, history, running_best(history))
    if history_path:
        write_history(result, history_path)
    if plot_path:
        Path(plot_path).write_bytes(convergence_png(result, objective.target))
    return result


def write_history(result: OptimizeResult, path: str | Path) -> Path:
    """One JSON trial record per line."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("".join(json.dumps(t.to_dict(), sort_keys=True) + "\n" for t in result.history))
    return p


def convergence_png(result: OptimizeResult, label: str = "objective") -> bytes:
    from matplotlib.backends.backend_agg import FigureCanvasAgg
    from matplotlib.figure import Figure

    fig = Figure(figsize=(7, 4), dpi=100)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    ok = [(t.trial_id, t.objective) for t in result.history if t.ok]
    if ok:
        ax.scatter(*zip(*ok), s=6, alpha=0.4, label="trial")
    best = np.array(result.running_best, float)
    ax.plot(np.arange(len(best)), np.where(np.isfinite(best), best, np.nan), color="C1", label="best so far")
    ax.set_xlabel("Trial")
    ax.set_ylabel(label)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    return buf.getvalue()
