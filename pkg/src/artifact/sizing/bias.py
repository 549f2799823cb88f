"""Coarse-to-fine input bias search.

Each stage sweeps a window of bias values and keeps the point whose output
is nearest mid-supply. The next stage sweeps plus/minus one previous step
around that point with its own point count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..circuit_ir import CircuitIR
from ..sim_driver import SimError, SpiceEngine, dc_sweep
from ..testbench import attach_inputs, input_source_name

DEFAULT_STAGES = (20, 200, 2000)
DEFAULT_WINDOW = (0.25, 0.75)

# sweep(start, stop, points) -> (bias values, output values)
Sweep = Callable[[float, float, int], tuple[np.ndarray, np.ndarray]]


class SimFail(SimError):
    pass


@dataclass
class BiasResult:
    bias: float
    vout: float
    sims_used: int
    stages: list[tuple[float, float, int]] = field(default_factory=list)  # (start, stop, points)

    def error(self, supply: float) -> float:
        return abs(self.vout - supply / 2)


def _best(x: np.ndarray, y: np.ndarray, target: float) -> int:
    err = np.abs(y - target)
    err = np.where(np.isfinite(err), err, np.inf)
    best = err.min()
    # ties go to the lowest bias
    return int(np.flatnonzero(err == best)[np.argmin(x[err == best])])


def multires_bias_search(
    sweep: Sweep,
    supply: float,
    stages: Sequence[int] = DEFAULT_STAGES,
    window: tuple[float, float] = DEFAULT_WINDOW,
) -> BiasResult:
    """Locate the input bias whose output is closest to ``supply / 2``.

    window holds fractions of the supply. Simulations are counted as swept
    points, so the total never exceeds ``sum(stages)``.
    """
    stages = [int(s) for s in stages]
    if not stages or min(stages) < 2:
        raise ValueError("stages must be a nonempty list of point counts >= 2")
    if not 0 <= window[0] < window[1]:
        raise ValueError("window must satisfy 0 <= low < high")
    target = supply / 2
    lo_lim, hi_lim = window[0] * supply, window[1] * supply
    lo, hi = lo_lim, hi_lim
    best_x = best_y = None
    used = 0
    spans = []
    for i, n in enumerate(stages):
        try:
            x, y = sweep(lo, hi, n)
        except SimError as exc:
            if best_x is None:
                raise SimFail(f"bias sweep failed: {exc}") from exc
            break
        x, y = np.asarray(x, float), np.asarray(y, float)
        used += n
        spans.append((lo, hi, n))
        k = _best(x, y, target)
        cand_x, cand_y = float(x[k]), float(y[k])
        if best_x is None:
            best_x, best_y = cand_x, cand_y
        else:
            e_new, e_old = abs(cand_y - target), abs(best_y - target)
            if e_new < e_old or (e_new == e_old and cand_x < best_x):
                best_x, best_y = cand_x, cand_y
        step = (hi - lo) / (n - 1)
        lo, hi = max(lo_lim, best_x - step), min(hi_lim, best_x + step)
        if hi <= lo:
            break
    if best_x is None or not np.isfinite(best_y):
        raise SimFail("no converged bias sweep")
    return BiasResult(best_x, best_y, used, spans)


def circuit_sweep(circuit: CircuitIR, input_net: str | None = None, output: str | None = None,
                  engine: SpiceEngine | None = None) -> Sweep:
    """A Sweep that DC-sweeps the circuit's input source with the engine."""
    net = input_net or circuit.meta.inputs[0]
    out = output or circuit.meta.output
    tb = attach_inputs(circuit, ac=False)
    source = input_source_name(tb, net)

    def sweep(start: float, stop: float, points: int):
        series = dc_sweep(tb, source, start, stop, points, engine=engine)
        return series.axis, np.real(series.get(out))

    return sweep
