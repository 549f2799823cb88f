"""Gain, GBW, power and figure of merit from one AC + operating-point run."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..circuit_ir import AnalysisRequest, CircuitIR
from ..sim_driver import SimError, SpiceEngine, simulate
from ..testbench import add_load, attach_inputs, supply_source
from ..verification import AC_PPD, AC_RANGE, ac_gain_bandwidth
from .bias import SimFail

TARGETS = ("gain", "gbw", "fom")
DEFAULT_LOAD = 100e-12


@dataclass(frozen=True)
class ObjectiveSpec:
    target: str = "fom"
    load_capacitance: float = DEFAULT_LOAD  # F
    supply: float | None = None  # V; None takes the circuit's supply META

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"objective target must be one of {TARGETS}")
        if not self.load_capacitance > 0:
            raise ValueError("load capacitance must be positive")


def gain_db(gain: float) -> float:
    return 20.0 * math.log10(abs(gain))


def figure_of_merit(gbw_mhz: float, cl_pf: float, power_uw: float) -> float:
    """GBW x C_L / Power in MHz*pF/uW."""
    if not power_uw > 0:
        raise ValueError("figure of merit needs a positive power")
    return gbw_mhz * cl_pf / power_uw


def objective_value(metrics: dict, target: str) -> float:
    return {"gain": metrics["gain_db"], "gbw": metrics["gbw_mhz"], "fom": metrics["fom"]}[target]


def evaluate_objective(circuit: CircuitIR, bias: float, objective: ObjectiveSpec,
                       engine: SpiceEngine | None = None, workdir=None) -> dict:
    """Metrics at ``bias`` with C_L on the output.

    gain is read at the lowest AC frequency, bandwidth where the magnitude
    falls 3 dB below it, power from the supply source at the operating point.
    """
    roles = circuit.meta
    if not roles.inputs:
        raise ValueError("objective evaluation needs an input node")
    vdd = objective.supply if objective.supply is not None else roles.supply_voltage
    src = supply_source(circuit)
    if vdd is None or src is None:
        raise ValueError("objective evaluation needs a supply source declared in META")
    tb = attach_inputs(circuit, {roles.inputs[0]: bias})
    tb = add_load(tb, roles.output, objective.load_capacitance)
    analyses = [AnalysisRequest.op(), AnalysisRequest.ac_dec(AC_RANGE[0], AC_RANGE[1], AC_PPD)]
    try:
        res = simulate(tb, analyses, workdir, engine)
    except SimError as exc:
        raise SimFail(str(exc)) from exc
    if not res.converged or "ac1" not in res.series:
        raise SimFail("AC analysis did not complete")
    gain, g_db, bw = ac_gain_bandwidth(res.series["ac1"], roles.output)
    current = abs(res.op_point.get(f"i({src.refdes.lower()})", float("nan")))
    power_uw = vdd * current * 1e6
    gbw_mhz = gain * bw / 1e6
    metrics = {
        "gain_db": g_db,
        "bandwidth_hz": bw,
        "gbw_mhz": gbw_mhz,
        "power_uw": power_uw,
        "fom": figure_of_merit(gbw_mhz, objective.load_capacitance * 1e12, power_uw) if power_uw > 0 else float("nan"),
    }
    if not all(np.isfinite(v) for v in metrics.values()):
        raise SimFail(f"non-finite metrics {metrics}")
    return metrics
