"""Rebuild the seed tool library shipped in artifact/data/library.

The op-amp is measured by the verification pipeline (task 17 profile) with
the subcircuit instantiated in a plain open-loop testbench.
"""

import shutil
import sys
from pathlib import Path

from artifact.circuit_ir import parse_netlist, parse_subcircuits
from artifact.library import Provenance, ToolEntry, ToolKey, ToolLibrary, ToolValue, make_usage
from artifact.tasks import get_task
from artifact.verification import run_pipeline

OPAMP = """\
.subckt Opamp Vinp Vinn Vout
.model nmos_op nmos (level=1 kp=100e-6 vto=0.5 lambda=0.01)
.model pmos_op pmos (level=1 kp=50e-6 vto=-0.5 lambda=0.01)
Vdda vdda 0 DC 5
Rb1 vdda vbias 400k
Rb2 vbias 0 100k
M5 tail vbias 0 0 nmos_op W=3.6e-6 L=0.045e-6
M1 mirror Vinp tail 0 nmos_op W=4.5e-6 L=0.045e-6
M2 Vout Vinn tail 0 nmos_op W=4.5e-6 L=0.045e-6
M3 mirror mirror vdda vdda pmos_op W=9e-6 L=0.045e-6
M4 Vout mirror vdda vdda pmos_op W=9e-6 L=0.045e-6
.ends Opamp
"""

TESTBENCH = """\
Open-loop op-amp testbench
* META input=Vinp,Vinn
* META output=Vout
* META supply=Vdd:5
* META type=opamp
Vdd Vdd 0 DC 5
Xop Vinp Vinn Vout Opamp
Rl Vout 0 10meg
""" + OPAMP + ".end\n"

NOTES = """\
Bias both inputs (Vinp and Vinn) at 2.5 V. Return feedback networks and AC paths to a 2.5 V reference source (for example Vref Vref 0 DC 2.5), not to ground.
The subcircuit has its own internal 5 V supply."""


def main(out: Path) -> None:
    report = run_pipeline(parse_netlist(TESTBENCH), get_task(17), render=False)
    if not report.passed:
        sys.exit("seed op-amp failed verification: " + "; ".join(report.messages()))
    m = report.measurements
    # no capacitance in the model, so only the gain is meaningful
    specs = {"gain_db": round(float(m["gain_db"]), 2)}
    sub = parse_subcircuits(OPAMP)["Opamp"]
    entry = ToolEntry(
        ToolKey("Single-stage op-amp with active current mirror loads", get_task(17).circuit_type, specs),
        ToolValue(sub, OPAMP, make_usage(sub, ("the non-inverting input", "the inverting input", "the output"), NOTES)),
        Provenance(17, "seed", ""),
    )
    shutil.rmtree(out, ignore_errors=True)
    print(ToolLibrary(out).add_tool(entry, report), specs)
    (out / ".lock").unlink(missing_ok=True)


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/artifact/data/library")
