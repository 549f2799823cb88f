"""Author the replay transcripts shipped in artifact/data/transcripts.

The replies are written by hand and served through a scripted transport in
record mode, so every request the design loop makes (including the image
analysis) is captured with its exact hash. Rerun after any change to prompt
text, prompt fixtures, or waveform rendering.
"""

import os
import sys
import tempfile
from pathlib import Path

from artifact.config import RunConfig
from artifact.library import open_library
from artifact.llm_gateway import Gateway, ScriptedTransport, TranscriptStore
from artifact.orchestrator import run_design_task, run_unified
from artifact.tasks import get_task

HERE = Path(__file__).resolve().parent.parent
OUT = HERE / "src" / "artifact" / "data" / "transcripts"

CS_AMP = """\
Design plan:
1. Use one NMOS transistor M1 in common-source configuration with its source grounded.
2. Drive the gate from the input node Vin and take the output from the drain.
3. Connect a 10k load resistor from the drain to the 5 V supply.
4. Keep W/L at about 111 so the device conducts well at a gate bias below 1 V.

```spice
Common-source amplifier with resistive load
* META input=Vin
* META output=Vout
* META supply=Vdd:5
* META type=amplifier
.model nmos_model nmos (level=1 kp=100e-6 vto=0.5)
Vdd Vdd 0 DC 5
M1 Vout Vin 0 0 nmos_model W=5e-6 L=0.045e-6
R1 Vout Vdd 10k
.end
```
"""

RC_OSC_1 = """\
Design plan:
1. Use the Opamp subcircuit from the library as an inverting amplifier referenced to Vref = 2.5 V.
2. Three RC low-pass sections (10k, 10n) in the feedback path give 180 degrees of phase shift.
3. The inverting stage adds another 180 degrees; Rf = 300k against Rin = 10k sets the loop gain.

```spice
RC phase-shift oscillator
* META output=Vout
* META supply=Vdd:5
* META reference=Vref:2.5
* META type=oscillator
Vdd Vdd 0 DC 5
Vref Vref 0 DC 2.5
Xop Vref feedback Vout Opamp
R1 Vout node1 10k
C1 node1 Vref 10n
R2 node1 node2 10k
C2 node2 Vref 10n
R3 node2 feedback 10k
C3 feedback Vref 10n
Rf feedback Vout 300k
Rin feedback Vref 10k
.end
```
"""

ANALYSIS = """\
The output shows a damped oscillation. A few cycles appear right after start-up, but each peak is \
smaller than the one before and the signal quickly settles to a steady DC level near 2.52 V. The \
loop gain is below what is needed to sustain oscillation, or the network does not supply the \
required phase shift at a frequency where the gain is sufficient. The oscillator also has no \
start-up disturbance, so nothing excites the loop once the transient dies out."""

RC_OSC_2 = """\
Corrected design:
1. MODIFIED: the phase-shift network now uses three high-pass sections (1n, 100k) so the op-amp input sees no DC path to the output.
2. MODIFIED: the feedback resistor Rf is raised to 10meg to give enough loop gain for sustained oscillation.
3. ADDED: a 1p capacitor Ckick with an initial condition of 0.1 V kick-starts the loop.

```spice
RC phase-shift oscillator
* META output=Vout
* META supply=Vdd:5
* META reference=Vref:2.5
* META type=oscillator
Vdd Vdd 0 DC 5
Vref Vref 0 DC 2.5
Xop Vref feedback Vout Opamp
* MODIFIED: high-pass ladder instead of low-pass
C1 Vout node1 1n
R1 node1 Vref 100k
C2 node1 node2 1n
R2 node2 Vref 100k
C3 node2 node3 1n
Rin node3 feedback 100k
* MODIFIED: more loop gain
Rf feedback Vout 10meg
* ADDED: start-up kick
Ckick Vout Vref 1p IC=0.1
.end
```
"""

EXTRACTION = """\
The tunable parameters are the width of M1 and the load resistor. The length stays at 0.045 um, so the \
width range spans 1x to 500x of L.

```python
Common-source amplifier with resistive load
* META input=Vin
* META output=Vout
* META supply=Vdd:5
* META type=amplifier
.model nmos_model nmos (level=1 kp=100e-6 vto=0.5)
Vdd Vdd 0 DC 5
M1 Vout Vin 0 0 nmos_model W={w_M1} L=0.045e-6
R1 Vout Vdd {r_load}
.end
param_ranges_definition = {
    'w_M1': {'min': 0.045e-6, 'max': 22.5e-6, 'log': True},
    'r_load': {'min': 5e3, 'max': 20e3, 'log': True},
}
initial_params = {'w_M1': 5e-6, 'r_load': 10e3}
```
"""

# label -> (task id, transcript file, scripted replies, expected verdict, objective)
SCRIPTS = {
    "1": (1, "task01_cs_amp.jsonl", [CS_AMP], "pass", None),
    "23": (23, "task23_rc_oscillator.jsonl", [RC_OSC_1, ANALYSIS, RC_OSC_2], "pass", None),
    "1-fom": (1, "task01_cs_amp_fom.jsonl", [CS_AMP, EXTRACTION], "pass", "fom"),
}


def record(task_id: int, name: str, replies: list[str], expect: str, objective, out: Path) -> None:
    path = out / name
    path.unlink(missing_ok=True)
    store = TranscriptStore(path)
    gw = Gateway(RunConfig().provider(), "record", store, ScriptedTransport(replies),
                 clock=lambda: "2026-01-01T00:00:00+00:00")
    with tempfile.TemporaryDirectory() as tmp:
        cfg = RunConfig(mode="record", transcripts=str(path), workdir=tmp)
        lib = open_library(Path(tmp) / "lib")
        if objective:
            # the trial budget does not change any request, so keep it tiny
            res = run_unified(get_task(task_id), cfg, gw, objective, 2, lib, window=(0.0, 1.0),
                              stages=(20, 200, 200)).design
        else:
            res = run_design_task(get_task(task_id), cfg, gw, lib)
    print(f"task {task_id}: {[a.report.verdict for a in res.attempts]} -> {path.name} ({len(store)} records)")
    if res.final_verdict != expect:
        sys.exit(f"task {task_id} ended {res.final_verdict}, expected {expect}")


def main() -> None:
    os.environ.setdefault("ARTIFACT_API_KEY", "scripted")
    OUT.mkdir(parents=True, exist_ok=True)
    for tid, name, replies, expect, objective in SCRIPTS.values():
        record(tid, name, replies, expect, objective, OUT)


if __name__ == "__main__":
    main()
