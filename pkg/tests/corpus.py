"""Expected verification outcomes for the netlist fixtures.

name -> (task id or None, verdict, failed stage, template ids that must appear)
"""

CORPUS = {
    "amp_good": (1, "pass", None, {"best_bias", "gain_report"}),
    "amp_missing_vout": (1, "fail", "requirement", {"missing_node"}),
    "amp_floating": (1, "fail", "op_point", {"floating_node"}),
    "amp_cutoff": (1, "fail", "op_point", {"cutoff"}),
    "amp_zero_gain": (1, "fail", "dc_sweep", {"gain_too_small", "best_bias"}),
    "osc_decaying": (23, "fail", "function", {"osc_period", "osc_amplitude", "osc_too_small"}),
    "osc_sustained": (23, "pass", None, {"osc_period", "osc_amplitude"}),
    "filter_lowpass": (10, "pass", None, {"filter_cutoff"}),
    "filter_highpass": (11, "pass", None, {"filter_cutoff"}),
    "filter_bandpass": (12, "pass", None, {"filter_cutoff"}),
    "filter_bandstop": (13, "pass", None, {"filter_cutoff"}),
    "inverter": (6, "pass", None, set()),
    "current_source": (8, "pass", None, set()),
    "comparator": (9, "pass", None, set()),
    "opamp": (17, "pass", None, set()),
    "mixer": (19, "pass", None, {"mixer_report"}),
    "integrator": (24, "pass", None, {"shape_report"}),
    "differentiator": (25, "pass", None, {"shape_report"}),
    "adder": (26, "pass", None, set()),
    "subtractor": (27, "pass", None, set()),
    "schmitt": (28, "pass", None, {"hysteresis"}),
}
