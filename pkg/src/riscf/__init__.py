"""Cooperative beamforming for RIS-aided cell-free massive MIMO."""

from .ao import AoOptions, RunMetrics, quantize_ris, run_baseline, run_cbf, run_pcf
from .objective import AuxState, BeamState, compute_sinr, compute_wsr, eval_fq, update_aux
from .scenario import ChannelSet, Scenario, build_scenario, dbm_to_watts, desk_config
from .selection import SelectionState, ncr

__all__ = [
    "AoOptions", "AuxState", "BeamState", "ChannelSet", "RunMetrics", "Scenario",
    "SelectionState", "build_scenario", "compute_sinr", "compute_wsr", "dbm_to_watts",
    "desk_config", "eval_fq", "ncr", "quantize_ris", "run_baseline", "run_cbf", "run_pcf",
    "update_aux",
]
