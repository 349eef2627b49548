"""Sweep runner: scheme x axis value x seed grid with CSV output.

Configs use the ``key = value`` format of :mod:`riscf.kvconfig`::

    axis = p_max_dbm
    values = [-10, 0, 10]
    seeds = [0, 1, 2]
    schemes = ["cbf", "cbf_1bit", "fd_bf", "pcf_rla:0.75"]
    scenario.B = 6
    scenario.K = 4

Keys prefixed with ``scenario.`` override :class:`~riscf.scenario.Scenario`
fields; ``scenario_file`` names a separate scenario config.
"""

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ao import AoOptions, run_baseline, run_cbf, run_pcf
from .kvconfig import load_kv, parse_kv
from .scenario import build_scenario, dbm_to_watts

log = logging.getLogger(__name__)

AXES = ("p_max_dbm", "n_ris", "iterations", "cdf")
SCHEMES = ("cbf", "cbf_1bit", "cbf_2bit", "random_ris", "no_ris", "fd_bf", "pcf_rla", "pcf_random")
FIELDS = ("scheme", "axis", "axis_value", "seed", "wsr", "per_user_rates", "ncr", "iterations",
          "wall_time", "status")


@dataclass
class ExperimentConfig:
    axis: str
    values: list
    seeds: list
    schemes: list
    scenario: dict = field(default_factory=dict)
    output: str = None
    I_max: int = 50
    t_max: int = 20
    timing: bool = False

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown axis {self.axis!r}; expected one of {AXES}")
        for name in ("values", "seeds", "schemes"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be nonempty")
        for s in self.schemes:
            parse_scheme(s)

    @classmethod
    def from_mapping(cls, mapping, base_dir=None):
        mapping = dict(mapping)
        scenario = {}
        ref = mapping.pop("scenario_file", None)
        if ref is not None:
            path = Path(ref)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            scenario.update(load_kv(path))
        for key in [k for k in mapping if k.startswith("scenario.")]:
            scenario[key.split(".", 1)[1]] = mapping.pop(key)
        known = {f for f in cls.__dataclass_fields__ if f != "scenario"}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(scenario=scenario, **mapping)

    @classmethod
    def from_text(cls, text, base_dir=None):
        return cls.from_mapping(parse_kv(text), base_dir)

    @classmethod
    def load(cls, path):
        path = Path(path)
        return cls.from_text(path.read_text(), base_dir=path.parent)


def default_power_sweep(output=None):
    """Transmit-power sweep on the default six-BS, three-RIS, four-user network."""
    return ExperimentConfig(
        axis="p_max_dbm", values=[-20, -10, 0, 10, 20], seeds=list(range(10)),
        schemes=["fd_bf", "cbf", "cbf_2bit", "cbf_1bit", "random_ris", "no_ris",
                 "pcf_rla:0.75", "pcf_random:0.75"],
        scenario=dict(B=6, R=3, K=4), output=output)


def parse_scheme(name):
    """``"pcf_rla:0.75"`` -> ``("pcf_rla", 0.75)``; plain names get ``None``."""
    base, _, arg = str(name).partition(":")
    if base not in SCHEMES:
        raise ValueError(f"unknown scheme {name!r}")
    if base.startswith("pcf"):
        alpha = float(arg) if arg else 1.0
        if not 0 < alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1] in {name!r}")
        return base, alpha
    if arg:
        raise ValueError(f"scheme {base!r} takes no argument")
    return base, None


@dataclass
class ResultRow:
    scheme: str
    axis: str
    axis_value: float
    seed: int
    wsr: float
    per_user_rates: list
    ncr: float
    iterations: int
    wall_time: float = None
    status: str = "ok"

    @property
    def ok(self):
        return self.status == "ok"


def _apply_axis(config, value):
    scenario = dict(config.scenario)
    opts = AoOptions(I_max=config.I_max, t_max=config.t_max)
    if config.axis == "p_max_dbm":
        scenario["P_b"] = float(dbm_to_watts(value))
    elif config.axis == "n_ris":
        scenario["M"] = int(value)
        scenario.pop("ris_shape", None)
    elif config.axis == "iterations":
        opts = AoOptions(I_max=int(value), t_max=config.t_max, early_stop=False)
    elif config.axis == "cdf":
        scenario["K"] = int(value)
        scenario.pop("omega", None)
        scenario.pop("user_positions", None)
    return scenario, opts


def run_scheme(channels, scn, scheme, opts):
    """Run one scheme; returns ``RunMetrics``."""
    base, alpha = parse_scheme(scheme)
    if base == "cbf":
        return run_cbf(channels, scn, opts)[2]
    if base == "cbf_1bit":
        return run_baseline(channels, scn, "quantized_ris", opts, bits=1)
    if base == "cbf_2bit":
        return run_baseline(channels, scn, "quantized_ris", opts, bits=2)
    if base in ("random_ris", "no_ris", "fd_bf"):
        return run_baseline(channels, scn, base, opts)
    if base == "pcf_rla":
        return run_pcf(channels, scn, alpha, opts)[3]
    return run_baseline(channels, scn, "random_selection", opts, alpha=alpha)


def run_row(config, scheme, value, seed):
    """Execute one grid cell; failures become a row with an error status."""
    start = time.perf_counter()
    try:
        scenario, opts = _apply_axis(config, value)
        scn, channels = build_scenario(scenario, seed=seed)
        m = run_scheme(channels, scn, scheme, opts)
        status = "ok"
        wsr, rates, ratio, iters = m.wsr, list(m.per_user_rates), m.ncr, m.iterations
        if not wsr >= 0:
            raise ValueError(f"invalid WSR {wsr!r}")
    except Exception as exc:  # sweep isolation: report and move on
        log.warning("row %s/%s/%s failed: %s", scheme, value, seed, exc)
        status = f"error: {type(exc).__name__}: {exc}"
        wsr, rates, ratio, iters = float("nan"), [], float("nan"), 0
    wall = time.perf_counter() - start if config.timing else None
    return ResultRow(str(scheme), config.axis, value, int(seed), wsr, rates, ratio, iters,
                     wall, status)


def grid(config):
    return [(s, v, seed) for s in config.schemes for v in config.values for seed in config.seeds]


def run_experiment(config, threads=1, output=None):
    """Run the full grid; rows come back (and are written) in grid order."""
    cells = grid(config)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda c: run_row(config, *c), cells))
    else:
        rows = [run_row(config, *c) for c in cells]
    output = output or config.output
    if output:
        write_csv(rows, output)
    return rows


# -- CSV -------------------------------------------------------------------------

def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return "%.6g" % float(value)


def row_to_record(row):
    return [row.scheme, row.axis, _fmt(row.axis_value), str(row.seed), _fmt(row.wsr),
            ";".join(_fmt(r) for r in row.per_user_rates), _fmt(row.ncr), str(row.iterations),
            _fmt(row.wall_time), row.status]


def write_csv(rows, path):
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
            writer.writerow(FIELDS)
            for row in rows:
                writer.writerow(row_to_record(row))
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def _num(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


def read_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != FIELDS:
            raise ValueError(f"unexpected header {header!r}")
        for rec in reader:
            scheme, axis, value, seed, wsr, rates, ratio, iters, wall, status = rec
            rows.append(ResultRow(scheme, axis, _num(value), int(seed), float(wsr),
                                  [float(r) for r in rates.split(";")] if rates else [],
                                  float(ratio), int(iters), float(wall) if wall else None,
                                  status))
    return rows


# -- CDF -------------------------------------------------------------------------

@dataclass
class CdfTable:
    values: np.ndarray  # sorted samples
    probs: np.ndarray  # empirical CDF at each sample
    p5: float
    median: float


def percentile_nearest_rank(values, p):
    """Nearest-rank percentile: the ``ceil(p/100 N)``-th smallest sample (p in (0, 100])."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise ValueError("percentile of an empty sample")
    if not 0 < p <= 100:
        raise ValueError(f"p must lie in (0, 100], got {p!r}")
    rank = max(1, math.ceil(p / 100 * x.size))
    return float(x[rank - 1])


def compute_cdf(per_user_rates):
    """Empirical CDF with the 5th percentile (95%-likely rate) and the median."""
    x = np.sort(np.asarray(list(per_user_rates), dtype=float).ravel())
    if x.size == 0:
        raise ValueError("cannot build a CDF from an empty list")
    probs = np.arange(1, x.size + 1) / x.size
    return CdfTable(x, probs, percentile_nearest_rank(x, 5), percentile_nearest_rank(x, 50))
