"""Monte Carlo experiments over schemes, regularizers and SNR points.

Every ``(snr index, trial index)`` pair gets its own channel seed, shared by
all schemes so that differences between rows come from the schemes alone.
Output files depend only on the configuration and scenario contents, not on
how many worker processes ran the trials.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import metrics
from .errors import ConfigError, PrecodingError
from .metrics import TrialResult, db
from .obbf import (build_sigma_hat, build_sigma_instantaneous, bfn_coarse, design_bfn, effective_eig,
                   precoder_Tm)
from .ogbf import ogbf_alternating
from .regularization import RegularizationInputs, gamma_closed_form, sigma_diagonal, solve_gamma
from .scenario import (ExpectedGramians, Scenario, build_scenario, cluster_block, estimate_expected_gramians,
                       load_scenario_config, mismatched, sample_channel, single_gateway_view)

log = logging.getLogger(__name__)

SCHEMES = ("ogbf", "ogbf-single", "obbf-adaptive", "obbf-nulling", "obbf-coarse", "obbf-prefixed")
REGULARIZERS = ("lemma1-expected", "lemma1-instantaneous", "closed-form", "intra-cluster")
CSV_COLUMNS = ("scheme", "regularizer", "snr_db", "trial", "cluster_or_user_scope", "metric", "value")
CONFIG_KEYS = ("scenario_path", "schemes", "snr_db_list", "trials", "master_seed", "regularizer",
               "output_path", "calibration_samples")
NO_REGULARIZER = "none"


@dataclass(frozen=True)
class ExperimentConfig:
    scenario_path: Path
    schemes: tuple[str, ...]
    snr_db_list: tuple[float, ...]
    trials: int
    master_seed: int
    regularizer: tuple[str, ...]
    output_path: Path
    calibration_samples: int = 200

    def __post_init__(self):
        if not self.schemes:
            raise ConfigError("schemes non-empty")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ConfigError(f"schemes: unknown scheme(s) {bad}; expected one of {list(SCHEMES)}")
        if not self.snr_db_list:
            raise ConfigError("snr_db_list non-empty")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.regularizer:
            raise ConfigError("regularizer non-empty")
        bad = [r for r in self.regularizer if r not in REGULARIZERS]
        if bad:
            raise ConfigError(f"regularizer: unknown value(s) {bad}; expected one of {list(REGULARIZERS)}")
        if self.calibration_samples < 1:
            raise ConfigError("calibration_samples must be >= 1")

    @property
    def summary_path(self) -> Path:
        return self.output_path.with_suffix(".summary.json")


def _require(data: dict, key: str, kind, what: str):
    if key not in data:
        raise ConfigError(f"missing field {key!r}")
    value = data[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ConfigError(f"field {key!r} must be {what}, got {value!r}")
    return value


def config_from_mapping(data: dict, base_dir: Path | str = ".") -> ExperimentConfig:
    base_dir = Path(base_dir)
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
    schemes = _require(data, "schemes", list, "a list of scheme names")
    snrs = _require(data, "snr_db_list", list, "a list of numbers")
    if any(not isinstance(s, (int, float)) or isinstance(s, bool) for s in snrs):
        raise ConfigError("field 'snr_db_list' must contain numbers only")
    reg = data.get("regularizer", "lemma1-expected")
    regs = (reg,) if isinstance(reg, str) else tuple(reg) if isinstance(reg, list) else None
    if regs is None:
        raise ConfigError(f"field 'regularizer' must be a string or list, got {reg!r}")
    return ExperimentConfig(
        scenario_path=base_dir / _require(data, "scenario_path", str, "a path string"),
        schemes=tuple(schemes),
        snr_db_list=tuple(float(s) for s in snrs),
        trials=_require(data, "trials", int, "an integer"),
        master_seed=_require(data, "master_seed", int, "an integer"),
        regularizer=regs,
        output_path=base_dir / _require(data, "output_path", str, "a path string"),
        calibration_samples=data.get("calibration_samples", 200),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Read an experiment configuration; relative paths resolve against its directory."""
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    try:
        return config_from_mapping(data, path.parent)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def trial_seed(master_seed: int, snr_index: int, trial_index: int) -> int:
    """Stable 64-bit seed for one ``(snr, trial)`` cell."""
    raw = struct.pack("<qqq", int(master_seed), int(snr_index), int(trial_index))
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")


def _derived_seed(master_seed: int, tag: str) -> int:
    raw = struct.pack("<q", int(master_seed)) + tag.encode()
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")


@dataclass(frozen=True, eq=False)
class ExperimentContext:
    """Everything fixed across trials: layout, statistics and the pre-fixed BFN."""

    scenario: Scenario
    gramians: ExpectedGramians
    prefixed_B: tuple[np.ndarray, ...]


def prefixed_beamformers(scenario: Scenario) -> tuple[np.ndarray, ...]:
    """Baseline BFN designed for a mismatched roll-off (``alpha`` doubled)."""
    G = estimate_expected_gramians(mismatched(scenario))
    return tuple(bfn_coarse(G[m, m], scenario.k) for m in range(scenario.M))


def prepare_context(scenario: Scenario, need_prefixed: bool = True) -> ExperimentContext:
    gram = estimate_expected_gramians(scenario)
    pre = prefixed_beamformers(scenario) if need_prefixed else ()
    return ExperimentContext(scenario=scenario, gramians=gram, prefixed_B=pre)


def _gamma(regularizer: str, B, H_mm, lam, U, k, P_m, Sigma_hat, Sigma_inst):
    if regularizer == "intra-cluster":
        return k / P_m
    if regularizer == "closed-form":
        return gamma_closed_form(B, Sigma_hat, k, P_m)
    Sigma = Sigma_hat if regularizer == "lemma1-expected" else Sigma_inst
    return solve_gamma(RegularizationInputs(lam=lam, sigma=sigma_diagonal(U, B, Sigma), k=k, P_m=P_m))


def _obbf_trial(ch, scen, gramians, mode, regularizer, prefixed):
    bfn = design_bfn(mode, ch, scen, gramians=gramians, prefixed=list(prefixed) if prefixed else None)
    F, D, t, gam = [], [], [], []
    for m in range(ch.M):
        try:
            H_mm = cluster_block(ch, m, m)
            B = bfn.B[m]
            lam, U = effective_eig(B, H_mm)
            Sigma_hat = build_sigma_hat(gramians, m) if regularizer in ("lemma1-expected", "closed-form") else None
            Sigma_inst = build_sigma_instantaneous(ch, m) if regularizer == "lemma1-instantaneous" else None
            g = _gamma(regularizer, B, H_mm, lam, U, ch.k, scen.P_m[m], Sigma_hat, Sigma_inst)
            T, tm = precoder_Tm(B, H_mm, g, scen.P_m[m])
        except PrecodingError as exc:
            raise type(exc)(f"cluster {m}: {exc}") from exc
        F.append(B @ T)
        D.append(np.full(ch.k, 1.0 / np.sqrt(tm)))
        t.append(tm)
        gam.append(g)
    sir = metrics.sir_no_precoding(ch, bfn.B, scen.P_m)
    return F, D, np.array(t), np.array(gam), sir


def run_trial(scenario: Scenario, gramians: ExpectedGramians | None, scheme: str, regularizer: str, P: float,
              trial_seed: int, prefixed: Sequence[np.ndarray] | None = None, snr_db: float = math.nan,
              trial: int = 0) -> TrialResult:
    """Simulate one scheme on one channel draw and evaluate every metric."""
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    scen = scenario.with_power(P)
    ch = sample_channel(scen, trial_seed)
    try:
        if scheme.startswith("ogbf"):
            view = single_gateway_view(ch) if scheme == "ogbf-single" else ch
            P_m = np.array([scen.P]) if scheme == "ogbf-single" else scen.P_m
            state = ogbf_alternating(view, P_m)
            total, per = metrics.smse(view, state.F, state.D)
            sinr = metrics.sinr_per_user(view, state.F)
            return TrialResult(scheme=scheme, regularizer=NO_REGULARIZER, snr_db=snr_db, seed=trial_seed,
                               smse=total, trace_Em=per, sinr_db=db(sinr), nu=np.array(state.nu), trial=trial,
                               diagnostics={"iterations": state.iterations})
        if regularizer not in REGULARIZERS:
            raise ConfigError(f"unknown regularizer {regularizer!r}")
        if scheme == "obbf-prefixed" and prefixed is None:
            prefixed = prefixed_beamformers(scenario)
        F, D, t, gam, sir = _obbf_trial(ch, scen, gramians, scheme.split("-", 1)[1], regularizer, prefixed)
    except PrecodingError as exc:
        raise type(exc)(f"{scheme} (seed {trial_seed}): {exc}") from exc
    total, per = metrics.smse(ch, F, D)
    sinr = metrics.sinr_per_user(ch, F)
    return TrialResult(scheme=scheme, regularizer=regularizer, snr_db=snr_db, seed=trial_seed, smse=total,
                       trace_Em=per, sinr_db=db(sinr), t=t, gamma=gam, sir_db=db(sir), trial=trial)


# ---------------------------------------------------------------------------
# experiment driver

@dataclass
class ResultTable:
    trials: list[TrialResult]
    aggregates: list[dict[str, Any]] = field(default_factory=list)
    power: dict[float, float] = field(default_factory=dict)
    scheme_order: tuple[str, ...] = SCHEMES
    scenario: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class _Task:
    scheme: str
    regularizer: str
    snr_index: int
    snr_db: float
    trial: int
    P: float
    seed: int


_CONTEXT: ExperimentContext | None = None


def _init_worker(ctx: ExperimentContext) -> None:
    global _CONTEXT
    _CONTEXT = ctx


def _run_task(task: _Task) -> TrialResult:
    ctx = _CONTEXT
    return run_trial(ctx.scenario, ctx.gramians, task.scheme, task.regularizer, task.P, task.seed,
                     prefixed=ctx.prefixed_B, snr_db=task.snr_db, trial=task.trial)


def _tasks(cfg: ExperimentConfig, power: Sequence[float]) -> list[_Task]:
    out = []
    for scheme in cfg.schemes:
        regs = (NO_REGULARIZER,) if scheme.startswith("ogbf") else cfg.regularizer
        for reg in regs:
            for i, snr in enumerate(cfg.snr_db_list):
                for trial in range(cfg.trials):
                    out.append(_Task(scheme, reg, i, snr, trial, power[i], trial_seed(cfg.master_seed, i, trial)))
    return out


def _sort_key(order: Sequence[str], snrs: Sequence[float]):
    def key(r: TrialResult):
        return (order.index(r.scheme), r.regularizer, snrs.index(r.snr_db), r.trial)
    return key


def aggregate(trials: Iterable[TrialResult], order: Sequence[str]) -> list[dict[str, Any]]:
    """Mean SINR (two conventions), SMSE and receiver-scaling dispersion per group."""
    groups: dict[tuple, list[TrialResult]] = {}
    for r in trials:
        groups.setdefault((r.scheme, r.regularizer, r.snr_db), []).append(r)
    rows = []
    for (scheme, reg, snr), rs in sorted(groups.items(), key=lambda kv: (order.index(kv[0][0]), kv[0][1], kv[0][2])):
        sinr_db = np.concatenate([r.sinr_db for r in rs])
        lin = 10.0 ** (sinr_db / 10.0)
        disp = [r.tm_dispersion for r in rs if r.t is not None]
        rows.append({
            "scheme": scheme, "regularizer": reg, "snr_db": snr, "trials": len(rs),
            "mean_sinr_db": float(db(np.mean(lin))),
            "mean_sinr_db_of_db": float(np.mean(sinr_db)),
            "mean_smse": float(np.mean([r.smse for r in rs])),
            "mean_tm_dispersion": float(np.mean(disp)) if disp else None,
            "max_tm_dispersion": float(np.max(disp)) if disp else None,
        })
    return rows


def run_experiment(cfg: ExperimentConfig, workers: int = 1, write: bool = True) -> ResultTable:
    """Run every ``(scheme, regularizer, snr, trial)`` cell of the experiment.

    On a failing trial the rows finished so far are written before the
    error propagates.
    """
    scenario = build_scenario(load_scenario_config(cfg.scenario_path))
    ctx = prepare_context(scenario, need_prefixed="obbf-prefixed" in cfg.schemes)
    ratio = metrics.mean_trace_ratio(scenario, cfg.calibration_samples, _derived_seed(cfg.master_seed, "calibration"))
    power = [10.0 ** (s / 10.0) * scenario.K / ratio for s in cfg.snr_db_list]
    tasks = _tasks(cfg, power)
    log.info("running %d trial cells on %d worker(s)", len(tasks), workers)

    results: list[TrialResult] = []
    failure: BaseException | None = None
    if workers <= 1:
        _init_worker(ctx)
        for task in tasks:
            try:
                results.append(_run_task(task))
            except PrecodingError as exc:
                failure = exc
                break
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ctx,)) as pool:
            futures = [pool.submit(_run_task, t) for t in tasks]
            for fut in futures:
                try:
                    results.append(fut.result())
                except PrecodingError as exc:
                    failure = exc
                    for f in futures:
                        f.cancel()
                    break

    results.sort(key=_sort_key(cfg.schemes, cfg.snr_db_list))
    table = ResultTable(trials=results, aggregates=aggregate(results, cfg.schemes),
                        power=dict(zip(cfg.snr_db_list, power)), scheme_order=cfg.schemes,
                        scenario={"N": scenario.N, "M": scenario.M, "k": scenario.k, "n": scenario.n,
                                  "k_bar": scenario.k_bar, "K": scenario.K})
    if write:
        write_results(table, cfg.output_path)
    if failure is not None:
        raise failure
    return table


# ---------------------------------------------------------------------------
# persistence

def _fmt(x) -> str:
    return repr(float(x))


def result_rows(r: TrialResult) -> list[tuple]:
    """CSV rows for one trial (without the scheme/regularizer/snr/trial prefix)."""
    rows = [("all", "smse", r.smse)]
    rows += [(f"cluster:{m}", "trace_Em", v) for m, v in enumerate(r.trace_Em)]
    rows += [(f"user:{u}", "sinr_db", v) for u, v in enumerate(r.sinr_db)]
    if r.nu is not None:
        rows += [(f"cluster:{m}", "nu", v) for m, v in enumerate(r.nu)]
    if r.t is not None:
        rows += [(f"cluster:{m}", "t", v) for m, v in enumerate(r.t)]
        rows += [(f"cluster:{m}", "gamma", v) for m, v in enumerate(r.gamma)]
        rows.append(("all", "tm_dispersion", r.tm_dispersion))
    if r.sir_db is not None:
        rows += [(f"user:{u}", "sir_db", v) for u, v in enumerate(r.sir_db)]
    return rows


AGGREGATE_METRICS = ("mean_sinr_db", "mean_sinr_db_of_db", "mean_smse", "mean_tm_dispersion")


def csv_text(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in table.trials:
        for scope, metric, value in result_rows(r):
            w.writerow((r.scheme, r.regularizer, _fmt(r.snr_db), r.trial, scope, metric, _fmt(value)))
    for a in table.aggregates:
        for metric in AGGREGATE_METRICS:
            if a[metric] is not None:
                w.writerow((a["scheme"], a["regularizer"], _fmt(a["snr_db"]), "aggregate", "all", metric,
                            _fmt(a[metric])))
    return buf.getvalue()


def summary_dict(table: ResultTable) -> dict[str, Any]:
    curves: dict[str, dict[str, list]] = {}
    for a in table.aggregates:
        c = curves.setdefault(f"{a['scheme']}/{a['regularizer']}", {
            "scheme": a["scheme"], "regularizer": a["regularizer"], "snr_db": [], "mean_sinr_db": [],
            "mean_sinr_db_of_db": [], "mean_smse": [], "mean_tm_dispersion": []})
        for key in ("snr_db", "mean_sinr_db", "mean_sinr_db_of_db", "mean_smse", "mean_tm_dispersion"):
            c[key].append(a[key])
    return {
        "scenario": table.scenario,
        "power": [{"snr_db": s, "P": p} for s, p in table.power.items()],
        "curves": curves,
        "trial_count": len(table.trials),
    }


def write_results(table: ResultTable, path: str | Path) -> None:
    """Write the long-format CSV and a JSON summary next to it."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(csv_text(table))
        write_summary(summary_dict(table), path.with_suffix(".summary.json"))
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def write_summary(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def read_summary(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def read_results(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ConfigError(f"{path}: unexpected CSV header {reader.fieldnames}")
        return list(reader)
