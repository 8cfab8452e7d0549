"""Monte Carlo studies: RMSE vs SNR and RMSE vs transmission count.

Every trial draws fresh amplitude phases, pilots, RIS profiles and noise
from a substream derived deterministically from (master_seed, trial index),
so sweeps reproduce bitwise regardless of the execution schedule.  The same
trial index reuses the same draws across SNR points (common random
numbers); only the transmit power changes along the SNR axis.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .bounds import SingularFim, compute_bounds
from .estimators import (
    InsufficientTransmissions,
    RankDeficient,
    default_search_region,
    ml_estimate,
    rml_estimate,
)
from .model import ScenarioConfig, default_precoding, geometry_to_params, synthesize


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A full experiment: base scenario plus sweep axes and trial budget."""

    base: ScenarioConfig
    snr_grid_db: tuple = (-15.0, -10.0, -5.0, 0.0, 5.0, 10.0)
    g_grid: tuple = (2, 3, 4, 5, 6, 7)
    nr_grid: tuple = (20, 40)
    trials: int = 200
    master_seed: int = 1
    gsweep_snr_db: float = -5.0   # fixed SNR for the transmission-count sweep
    workers: int = 1              # process count for trial execution
    grid_points: int = 50         # relaxed-search lattice resolution
    search_halfwidth: float | None = None  # [m]; None derives from geometry
    disable_noise: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        for name in ("snr_grid_db", "g_grid", "nr_grid"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must be non-empty")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class TrialRecord:
    """One estimator's outcome on one Monte Carlo trial."""

    trial: int
    snr_db: float
    estimator: str   # "RML" or "ML"
    px_hat: float
    py_hat: float
    delta_hat: float
    p_err: float     # [m]
    delta_err: float  # [s]
    converged: bool
    cost: float


@dataclass(frozen=True)
class SweepResult:
    """Aggregated errors and bounds at one sweep-axis point."""

    axis: float          # snr_db, or transmission count for the G sweep
    estimator: str
    rmse_p: float        # over all trials with an estimate [m]
    rmse_delta: float    # [s]
    peb: float           # [m]
    ceb: float           # [s]
    trials_used: int     # trials that produced an estimate
    flagged: int         # trials marked non-converged
    rmse_p_converged: float      # diagnostics over converged trials only
    rmse_delta_converged: float
    n_ris: int | None = None
    status: str = "ok"


def snr_to_power(scenario, snr_db):
    """Transmit power giving the requested direct-path SNR.

    SNR is defined on the direct path as P*rho_bm^2/sigma2, so the power
    solves P = sigma2 * 10^(SNR/10) / rho_bm^2 with the free-space
    direct-path amplitude from the scenario geometry.
    """
    d_bm = float(np.linalg.norm(scenario.p - scenario.q))
    rho_bm = scenario.wavelength / (4.0 * np.pi * d_bm)
    return scenario.sigma2 * 10.0 ** (snr_db / 10.0) / rho_bm**2


def _trial_rngs(master_seed, trial_idx):
    seq = np.random.SeedSequence(master_seed, spawn_key=(trial_idx,))
    phase, precode, noise = seq.spawn(3)
    return (np.random.default_rng(phase), np.random.default_rng(precode),
            np.random.default_rng(noise))


def _search_region(config, scenario):
    if config.search_halfwidth is None:
        return default_search_region(scenario)
    center = 0.5 * (scenario.q + scenario.r)
    half = config.search_halfwidth
    return ((center[0] - half, center[0] + half),
            (center[1] - half, center[1] + half))


def _failed_record(trial_idx, snr_db, estimator):
    return TrialRecord(trial=trial_idx, snr_db=snr_db, estimator=estimator,
                       px_hat=math.nan, py_hat=math.nan, delta_hat=math.nan,
                       p_err=math.nan, delta_err=math.nan,
                       converged=False, cost=math.nan)


def run_trial(config, snr_db, trial_idx, scenario=None):
    """One Monte Carlo trial: synthesize, run both estimators, record errors.

    Returns (rml_record, ml_record).  Estimator failures (rank deficiency,
    degenerate geometry) become NaN-valued flagged records rather than
    exceptions.
    """
    if scenario is None:
        scenario = config.base
    scenario = replace(scenario, power=snr_to_power(scenario, snr_db))
    rng_phase, rng_precode, rng_noise = _trial_rngs(config.master_seed, trial_idx)
    params, known = geometry_to_params(scenario, rng=rng_phase)
    precoding = default_precoding(scenario, known, rng=rng_precode)
    obs = synthesize(scenario, precoding, params=params, known=known,
                     rng=rng_noise, add_noise=not config.disable_noise)
    region = _search_region(config, scenario)
    p_true = scenario.p
    delta_true = scenario.delta

    try:
        rml = rml_estimate(obs, search_region=region, grid_points=config.grid_points)
    except (RankDeficient, InsufficientTransmissions):
        return (_failed_record(trial_idx, snr_db, "RML"),
                _failed_record(trial_idx, snr_db, "ML"))

    rml_rec = TrialRecord(
        trial=trial_idx, snr_db=snr_db, estimator="RML",
        px_hat=float(rml.p_hat[0]), py_hat=float(rml.p_hat[1]),
        delta_hat=rml.delta_hat,
        p_err=float(np.linalg.norm(rml.p_hat - p_true)),
        delta_err=abs(rml.delta_hat - delta_true),
        converged=not (rml.ambiguous_minimum or rml.on_boundary),
        cost=rml.cost,
    )
    ml = ml_estimate(obs, rml.p_hat, rml.delta_hat)
    ml_rec = TrialRecord(
        trial=trial_idx, snr_db=snr_db, estimator="ML",
        px_hat=float(ml.p_hat[0]), py_hat=float(ml.p_hat[1]),
        delta_hat=ml.delta_hat,
        p_err=float(np.linalg.norm(ml.p_hat - p_true)),
        delta_err=abs(ml.delta_hat - delta_true),
        converged=ml.converged,
        cost=ml.cost,
    )
    return rml_rec, ml_rec


def _run_trial_star(args):
    config, snr_db, trial_idx, scenario = args
    return run_trial(config, snr_db, trial_idx, scenario=scenario)


def _run_trials(config, snr_db, scenario, progress=None):
    tasks = [(config, snr_db, i, scenario) for i in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            pairs = list(pool.map(_run_trial_star, tasks, chunksize=4))
    else:
        pairs = [_run_trial_star(t) for t in tasks]
    if progress is not None:
        progress(snr_db, len(pairs))
    records = []
    for rml_rec, ml_rec in pairs:
        records.append(rml_rec)
        records.append(ml_rec)
    return records


def _rmse(values):
    vals = np.asarray(values, dtype=float)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return math.nan
    return float(np.sqrt(np.mean(vals**2)))


def _bounds_at(config, snr_db, scenario):
    """Bounds for one axis point, on the trial-0 phase/precoding draw."""
    scenario = replace(scenario, power=snr_to_power(scenario, snr_db))
    rng_phase, rng_precode, _ = _trial_rngs(config.master_seed, 0)
    params, known = geometry_to_params(scenario, rng=rng_phase)
    precoding = default_precoding(scenario, known, rng=rng_precode)
    return compute_bounds(scenario, precoding, params=params, known=known)


def summarize(records, axis, peb, ceb, n_ris=None, status="ok"):
    """Collapse trial records at one axis point into per-estimator rows."""
    out = []
    for tag in ("RML", "ML"):
        recs = [r for r in records if r.estimator == tag]
        conv = [r for r in recs if r.converged]
        used = sum(1 for r in recs if math.isfinite(r.p_err))
        out.append(SweepResult(
            axis=axis, estimator=tag,
            rmse_p=_rmse([r.p_err for r in recs]),
            rmse_delta=_rmse([r.delta_err for r in recs]),
            peb=peb, ceb=ceb,
            trials_used=used,
            flagged=sum(1 for r in recs if not r.converged),
            rmse_p_converged=_rmse([r.p_err for r in conv]),
            rmse_delta_converged=_rmse([r.delta_err for r in conv]),
            n_ris=n_ris, status=status,
        ))
    return out


def sweep_snr(config, progress=None):
    """RMSE of both estimators against SNR, with PEB/CEB per point.

    Returns (summaries, trial_records).
    """
    summaries = []
    all_records = []
    for snr_db in config.snr_grid_db:
        records = _run_trials(config, float(snr_db), config.base, progress=progress)
        all_records.extend(records)
        try:
            rep = _bounds_at(config, float(snr_db), config.base)
            peb, ceb = rep.peb, rep.ceb
            status = "ok"
        except SingularFim:
            peb, ceb, status = math.nan, math.nan, "singular-fim"
        summaries.extend(summarize(records, float(snr_db), peb, ceb,
                                   n_ris=config.base.n_ris, status=status))
    return summaries, all_records


def sweep_g(config, progress=None):
    """RMSE against transmission count for each RIS size, at a fixed SNR.

    Transmission counts below 2 produce status rows instead of estimates
    (the relaxed estimator's pseudo-inverse needs at least two).
    Returns (summaries, trial_records).
    """
    snr_db = float(config.gsweep_snr_db)
    summaries = []
    all_records = []
    for n_ris in config.nr_grid:
        for g in config.g_grid:
            scenario = replace(config.base, n_tx=int(g), n_ris=int(n_ris))
            if g < 2:
                for tag in ("RML", "ML"):
                    summaries.append(SweepResult(
                        axis=float(g), estimator=tag, rmse_p=math.nan,
                        rmse_delta=math.nan, peb=math.nan, ceb=math.nan,
                        trials_used=0, flagged=0,
                        rmse_p_converged=math.nan, rmse_delta_converged=math.nan,
                        n_ris=int(n_ris), status="insufficient-transmissions"))
                continue
            records = _run_trials(config, snr_db, scenario, progress=progress)
            all_records.extend(records)
            try:
                rep = _bounds_at(config, snr_db, scenario)
                peb, ceb = rep.peb, rep.ceb
                status = "ok"
            except SingularFim:
                peb, ceb, status = math.nan, math.nan, "singular-fim"
            summaries.extend(summarize(records, float(g), peb, ceb,
                                       n_ris=int(n_ris), status=status))
    return summaries, all_records
