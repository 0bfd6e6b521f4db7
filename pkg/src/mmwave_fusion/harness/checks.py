"""Scenario and filter diagnostics: LoS outages, NEES Monte Carlo, assessment-gate efficacy."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import chi2

from ..fiveg import HeuristicClassifier, PropagationModel, SbrPath, FivegError, rtt_to_distance, sbr_fix
from ..fusion import (STATE_DIM, Assessment, FilterState, assess_sbr_fix, exclude_measurements, initial_state,
                      motion_bounds, nees, run_filter)
from ..sim.simulate import trace_epochs
from .experiment import ExperimentConfig, build_truth, init_seed, simulate_from_config


def serving_station(scene, ue_xy):
    return min(scene.base_stations, key=lambda b: np.hypot(*(b.xy - np.asarray(ue_xy)[:2])))


def los_outages(scene, truth, records, min_duration: float = 0.0):
    """Runs of 5G epochs where the nearest BS has no LoS path: list of (start, duration) in s.

    Duration counts epochs, so a run of k epochs at 1 Hz lasts k seconds.
    """
    by_t = defaultdict(list)
    for r in records:
        by_t[r.t].append(r)
    times = np.array(sorted(by_t))
    if len(times) < 2:
        return []
    step = float(np.median(np.diff(times)))
    dark = []
    for t in times:
        bs = serving_station(scene, truth.enu[int(truth.index_at(t))])
        dark.append(not any(r.bs_id == bs.id and r.bounces == 0 for r in by_t[t]))
    runs, start = [], None
    for t, d in zip(list(times) + [None], dark + [False]):
        if d and start is None:
            start = t
        elif not d and start is not None:
            runs.append((float(start), float(t - start) if t is not None else float(times[-1] - start + step)))
            start = None
    return [r for r in runs if r[1] >= min_duration]


@dataclass
class NeesResult:
    t: np.ndarray
    mean_nees: np.ndarray  # Monte-Carlo average at each epoch
    average: float  # time average of mean_nees
    band: tuple
    runs: int

    @property
    def within_band(self) -> bool:
        return self.band[0] <= self.average <= self.band[1]

    @property
    def fraction_in_band(self) -> float:
        return float(np.mean((self.mean_nees >= self.band[0]) & (self.mean_nees <= self.band[1])))


def nees_band(runs: int, dof: int = STATE_DIM, level: float = 0.95):
    """Two-sided chi-square band for a Monte-Carlo average of ``runs`` NEES values."""
    a = (1 - level) / 2
    return chi2.ppf(a, dof * runs) / runs, chi2.ppf(1 - a, dof * runs) / runs


def nees_monte_carlo(cfg: ExperimentConfig, runs: int = 50, first_seed: int = 0) -> NeesResult:
    """Average NEES over ``runs`` seeds; the channel is traced once and re-corrupted per seed."""
    scene = cfg.scene()
    truth = build_truth(cfg, scene)
    s = cfg["sensors"]
    records = trace_epochs(scene, truth, float(s["fiveg_rate"]), max_bounces=int(s["max_bounces"]),
                           max_range=float(s["max_range"]), model=PropagationModel(carrier_hz=scene.carrier_hz))
    fc = cfg.filter_config()
    ini = cfg["init"]
    total = None
    for k in range(runs):
        seed = first_seed + k
        c = cfg.with_overrides(seed=seed)
        sim = simulate_from_config(c, scene, truth, records)
        init = initial_state(truth.states[0], float(ini["sigma_pos"]), float(ini["sigma_vel"]),
                             np.radians(ini["sigma_att_deg"]), seed=init_seed(seed))
        out = run_filter(sim.imu, sim.odometer, sim.channel, scene.base_stations, scene.origin, fc, init)
        e = np.array([nees(out.x[i], out.P[i], truth.states[i]) for i in range(len(out.t))])
        total = e if total is None else total + e
    mean = total / runs
    return NeesResult(truth.t.copy(), mean, float(mean.mean()), nees_band(runs), runs)


# --- assessment gate -------------------------------------------------------------------


@dataclass
class GateTrial:
    t: float
    error: np.ndarray  # (lat, lon) fix minus truth, radians
    offset: np.ndarray  # (lat, lon) fix minus gate centre, radians
    half: np.ndarray  # gate half-widths, radians
    discarded: bool
    injected: bool

    @property
    def ratio(self) -> float:
        """Largest per-axis error as a fraction of the gate half-width."""
        return float(np.max(np.abs(self.error) / self.half))


def _fix_trial(bs, paths, scene, truth, k_prev, k, odo, epsilon, injected):
    sp = [SbrPath(o.aoa_az, o.aod_az, float(rtt_to_distance(o.rtt) * np.cos(o.aod_el)), o.path_index)
          for o in paths]
    try:
        fix = sbr_fix(bs, sp, float(truth.enu[k, 2]), scene.origin, epoch=float(truth.t[k]))
    except FivegError:
        return None
    prev = FilterState(truth.states[k_prev].copy(), np.eye(STATE_DIM), float(truth.t[k_prev]))
    dt = float(truth.t[k] - truth.t[k_prev])
    verdict = assess_sbr_fix(fix, prev, odo, dt, epsilon)
    centre, half = motion_bounds(prev, odo.speed, dt, epsilon)
    p = np.array([fix.position.lat, fix.position.lon])
    return GateTrial(float(truth.t[k]), p - truth.states[k, :2], p - centre, half,
                     verdict is Assessment.DISCARD, injected)


def gate_trials(scene, truth, records, *, epsilon: float = 1.0, model: PropagationModel | None = None):
    """Noiseless assessment-gate trials along a trajectory.

    At each 5G epoch the serving BS's paths go through the heuristic classifier.
    Double-bounce paths are injected as misclassified single bounces by giving
    them the power a single bounce of the same length would have. Each epoch
    yields up to two fixes: one from the genuine SBRs alone and one mixing in
    the injected paths. The gate is centred on the truth at the previous epoch
    moved by the latest odometer speed.
    """
    model = model or PropagationModel(carrier_hz=scene.carrier_hz)
    classifier = HeuristicClassifier()
    by_t = defaultdict(list)
    for r in records:
        by_t[r.t].append(r)
    times = sorted(by_t)
    odo = truth.odometer
    out = []
    for t_prev, t in zip(times[:-1], times[1:]):
        k_prev, k = int(truth.index_at(t_prev)), int(truth.index_at(t))
        bs = serving_station(scene, truth.enu[k])
        recs = [r for r in by_t[t] if r.bs_id == bs.id]
        obs = []
        for r in recs:
            o = r.observation()
            if r.bounces == 2:
                o = replace(o, rss=float(model.rss(r.length, 1)))
            obs.append(o)
        accepted = exclude_measurements(obs, model, classifier).sbr
        genuine = [o for o in accepted if o.truth_bounces == 1]
        fake = [o for o in accepted if o.truth_bounces != 1]
        j = int(np.searchsorted(odo.t, t, side="right")) - 1
        if j < 0:
            continue
        sample = odo[j]
        if len(genuine) >= 2:
            trial = _fix_trial(bs, genuine, scene, truth, k_prev, k, sample, epsilon, False)
            if trial is not None:
                out.append(trial)
        if fake and len(accepted) >= 2:
            trial = _fix_trial(bs, accepted, scene, truth, k_prev, k, sample, epsilon, True)
            if trial is not None:
                out.append(trial)
    return out


@dataclass
class GateEfficacy:
    trials: int
    outside: int  # fixes beyond the motion bound
    outside_discarded: int
    near: int  # fixes within 0.1 of the bound
    near_discarded: int

    @property
    def discard_rate(self) -> float:
        return self.outside_discarded / self.outside if self.outside else float("nan")


def gate_efficacy(trials) -> GateEfficacy:
    outside = [g for g in trials if g.ratio >= 1.0]
    near = [g for g in trials if g.ratio <= 0.1]
    return GateEfficacy(len(trials), len(outside), sum(g.discarded for g in outside), len(near),
                        sum(g.discarded for g in near))


