"""Experiment orchestration: config -> simulate (or ingest) -> fuse -> evaluate -> artifacts."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .. import __version__
from ..fiveg import PropagationModel, read_channel_csv
from ..fusion import FilterConfig, FilterOutput, ProcessNoise, UkfParams, initial_state, run_filter
from ..geo import geodetic_to_enu
from ..ins import ImuErrorModel, read_imu_csv, read_odometer_csv
from ..sim import downtown
from ..sim.noise import ChannelNoise
from ..sim.scene import Scene, load_scene
from ..sim.simulate import Simulation, simulate
from ..sim.trajectory import DynamicsProfile, TruthTrajectory, generate_trajectory, read_truth_csv
from .metrics import ErrorReport, compute_error_report

ENV_PREFIX = "MMWF_"

DEFAULTS = {
    "name": "experiment",
    "scene": "downtown.yaml",
    "inputs": None,  # directory with imu/odometer/channel/truth CSVs; skips simulation
    "trajectory": {"route": "high_outage", "waypoints": None, "profile": {}, "imu_rate": 20.0,
                   "odo_rate": 1.0},
    "sensors": {
        "imu": "consumer",
        "odo_sigma": 0.05,
        "odo_quantization": 0.0,
        "channel": {"sigma_t": 0.5e-9, "sigma_angle_deg": 0.05, "sigma_el_deg": 0.05, "sigma_rss": 1.0},
        "fiveg_rate": 1.0,
        "max_bounces": 2,
        "max_range": 400.0,
    },
    "filter": {
        "kind": "ukf",
        "use_sbr": True,
        "classifier": "heuristic",
        "assessment": True,
        "epsilon": 1.0,
        "r_mode": "propagated",
        "q_inflation": 4.0,
        "odo_coupling": True,
        "nhc_sigma": 0.05,
        "innovation_gate": None,
        "ukf": {"alpha": 1e-3, "beta": 2.0, "kappa": 0.0},
    },
    "init": {"sigma_pos": 10.0, "sigma_vel": 1.0, "sigma_att_deg": 5.0},
    "seed": 0,
    "figures": True,
}
# sections whose values are free-form and not checked key by key
_FREE = {("trajectory", "waypoints"), ("trajectory", "profile"), ("sensors", "imu")}

IMU_PRESETS = {"consumer": downtown.CONSUMER_IMU, "white": downtown.WHITE_IMU, "perfect": ImuErrorModel()}
ROUTES = {"high_outage": downtown.high_outage_route, "low_outage": downtown.low_outage_route,
          "nees": downtown.nees_route}


class ConfigError(ValueError):
    pass


def data_path(name: str) -> Path:
    return Path(str(resources.files("mmwave_fusion") / "data" / name))


def preset_path(name: str) -> Path:
    p = data_path("presets") / f"{name}.yaml"
    if not p.exists():
        known = sorted(q.stem for q in data_path("presets").glob("*.yaml"))
        raise ConfigError(f"unknown preset {name!r}; bundled presets: {', '.join(known)}")
    return p


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        path = f"{where}.{k}" if where else k
        if k not in base:
            raise ConfigError(f"unknown config key {path!r}; valid keys here: {', '.join(sorted(base))}")
        key = tuple(path.split("."))
        if isinstance(base[k], dict) and key not in _FREE:
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path!r} must be a mapping")
            out[k] = _merge(base[k], v, path)
        else:
            out[k] = copy.deepcopy(v)
    return out


def env_overrides(environ=None) -> dict:
    """``MMWF_FILTER__KIND=ekf`` -> {"filter": {"kind": "ekf"}}; values parsed as YAML scalars."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        keys = name[len(ENV_PREFIX):].lower().split("__")
        d = out
        for k in keys[:-1]:
            d = d.setdefault(k, {})
        d[keys[-1]] = yaml.safe_load(environ[name])
    return out


@dataclass
class ExperimentConfig:
    values: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, d: dict | None = None, base_dir=None, environ=None) -> "ExperimentConfig":
        values = _merge(DEFAULTS, d or {})
        values = _merge(values, env_overrides(environ))
        cfg = cls(values, Path(base_dir) if base_dir else Path.cwd())
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path, environ=None) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists() and not path.suffix:
            path = preset_path(str(path))
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        with open(path) as fh:
            d = yaml.safe_load(fh) or {}
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(d, path.parent, environ)

    def with_overrides(self, **flat) -> "ExperimentConfig":
        """Dotted keys, e.g. ``with_overrides(**{"filter.kind": "ekf"})``."""
        over: dict = {}
        for dotted, v in flat.items():
            d = over
            keys = dotted.split(".")
            for k in keys[:-1]:
                d = d.setdefault(k, {})
            d[keys[-1]] = v
        cfg = ExperimentConfig(_merge(self.values, over), self.base_dir)
        cfg.check()
        return cfg

    def __getitem__(self, k):
        return self.values[k]

    # --- validation and resolution ---

    def resolve(self, p) -> Path:
        p = Path(p)
        if p.is_absolute() or p.exists():
            return p
        if (self.base_dir / p).exists():
            return self.base_dir / p
        return data_path(str(p))

    def check(self):
        v = self.values
        if not isinstance(v["seed"], int) or isinstance(v["seed"], bool) or v["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not self.resolve(v["scene"]).exists():
            raise ConfigError(f"scene file {v['scene']!r} not found (looked next to the config and in bundled data)")
        if v["inputs"] is not None:
            d = self.resolve(v["inputs"])
            missing = [f for f in ("imu.csv", "odometer.csv", "channel.csv", "truth.csv") if not (d / f).exists()]
            if missing:
                raise ConfigError(f"inputs directory {d} lacks {', '.join(missing)}")
        tr = v["trajectory"]
        if tr["waypoints"] is None and tr["route"] not in ROUTES:
            raise ConfigError(f"trajectory.route must be one of {sorted(ROUTES)} or give trajectory.waypoints")
        imu = v["sensors"]["imu"]
        if isinstance(imu, str) and imu not in IMU_PRESETS:
            raise ConfigError(f"sensors.imu must be one of {sorted(IMU_PRESETS)} or a mapping of ImuErrorModel fields")
        f = v["filter"]
        if f["kind"] not in ("ukf", "ekf"):
            raise ConfigError("filter.kind must be 'ukf' or 'ekf'")
        if not isinstance(f["use_sbr"], bool):
            raise ConfigError("filter.use_sbr must be true or false")
        try:
            self.filter_config()
            self.imu_model()
            self.profile()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    def digest(self) -> str:
        blob = json.dumps(self.values, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    # --- builders ---

    def scene(self) -> Scene:
        return load_scene(self.resolve(self.values["scene"]))

    def imu_model(self) -> ImuErrorModel:
        imu = self.values["sensors"]["imu"]
        if isinstance(imu, str):
            return IMU_PRESETS[imu]
        return ImuErrorModel(**{k: tuple(v) if isinstance(v, list) else v for k, v in imu.items()})

    def channel_noise(self) -> ChannelNoise:
        c = self.values["sensors"]["channel"]
        return ChannelNoise(float(c["sigma_t"]), np.radians(c["sigma_angle_deg"]), np.radians(c["sigma_angle_deg"]),
                            np.radians(c["sigma_el_deg"]), float(c["sigma_rss"]))

    def profile(self):
        tr = self.values["trajectory"]
        if tr["waypoints"] is None:
            wp, prof = ROUTES[tr["route"]]()
        else:
            wp, prof = [tuple(map(float, p)) for p in tr["waypoints"]], DynamicsProfile()
        if tr["profile"]:
            over = {k: tuple(map(tuple, v)) if k == "stops" else (tuple(v) if isinstance(v, list) else v)
                    for k, v in tr["profile"].items()}
            prof = DynamicsProfile(**{**prof.__dict__, **over})
        return wp, prof

    def filter_config(self) -> FilterConfig:
        f = self.values["filter"]
        c = self.values["sensors"]["channel"]
        rate = float(self.values["trajectory"]["imu_rate"])
        return FilterConfig(
            kind=f["kind"], ukf=UkfParams(**f["ukf"]),
            process_noise=ProcessNoise.from_imu_model(self.imu_model(), rate, inflation=float(f["q_inflation"])),
            use_sbr=f["use_sbr"], classifier=f["classifier"], assessment=bool(f["assessment"]),
            epsilon=float(f["epsilon"]), r_mode=f["r_mode"], sigma_t=float(c["sigma_t"]),
            sigma_angle=np.radians(c["sigma_angle_deg"]), sigma_el=np.radians(c["sigma_el_deg"]),
            odo_sigma=float(self.values["sensors"]["odo_sigma"]), nhc_sigma=float(f["nhc_sigma"]),
            odo_coupling=bool(f["odo_coupling"]), innovation_gate=f["innovation_gate"])

    @property
    def label(self) -> str:
        f = self.values["filter"]
        return f"{self.values['name']}:{f['kind']}-sbr-{'on' if f['use_sbr'] else 'off'}"


# --- pipeline ---------------------------------------------------------------------------


def build_truth(cfg: ExperimentConfig, scene: Scene) -> TruthTrajectory:
    wp, prof = cfg.profile()
    tr = cfg["trajectory"]
    return generate_trajectory(wp, prof, origin=scene.origin, imu_rate=float(tr["imu_rate"]),
                               odo_rate=float(tr["odo_rate"]), ue_height=scene.ue_height)


def simulate_from_config(cfg: ExperimentConfig, scene: Scene | None = None, truth=None,
                         records=None) -> Simulation:
    scene = scene or cfg.scene()
    truth = truth or build_truth(cfg, scene)
    s = cfg["sensors"]
    return simulate(scene, truth, imu_model=cfg.imu_model(), odo_sigma=float(s["odo_sigma"]),
                    odo_quantization=float(s["odo_quantization"]), channel_noise=cfg.channel_noise(),
                    fiveg_rate=float(s["fiveg_rate"]), max_bounces=int(s["max_bounces"]),
                    max_range=float(s["max_range"]), model=PropagationModel(carrier_hz=scene.carrier_hz),
                    seed=cfg["seed"], records=records)


@dataclass
class Inputs:
    imu: object
    odometer: object
    channel: list
    truth_t: np.ndarray
    truth_states: np.ndarray


def load_inputs(directory, quantization: float = 0.0) -> Inputs:
    d = Path(directory)
    t, states = read_truth_csv(d / "truth.csv")
    return Inputs(read_imu_csv(d / "imu.csv"), read_odometer_csv(d / "odometer.csv", quantization),
                  read_channel_csv(d / "channel.csv"), t, states)


def inputs_from_simulation(sim: Simulation) -> Inputs:
    return Inputs(sim.imu, sim.odometer, sim.channel, sim.truth.t, sim.truth.states)


def init_seed(seed: int) -> list:
    # independent of the simulation streams, which use SeedSequence(seed) directly
    return [int(seed), 1]


def fuse(cfg: ExperimentConfig, scene: Scene, inputs: Inputs) -> FilterOutput:
    i = cfg["init"]
    init = initial_state(inputs.truth_states[0], float(i["sigma_pos"]), float(i["sigma_vel"]),
                         np.radians(i["sigma_att_deg"]), seed=init_seed(cfg["seed"]))
    return run_filter(inputs.imu, inputs.odometer, inputs.channel, scene.base_stations, scene.origin,
                      cfg.filter_config(), init)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    report: ErrorReport
    output: FilterOutput
    files: dict


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json_dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_manifest(out_dir, cfg: ExperimentConfig, files: dict, inputs=None) -> Path:
    """Manifest of inputs, seeds, config digest and output hashes; paths relative to ``out_dir``."""
    out = Path(out_dir)
    scene_file = cfg.resolve(cfg["scene"])
    data = inputs if inputs is not None else cfg["inputs"]
    manifest = {
        "package_version": __version__,
        "config_digest": cfg.digest(),
        "seeds": {"simulation": cfg["seed"], "init": init_seed(cfg["seed"])},
        "inputs": {"scene": {"path": str(cfg["scene"]), "sha256": _sha256(scene_file)},
                   "data": None if data is None else str(data)},
        "outputs": {k: {"file": Path(p).name, "sha256": _sha256(p)} for k, p in sorted(files.items())},
    }
    path = out / "manifest.json"
    _json_dump(manifest, path)
    return path


def run_experiment(cfg: ExperimentConfig, out_dir, *, simulation: Simulation | None = None) -> ExperimentResult:
    """Run one configuration and write its report, series, CDF, figures and manifest.

    Outputs contain no timestamps or absolute paths, so identical config and
    seed give byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = cfg.scene()
    if cfg["inputs"] is not None:
        inputs = load_inputs(cfg.resolve(cfg["inputs"]), float(cfg["sensors"]["odo_quantization"]))
    else:
        simulation = simulation or simulate_from_config(cfg, scene)
        inputs = inputs_from_simulation(simulation)
    est = fuse(cfg, scene, inputs)
    report = compute_error_report(est.t, est.x[:, :3], inputs.truth_t, inputs.truth_states[:, :3])

    files = {}

    def add(key, name):
        files[key] = out / name
        return files[key]

    Path(add("config", "config.resolved.yaml")).write_text(yaml.safe_dump(cfg.values, sort_keys=True))
    est.write_csv(add("estimate", "estimate.csv"))
    report.write_errors_csv(add("errors", "errors.csv"))
    report.write_cdf_csv(add("cdf", "cdf.csv"))
    _json_dump({"name": cfg["name"], "label": cfg.label, "filter": cfg["filter"]["kind"],
                "sbr": cfg["filter"]["use_sbr"], "seed": cfg["seed"], "stats": report.summary(),
                "filter_stats": est.stats}, add("report", "report.json"))
    if cfg["figures"]:
        from . import plotting

        plotting.plot_cdf({cfg.label: report}, add("fig_cdf", "error_cdf.png"))
        plotting.plot_error_series(report, est.source, add("fig_error", "error_series.png"), cfg.label)
        truth_enu = geodetic_to_enu(inputs.truth_states[:, :3], scene.origin)
        est_enu = geodetic_to_enu(est.x[:, :3], scene.origin)
        plotting.plot_plan(scene, truth_enu, est_enu, add("fig_plan", "plan.png"), cfg.label)
    write_manifest(out, cfg, files)
    return ExperimentResult(cfg, report, est, files)


# --- comparison ----------------------------------------------------------------------------

ROWS = (("RMS (m)", "rms_2d", min), ("Max (m)", "max_2d", min), ("Sub-2 m (%)", "pct_sub_2m", max),
        ("Sub-1 m (%)", "pct_sub_1m", max), ("Sub-30 cm (%)", "pct_sub_30cm", max))


@dataclass
class ComparisonTable:
    labels: list
    values: dict  # row key -> list of values, one per column
    winners: dict  # row key -> winning label, or "tie"

    def difference(self, key) -> float:
        v = self.values[key]
        return float(max(v) - min(v))

    def to_text(self) -> str:
        w = max(14, *(len(s) for s in self.labels))
        head = "| metric".ljust(16) + "".join(f"| {s:>{w}} " for s in self.labels) + "| winner |"
        lines = [head, "|" + "-" * 15 + ("|" + "-" * (w + 2)) * len(self.labels) + "|--------|"]
        for name, key, _ in ROWS:
            cells = "".join(f"| {v:>{w}.3f} " for v in self.values[key])
            lines.append(f"| {name}".ljust(16) + cells + f"| {self.winners[key]} |")
        return "\n".join(lines) + "\n"

    def write(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "compare.md").write_text(self.to_text())
        with open(d / "compare.csv", "w") as fh:
            fh.write("metric," + ",".join(self.labels) + ",winner\n")
            for name, key, _ in ROWS:
                fh.write(f"{key}," + ",".join(repr(float(v)) for v in self.values[key]) + f",{self.winners[key]}\n")


def comparison_table(reports: dict) -> ComparisonTable:
    labels = list(reports)
    values, winners = {}, {}
    for _, key, best in ROWS:
        v = [float(getattr(reports[l], key)) for l in labels]
        values[key] = v
        b = best(v)
        wins = [l for l, x in zip(labels, v) if x == b]
        winners[key] = wins[0] if len(wins) == 1 else "tie"
    return ComparisonTable(labels, values, winners)


def _unique_labels(configs):
    labels = []
    for i, c in enumerate(configs):
        lab = c.label
        labels.append(lab if lab not in labels else f"{lab}#{i}")
    return labels


def compare(configs, out_dir, *, jobs: int = 1) -> tuple[ComparisonTable, dict]:
    """Run each configuration into its own subdirectory and tabulate the reports."""
    out = Path(out_dir)
    labels = _unique_labels(configs)
    dirs = [out / f"run{i}" for i in range(len(configs))]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(run_experiment, configs, dirs))
    else:
        results = [run_experiment(c, d) for c, d in zip(configs, dirs)]
    reports = dict(zip(labels, (r.report for r in results)))
    table = comparison_table(reports)
    table.write(out)
    if any(c["figures"] for c in configs):
        from . import plotting

        plotting.plot_cdf(reports, out / "compare_cdf.png", "Horizontal error CDF")
    return table, dict(zip(labels, results))


def filter_variants(cfg: ExperimentConfig) -> list:
    return [cfg.with_overrides(**{"filter.kind": k}) for k in ("ukf", "ekf")]


def sbr_variants(cfg: ExperimentConfig) -> list:
    return [cfg.with_overrides(**{"filter.use_sbr": s}) for s in (True, False)]
