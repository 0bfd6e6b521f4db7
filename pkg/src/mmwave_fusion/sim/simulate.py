"""End-to-end measurement generation: trace every 5G epoch and corrupt all sensor streams."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..fiveg import PropagationModel, write_channel_csv
from ..ins import ImuErrorModel, ImuLog, OdometerLog, corrupt_imu, corrupt_odometer, write_imu_csv, write_odometer_csv
from .noise import ChannelNoise, corrupt_channel
from .raytrace import PathRecord, trace_paths
from .scene import Scene
from .trajectory import TruthTrajectory, write_truth_csv


@dataclass
class Simulation:
    truth: TruthTrajectory
    imu: ImuLog
    odometer: OdometerLog
    channel: list  # ChannelObservation
    records: list  # noiseless PathRecord, same order as channel

    def write(self, directory) -> dict:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {"imu": d / "imu.csv", "odometer": d / "odometer.csv",
                 "channel": d / "channel.csv", "truth": d / "truth.csv"}
        write_imu_csv(paths["imu"], self.imu)
        write_odometer_csv(paths["odometer"], self.odometer)
        write_channel_csv(paths["channel"], self.channel)
        write_truth_csv(paths["truth"], self.truth)
        return paths


def epoch_times(truth: TruthTrajectory, rate: float) -> np.ndarray:
    """5G epochs on the IMU grid, ``rate`` Hz, starting at the first sample."""
    step = truth.rate / rate
    if abs(step - round(step)) > 1e-9:
        raise ValueError("IMU rate must be an integer multiple of the 5G rate")
    return truth.t[:: int(round(step))]


def trace_epochs(scene: Scene, truth: TruthTrajectory, rate: float = 1.0, *, max_bounces: int = 2,
                 max_range: float = 400.0, model: PropagationModel | None = None) -> list[PathRecord]:
    """Noiseless paths from every BS within ``max_range`` at each 5G epoch."""
    model = model or PropagationModel(carrier_hz=scene.carrier_hz)
    out = []
    for t in epoch_times(truth, rate):
        k = int(truth.index_at(t))
        ue = truth.enu[k]
        for bs in scene.base_stations:
            if np.hypot(*(ue[:2] - bs.xy)) > max_range:
                continue
            out.extend(trace_paths(scene, bs, ue, max_bounces, model, t=float(truth.t[k])))
    return out


def simulate(scene: Scene, truth: TruthTrajectory, *, imu_model: ImuErrorModel = ImuErrorModel(),
             odo_sigma: float = 0.0, odo_quantization: float = 0.0,
             channel_noise: ChannelNoise = ChannelNoise(), fiveg_rate: float = 1.0, max_bounces: int = 2,
             max_range: float = 400.0, model: PropagationModel | None = None, seed: int = 0,
             records: list | None = None) -> Simulation:
    """Corrupt the truth streams and trace the channel. Independent child seeds per stream.

    Passing precomputed ``records`` skips tracing, which only depends on the scene
    and the truth trajectory.
    """
    s_imu, s_odo, s_ch = np.random.SeedSequence(seed).spawn(3)
    if records is None:
        records = trace_epochs(scene, truth, fiveg_rate, max_bounces=max_bounces,
                               max_range=max_range, model=model)
    imu = corrupt_imu(truth.imu, imu_model, s_imu)
    odo = corrupt_odometer(truth.odometer, odo_sigma, odo_quantization, s_odo)
    channel = corrupt_channel(records, channel_noise, s_ch)
    return Simulation(truth, imu, odo, channel, list(records))
