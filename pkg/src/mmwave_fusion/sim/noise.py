"""Additive Gaussian corruption of traced channel parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..fiveg import ChannelObservation


@dataclass(frozen=True)
class ChannelNoise:
    sigma_t: float = 0.5e-9  # rtt, s
    sigma_aod: float = np.radians(0.05)
    sigma_aoa: float = np.radians(0.05)
    sigma_el: float = np.radians(0.05)
    sigma_rss: float = 1.0  # dB

    def __post_init__(self):
        if min(self.sigma_t, self.sigma_aod, self.sigma_aoa, self.sigma_el, self.sigma_rss) < 0:
            raise ValueError("noise standard deviations must be non-negative")

    @classmethod
    def zero(cls) -> "ChannelNoise":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


def corrupt_channel(records, noise: ChannelNoise, seed) -> list[ChannelObservation]:
    """Noisy observations for ``records`` (PathRecords or observations), truth labels kept.

    One draw of five normals per record in input order, so a seed replays exactly.
    """
    rng = np.random.default_rng(seed)
    out = []
    for rec in records:
        obs = rec.observation() if hasattr(rec, "observation") else rec
        e = rng.standard_normal(5)
        out.append(ChannelObservation(
            obs.t, obs.bs_id, obs.path_index,
            obs.rtt + noise.sigma_t * e[0],
            float(np.mod(obs.aod_az + noise.sigma_aod * e[1], 2 * np.pi)),
            obs.aod_el + noise.sigma_el * e[2],
            float(np.mod(obs.aoa_az + noise.sigma_aoa * e[3], 2 * np.pi)),
            obs.rss + noise.sigma_rss * e[4],
            obs.truth_bounces,
        ))
    return out
