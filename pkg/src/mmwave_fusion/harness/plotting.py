"""PNG figures for experiment reports. Agg backend, no timestamps, so bytes repeat."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..fusion import SRC_LOS, SRC_SBR  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata=_META)
    plt.close(fig)


def plot_cdf(reports: dict, path, title: str = "Horizontal error CDF"):
    """``reports`` maps a label to an ErrorReport."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rep in reports.items():
        ax.step(rep.cdf[:, 0], rep.cdf[:, 1], where="post", label=label)
    for x in (0.3, 1.0, 2.0):
        ax.axvline(x, color="0.7", lw=0.8, ls="--")
    ax.set_xscale("log")
    ax.set_xlabel("2D error (m)")
    ax.set_ylabel("fraction of epochs")
    ax.set_ylim(0, 1.01)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    _save(fig, path)


def plot_error_series(report, source, path, title: str = "Horizontal error"):
    """Error over time; the strip underneath marks epochs with LoS or SBR fixes."""
    fig, (ax, strip) = plt.subplots(2, 1, figsize=(8, 4), sharex=True,
                                    gridspec_kw={"height_ratios": [4, 1]})
    ax.plot(report.t, report.errors, lw=0.8)
    ax.axhline(0.3, color="r", lw=0.8, ls="--")
    ax.set_ylabel("2D error (m)")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    src = np.asarray(source)
    for bit, y, c, name in ((SRC_LOS, 1, "tab:green", "LoS"), (SRC_SBR, 0, "tab:blue", "SBR")):
        sel = (src & bit) > 0
        strip.scatter(report.t[sel[: len(report.t)]], np.full(np.count_nonzero(sel[: len(report.t)]), y),
                      s=4, c=c, label=name)
    strip.set_yticks([0, 1], ["SBR", "LoS"])
    strip.set_ylim(-0.5, 1.5)
    strip.set_xlabel("time (s)")
    _save(fig, path)


def plot_plan(scene, truth_enu, est_enu, path, title: str = "Plan view"):
    fig, ax = plt.subplots(figsize=(8, 6))
    for b in scene.buildings:
        fp = np.asarray(b.footprint)
        ax.fill(fp[:, 0], fp[:, 1], color="0.8", ec="0.5", lw=0.5)
    bs = np.array([s.xy for s in scene.base_stations])
    if len(bs):
        ax.scatter(bs[:, 0], bs[:, 1], marker="^", c="k", s=20, label="BS")
    ax.plot(truth_enu[:, 0], truth_enu[:, 1], "k-", lw=1.0, label="truth")
    ax.plot(est_enu[:, 0], est_enu[:, 1], "r-", lw=0.6, label="estimate")
    ax.set_aspect("equal")
    ax.set_xlabel("east (m)")
    ax.set_ylabel("north (m)")
    ax.set_title(title)
    ax.legend(loc="best")
    _save(fig, path)
