"""Discontinuity classification, rate metrics, benchmarking, and reports.

A discontinuity is a consecutive detection pair where the angular-speed
test and the position-target sign-flip ratio test fire simultaneously.
The discontinuity rate r_d = d / n and the detection rate F = n / t are
the two headline metrics; reports aggregate them per system with sample
(n-1) standard deviations.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Quaternion, geodesic_distance
from .trace import PoseTrace

log = logging.getLogger(__name__)

_EPS_DENOM = 1e-9   # near-zero position guard for the ratio test, meters


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Thresholds:
    """Classifier thresholds: angular speed (rad/s) and linear ratio."""

    theta_a: float = 1.0
    theta_l: float = -0.8

    def __post_init__(self):
        if not self.theta_a > 0:
            raise EvaluationError("theta_a must be > 0")
        if not self.theta_l < 0:
            raise EvaluationError("theta_l must be < 0")


def linear_discontinuity(prev, nxt, theta_l: float) -> tuple[bool, bool, bool]:
    """Per-axis ratio test on consecutive (e, n, u) position targets.

    Axis x fires when next_x / prev_x < theta_l < 0, i.e. the component
    jumps across the origin by a large-enough fraction. Axes whose
    previous value is within 1e-9 of zero evaluate False (noise guard).
    """
    out = []
    for p, x in zip(prev, nxt):
        out.append(abs(p) > _EPS_DENOM and x / p < theta_l)
    return tuple(out)


def angular_speed(q_i: Quaternion, q_next: Quaternion, dt: float) -> float:
    """Geodesic rotation distance over elapsed time, rad/s. Requires dt > 0."""
    if dt <= 0:
        raise EvaluationError(f"non-positive dt: {dt}")
    return geodesic_distance(q_i, q_next) / dt


def classify_discontinuities(trace: PoseTrace,
                             th: Thresholds) -> list[int]:
    """Indices i of flagged record pairs (i, i+1).

    A pair is flagged when its angular speed exceeds theta_a AND any axis
    of the position target passes the ratio test. Pairs with dt <= 0 are
    skipped and logged.
    """
    flags = []
    recs = trace.records
    for i in range(len(recs) - 1):
        a, b = recs[i], recs[i + 1]
        dt = b.t - a.t
        if dt <= 0:
            log.warning("%s/%s: skipping pair (%d, %d) with dt=%g",
                        trace.system, trace.case, i, i + 1, dt)
            continue
        if angular_speed(a.quaternion(), b.quaternion(), dt) <= th.theta_a:
            continue
        if any(linear_discontinuity(a.target(), b.target(), th.theta_l)):
            flags.append(i)
    return flags


def discontinuity_rate(trace: PoseTrace, th: Thresholds) -> float:
    """r_d = flagged pairs / total detections. Errors on an empty trace."""
    if len(trace) == 0:
        raise EvaluationError("cannot rate an empty trace")
    return len(classify_discontinuities(trace, th)) / len(trace)


def detection_rate(n: int, t: float) -> float:
    """F = n / t detections per second. Requires t > 0."""
    if t <= 0:
        raise EvaluationError(f"non-positive duration: {t}")
    return n / t


@dataclass(frozen=True)
class CaseResult:
    """Discontinuity accounting for one (system, case) trace."""

    system: str
    case: str
    n: int
    d: int
    r_d: float
    flagged: tuple = ()


@dataclass(frozen=True)
class RateResult:
    """Detection-rate accounting for one (system, case) run."""

    system: str
    case: str
    len_s: float
    n: int
    F: float


def evaluate_trace(trace: PoseTrace, th: Thresholds) -> CaseResult:
    flags = classify_discontinuities(trace, th)
    if len(trace) == 0:
        raise EvaluationError("cannot evaluate an empty trace")
    return CaseResult(system=trace.system, case=trace.case, n=len(trace),
                      d=len(flags), r_d=len(flags) / len(trace),
                      flagged=tuple(flags))


def summarize(rows, value: str) -> list[dict]:
    """Per-system mean and sample (n-1) std of one metric column.

    ``rows`` are CaseResult/RateResult records; ``value`` names the metric
    attribute ("r_d" or "F"). Std is None when a system has a single case.
    """
    by_system: dict[str, list[float]] = {}
    for r in rows:
        by_system.setdefault(r.system, []).append(float(getattr(r, value)))
    out = []
    for system in sorted(by_system):
        vals = np.array(by_system[system])
        std = float(np.std(vals, ddof=1)) if vals.size > 1 else None
        out.append({"system": system, "metric": value,
                    "n_cases": int(vals.size),
                    "mean": float(vals.mean()), "std": std})
    return out


@dataclass(frozen=True)
class BenchmarkResult:
    mode: str
    n: int                 # completed detections
    t: float               # seconds accounted
    F: float               # detections per second
    frames: int
    latency_mean: float
    latency_median: float
    latency_p95: float
    dropped: int = 0       # late frames skipped (paced mode only)


def run_benchmark(frames, cam, params, variant: str = "orig",
                  mode: str = "throughput",
                  frame_rate: float | None = None) -> BenchmarkResult:
    """Time the detector over an in-memory frame list.

    throughput: frames back-to-back, F = detections / total wall time.
    paced: frames replayed at ``frame_rate``; late frames are dropped
    (live-camera behavior) and t is the nominal sequence length.
    """
    from .detector import detect_and_choose

    frames = list(frames)
    if not frames:
        raise EvaluationError("no frames to benchmark")
    if mode not in ("paced", "throughput"):
        raise EvaluationError(f"unknown benchmark mode {mode!r}")
    if mode == "paced":
        if frame_rate is None or frame_rate <= 0:
            raise EvaluationError("paced mode requires a positive frame rate")
        period = 1.0 / frame_rate
    latencies = []
    n = 0
    dropped = 0
    t0 = time.perf_counter()
    for i, img in enumerate(frames):
        if mode == "paced":
            due = t0 + i * period
            now = time.perf_counter()
            if now > due + period:
                dropped += 1
                continue
            if now < due:
                time.sleep(due - now)
        s = time.perf_counter()
        dets = detect_and_choose(img, cam, params, variant,
                                 timestamp=0.0, frame=i)
        latencies.append(time.perf_counter() - s)
        n += len(dets)
    if mode == "throughput":
        t = time.perf_counter() - t0
    else:
        t = len(frames) * period
    lat = np.array(latencies) if latencies else np.array([0.0])
    return BenchmarkResult(
        mode=mode, n=n, t=t, F=detection_rate(n, t), frames=len(frames),
        latency_mean=float(lat.mean()), latency_median=float(np.median(lat)),
        latency_p95=float(np.percentile(lat, 95)), dropped=dropped)


# ---------------------------------------------------------------------------
# CSV emission / ingestion

def write_case_csv(rows, path) -> None:
    """Per-case discontinuity rows: system,case,n,d,r_d."""
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["system", "case", "n", "d", "r_d"])
        for r in rows:
            w.writerow([r.system, r.case, r.n, r.d, repr(r.r_d)])


def read_case_csv(path) -> list[CaseResult]:
    out = []
    with Path(path).open(newline="") as f:
        for row in csv.DictReader(f):
            out.append(CaseResult(system=row["system"], case=row["case"],
                                  n=int(row["n"]), d=int(row["d"]),
                                  r_d=float(row["r_d"])))
    return out


def write_rate_csv(rows, path) -> None:
    """Per-case detection-rate rows: system,case,len_s,n,F."""
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["system", "case", "len_s", "n", "F"])
        for r in rows:
            w.writerow([r.system, r.case, repr(r.len_s), r.n, repr(r.F)])


def read_rate_csv(path) -> list[RateResult]:
    out = []
    with Path(path).open(newline="") as f:
        for row in csv.DictReader(f):
            out.append(RateResult(system=row["system"], case=row["case"],
                                  len_s=float(row["len_s"]), n=int(row["n"]),
                                  F=float(row["F"])))
    return out


def write_summary_csv(summaries, path) -> None:
    """Aggregate rows: system,metric,n_cases,mean,std (std blank if n=1)."""
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["system", "metric", "n_cases", "mean", "std"])
        for s in summaries:
            std = "" if s["std"] is None else repr(s["std"])
            w.writerow([s["system"], s["metric"], s["n_cases"],
                        repr(s["mean"]), std])


# ---------------------------------------------------------------------------
# Plot emission (deterministic SVG)

def _deterministic_matplotlib():
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "fidmark"
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_targets(trace: PoseTrace, flagged, path) -> None:
    """e/n/u position targets vs time with vertical lines at flagged pairs."""
    plt = _deterministic_matplotlib()
    ts = [r.t for r in trace.records]
    fig, ax = plt.subplots(figsize=(8, 4))
    for axis in ("e", "n", "u"):
        ax.plot(ts, [getattr(r, axis) for r in trace.records], label=axis)
    for i in flagged:
        ax.axvline(trace.records[i + 1].t, color="red", lw=0.8, alpha=0.7)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("position target [m]")
    ax.set_title(f"{trace.system} / {trace.case}")
    ax.legend(loc="upper right")
    _save(fig, path)
    plt.close(fig)


def plot_angular_speed(trace: PoseTrace, th: Thresholds, path) -> None:
    """Pairwise angular speed vs time with the theta_a rule line."""
    plt = _deterministic_matplotlib()
    ts, speeds = [], []
    for a, b in zip(trace.records, trace.records[1:]):
        dt = b.t - a.t
        if dt <= 0:
            continue
        ts.append(b.t)
        speeds.append(angular_speed(a.quaternion(), b.quaternion(), dt))
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(ts, speeds, lw=0.8)
    ax.axhline(th.theta_a, color="red", ls="--", label="theta_a")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("angular speed [rad/s]")
    ax.set_title(f"{trace.system} / {trace.case}")
    ax.legend(loc="upper right")
    _save(fig, path)
    plt.close(fig)


def _plot_distribution(rows, value, ylabel, path) -> None:
    """Strip plot of one metric per system (deterministic jitter-free)."""
    plt = _deterministic_matplotlib()
    systems = sorted({r.system for r in rows})
    fig, ax = plt.subplots(figsize=(2 + 1.5 * len(systems), 4))
    for k, system in enumerate(systems):
        vals = [getattr(r, value) for r in rows if r.system == system]
        ax.plot([k] * len(vals), vals, "o", ms=4, alpha=0.6)
        ax.hlines(float(np.mean(vals)), k - 0.2, k + 0.2, color="black")
    ax.set_xticks(range(len(systems)))
    ax.set_xticklabels(systems, rotation=20, ha="right")
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def emit_report(out_dir, case_rows=(), rate_rows=(), traces=(),
                thresholds: Thresholds | None = None) -> list[Path]:
    """Write CSVs and SVG plots to ``out_dir``; returns written paths.

    Emits per-case and summary CSVs for whichever of ``case_rows`` /
    ``rate_rows`` are given, plus per-trace target and angular-speed plots
    and per-system metric distributions. Output is byte-deterministic for
    identical inputs.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise EvaluationError(f"cannot create report dir {out}: {exc}")
    th = thresholds or Thresholds()
    written = []

    def _w(path):
        written.append(path)
        return path

    case_rows = list(case_rows)
    rate_rows = list(rate_rows)
    if case_rows:
        write_case_csv(case_rows, _w(out / "cases.csv"))
        write_summary_csv(summarize(case_rows, "r_d"),
                          _w(out / "summary_r_d.csv"))
        _plot_distribution(case_rows, "r_d", "discontinuity rate r_d",
                           _w(out / "r_d_distribution.svg"))
    if rate_rows:
        write_rate_csv(rate_rows, _w(out / "rates.csv"))
        write_summary_csv(summarize(rate_rows, "F"),
                          _w(out / "summary_F.csv"))
        _plot_distribution(rate_rows, "F", "detection rate F [Hz]",
                           _w(out / "F_distribution.svg"))
    for trace in traces:
        flags = classify_discontinuities(trace, th)
        stem = f"{trace.system}_{trace.case}".replace("/", "-")
        plot_targets(trace, flags, _w(out / f"targets_{stem}.svg"))
        plot_angular_speed(trace, th, _w(out / f"speed_{stem}.svg"))
    # Reports derive dt from record timestamps (not a nominal frame
    # period); note the convention so tables are self-describing.
    notes = _w(out / "NOTES.txt")
    notes.write_text(
        "dt convention: angular speed uses record timestamps, not a "
        "nominal frame period.\n"
        f"thresholds: theta_a={th.theta_a} rad/s, theta_l={th.theta_l}\n"
        "preset camera/trajectory values are representative, not measured "
        "from hardware.\n")
    return written
