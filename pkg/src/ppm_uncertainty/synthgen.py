"""Synthetic data with known noise and known data gaps.

``gen_1d_regression`` draws ``y = f(x) + N(0, σ(x)²)`` with training inputs kept
out of the gap intervals; ``gen_process_log`` samples cases from a small
Markov chain of activities with per-activity step durations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Callable, Mapping, Optional

import numpy as np

from .eventlog import Case, Event, EventLog
from .tensor import RngStream

END = "END"


def default_target(x):
    """sin(2πx) rescaled into [0, 1]."""
    return 0.5 + 0.5 * np.sin(2.0 * np.pi * np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class NoiseProfile:
    """Piecewise-linear σ(x) through ``knots`` (sorted x positions in [0, 1])."""

    knots: tuple = (0.0, 1.0)
    sigmas: tuple = (0.1, 0.1)

    def __post_init__(self):
        if len(self.knots) != len(self.sigmas) or len(self.knots) < 1:
            raise ValueError("knots and sigmas must have equal nonzero length")
        if any(b < a for a, b in zip(self.knots, self.knots[1:])):
            raise ValueError("knots must be sorted")
        if min(self.sigmas) < 0:
            raise ValueError("noise standard deviations must be nonnegative")

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=np.float64), self.knots, self.sigmas)

    @classmethod
    def linear(cls, at0: float, at1: float) -> "NoiseProfile":
        return cls((0.0, 1.0), (at0, at1))

    @classmethod
    def constant(cls, sigma: float) -> "NoiseProfile":
        return cls((0.0, 1.0), (sigma, sigma))


@dataclass(frozen=True)
class SynthSpec:
    n_samples: int = 2000
    noise: NoiseProfile = field(default_factory=lambda: NoiseProfile.constant(0.1))
    gap_regions: tuple = ()
    seed: int = 0
    n_test: int = 1000
    target: Callable = default_target

    def __post_init__(self):
        for lo, hi in self.gap_regions:
            if not 0.0 <= lo < hi <= 1.0:
                raise ValueError(f"gap region ({lo}, {hi}) must lie within [0, 1]")


@dataclass(frozen=True)
class RegressionData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    sigma_test: np.ndarray  # true noise std at x_test
    f_test: np.ndarray  # true noise-free target at x_test
    spec: SynthSpec

    def sigma(self, x):
        return self.spec.noise(x)

    def in_gap(self, x) -> np.ndarray:
        x = np.asarray(x)
        mask = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.spec.gap_regions:
            mask |= (x >= lo) & (x <= hi)
        return mask

    def truth_dict(self) -> dict:
        return {
            "noise_knots": list(self.spec.noise.knots),
            "noise_sigmas": list(self.spec.noise.sigmas),
            "gap_regions": [list(g) for g in self.spec.gap_regions],
            "seed": self.spec.seed,
            "x_test": self.x_test.tolist(),
            "f_test": self.f_test.tolist(),
            "sigma_test": self.sigma_test.tolist(),
        }


def _allowed_intervals(gaps) -> list[tuple[float, float]]:
    merged = []
    for lo, hi in sorted(gaps):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    allowed, cursor = [], 0.0
    for lo, hi in merged:
        if lo > cursor:
            allowed.append((cursor, lo))
        cursor = max(cursor, hi)
    if cursor < 1.0:
        allowed.append((cursor, 1.0))
    return allowed


def gen_1d_regression(spec: SynthSpec) -> RegressionData:
    allowed = _allowed_intervals(spec.gap_regions)
    if not allowed:
        raise ValueError("gap regions cover the whole domain; no training inputs possible")
    rng = RngStream(spec.seed, "synth1d")
    lengths = np.array([hi - lo for lo, hi in allowed])
    # inverse-CDF sampling of the uniform law on the allowed intervals
    u = rng.child("x_train").uniform(size=spec.n_samples) * lengths.sum()
    edges = np.concatenate([[0.0], np.cumsum(lengths)])
    seg = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, len(allowed) - 1)
    lows = np.array([lo for lo, _ in allowed])
    x_train = lows[seg] + (u - edges[seg])

    x_test = np.sort(rng.child("x_test").uniform(size=spec.n_test))
    f_train, f_test = spec.target(x_train), spec.target(x_test)
    sigma_train, sigma_test = spec.noise(x_train), spec.noise(x_test)
    y_train = f_train + sigma_train * rng.child("noise_train").normal(size=spec.n_samples)
    y_test = f_test + sigma_test * rng.child("noise_test").normal(size=spec.n_test)
    return RegressionData(x_train, y_train, x_test, y_test, sigma_test, f_test, spec)


@dataclass(frozen=True)
class OutcomeRule:
    """Binary outcome: 1 when the case duration is ``<=`` (or ``>``) ``threshold_days``."""

    threshold_days: float
    positive_if: str = "below"

    def __call__(self, duration_days: float) -> int:
        below = duration_days <= self.threshold_days
        return int(below if self.positive_if == "below" else not below)


@dataclass(frozen=True)
class SynthProcessSpec:
    n_cases: int = 500
    # activity -> {next activity or END: probability}
    activity_chain: Mapping = field(default_factory=lambda: {"A": {"B": 1.0}, "B": {"C": 1.0}, "C": {END: 1.0}})
    start_activity: str = "A"
    # activity -> (mean, std) in days of the step that leads into it
    step_duration_law: Mapping = field(default_factory=lambda: {"B": (1.0, 0.0), "C": (1.0, 0.0)})
    outcome_rule: Optional[OutcomeRule] = None
    seed: int = 0
    interarrival_days: float = 0.25
    max_events: int = 50
    start: datetime = datetime(2020, 1, 1, tzinfo=timezone.utc)

    def __post_init__(self):
        for act, row in self.activity_chain.items():
            total = sum(row.values())
            if abs(total - 1.0) > 1e-9 or min(row.values()) < 0:
                raise ValueError(f"transition probabilities out of {act!r} must be >= 0 and sum to 1 (got {total})")
        for act, (mean, std) in self.step_duration_law.items():
            if mean <= 0 or std < 0:
                raise ValueError(f"step duration law for {act!r} needs mean > 0 and std >= 0")


def _has_exit(chain: Mapping) -> bool:
    return any(row.get(END, 0.0) > 0 for row in chain.values()) or any(
        nxt not in chain for row in chain.values() for nxt in row if nxt != END
    )


def gen_process_log(spec: SynthProcessSpec) -> EventLog:
    """Sample ``n_cases`` cases; step durations are Normal(mean, std) clipped at 0."""
    if not _has_exit(spec.activity_chain):
        warnings.warn(f"activity chain has no terminal state; cases are cut at {spec.max_events} events")
    rng = RngStream(spec.seed, "process")
    arrivals = np.cumsum(rng.child("arrivals").uniform(size=spec.n_cases) * 2.0 * spec.interarrival_days)
    cases = []
    for i in range(spec.n_cases):
        crng = rng.child(f"case{i}")
        gen = crng.generator()
        case_id = f"case_{i:06d}"
        t = spec.start + timedelta(days=float(arrivals[i]))
        t0 = t
        act = spec.start_activity
        events = [Event(case_id, act, t)]
        while len(events) < spec.max_events:
            row = spec.activity_chain.get(act)
            if not row:
                break
            choices = sorted(row)
            nxt = choices[gen.choice(len(choices), p=[row[c] for c in choices])]
            if nxt == END:
                break
            mean, std = spec.step_duration_law.get(nxt, (1.0, 0.0))
            step = max(0.0, gen.normal(mean, std)) if std > 0 else mean
            t = t + timedelta(days=step)
            act = nxt
            events.append(Event(case_id, act, t))
        duration = (t - t0).total_seconds() / 86400.0
        outcome = spec.outcome_rule(duration) if spec.outcome_rule else None
        cases.append(Case.from_events(case_id, events, outcome))
    cases.sort(key=lambda c: (c.start, c.case_id))
    return EventLog(tuple(cases))
