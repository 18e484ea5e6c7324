"""Per-object stationarity belief: Beta pseudo-counts over v plus an EMA of geometric change."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

CLIP_EPS = 1e-6


@dataclass(frozen=True)
class StationarityBelief:
    alpha: float
    beta: float
    zeta: float = 0.0
    last_update: float = 0.0
    decaying: bool = False

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")

    @property
    def expected(self) -> float:
        return expected_stationarity(self)


@dataclass(frozen=True)
class DecayPolicy:
    delay_static: float = 60.0
    delay_dynamic: float = 15.0
    rate_static: float = 0.02
    rate_dynamic: float = 0.1
    e_absent: float = 1.0
    sigma_meas: float = 0.05
    e_broad: float = 1.0
    alpha0: float = 8.0
    beta0: float = 1.0
    # total pseudo-count cap; rescaling keeps E[v] and bounds the evidence memory
    max_evidence: float = 9.0
    zeta_gain: float = 0.2

    def __post_init__(self):
        if self.delay_dynamic > self.delay_static:
            raise ValueError("delay_dynamic must be <= delay_static")
        if self.rate_dynamic < self.rate_static:
            raise ValueError("rate_dynamic must be >= rate_static")
        if not self.e_absent > self.sigma_meas:
            raise ValueError("e_absent must exceed sigma_meas")
        if min(self.sigma_meas, self.e_broad, self.alpha0, self.beta0) <= 0:
            raise ValueError("scales and initial pseudo-counts must be positive")

    def delay(self, label: str) -> float:
        return self.delay_static if label == "static" else self.delay_dynamic

    def rate(self, label: str) -> float:
        return self.rate_static if label == "static" else self.rate_dynamic


def initial_belief(policy: DecayPolicy, t: float) -> StationarityBelief:
    return StationarityBelief(policy.alpha0, policy.beta0, 0.0, t, False)


def expected_stationarity(belief: StationarityBelief) -> float:
    return belief.alpha / (belief.alpha + belief.beta)


def measure_change(before_points: np.ndarray, after_points: np.ndarray) -> float:
    """Distance the point-cloud centroid moved."""
    a = np.atleast_2d(before_points).mean(axis=0)
    b = np.atleast_2d(after_points).mean(axis=0)
    return float(np.hypot(*(b - a)))


def likelihoods(e_t: float, policy: DecayPolicy) -> tuple[float, float]:
    """(stationary, moved) likelihoods of a measured change ``e_t``."""
    s = policy.sigma_meas
    l_stat = math.exp(-(e_t * e_t) / (2.0 * s * s))
    l_moved = math.exp(-e_t / policy.e_broad) * (s / policy.e_broad)
    return l_stat, l_moved


def responsibility(belief: StationarityBelief, e_t: float, policy: DecayPolicy) -> float:
    """Posterior probability that the object moved, given the prior mean E[v]."""
    l_stat, l_moved = likelihoods(e_t, policy)
    ev = expected_stationarity(belief)
    num = (1.0 - ev) * l_moved
    den = ev * l_stat + num
    return 1.0 if den == 0.0 else num / den


def _cap(alpha: float, beta: float, policy: DecayPolicy) -> tuple[float, float]:
    total = alpha + beta
    if total > policy.max_evidence:
        k = policy.max_evidence / total
        return alpha * k, beta * k
    return alpha, beta


def bayes_update(
    belief: StationarityBelief, e_t: float, s: str, policy: DecayPolicy, t: float
) -> StationarityBelief:
    """One observation step: split a unit pseudo-count between "stayed" and "moved".

    The static/dynamic label only matters at decay time; it is accepted here so
    every update has the same call shape.
    """
    if e_t < 0:
        raise ValueError("change measure must be nonnegative")
    r = responsibility(belief, e_t, policy)
    alpha, beta = _cap(belief.alpha + (1.0 - r), belief.beta + r, policy)
    g = policy.zeta_gain
    return StationarityBelief(
        alpha, max(beta, 1e-12), (1.0 - g) * belief.zeta + g * e_t, t, False
    )


def inject_decay(
    belief: StationarityBelief,
    s: str,
    policy: DecayPolicy,
    t_now: float,
    last_seen: float | None = None,
    theta_removal: float = 0.6,
) -> StationarityBelief:
    """Fake change evidence for an out-of-view object, never pushing E[v] to theta_removal."""
    last_seen = belief.last_update if last_seen is None else last_seen
    start = last_seen + policy.delay(s)
    if t_now <= start:
        return belief
    dt = t_now - max(belief.last_update, start)
    if dt <= 0:
        return belief
    floor = theta_removal + CLIP_EPS
    ev = expected_stationarity(belief)
    if ev <= floor:
        return replace(belief, last_update=t_now, decaying=True)
    beta = belief.beta + policy.rate(s) * dt
    if belief.alpha / (belief.alpha + beta) < floor:
        beta = belief.alpha / floor - belief.alpha
    alpha, beta = _cap(belief.alpha, beta, policy)
    return StationarityBelief(alpha, beta, belief.zeta, t_now, True)


def observed_absence(
    belief: StationarityBelief, s: str, policy: DecayPolicy, t: float
) -> StationarityBelief:
    """Expected-but-unmatched object: a real, large change measure (not clipped)."""
    return bayes_update(belief, policy.e_absent, s, policy, t)
