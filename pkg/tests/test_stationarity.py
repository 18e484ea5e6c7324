from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from semistatic.stationarity import (
    CLIP_EPS,
    DecayPolicy,
    StationarityBelief,
    bayes_update,
    expected_stationarity,
    initial_belief,
    inject_decay,
    measure_change,
    observed_absence,
    responsibility,
)

P = DecayPolicy()


def test_expected_value_cases():
    assert expected_stationarity(StationarityBelief(3, 3)) == 0.5
    assert expected_stationarity(StationarityBelief(9, 1)) == pytest.approx(0.9)
    assert initial_belief(P, 0.0).expected == pytest.approx(8 / 9)


def test_measure_change_cases():
    import numpy as np

    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert measure_change(pts, pts) == 0.0
    assert measure_change(pts, pts + [0.3, 0.4]) == pytest.approx(0.5)


def test_zero_change_is_stationary_evidence():
    b = initial_belief(P, 0.0)
    assert responsibility(b, 0.0, P) < 0.01
    assert bayes_update(b, 0.0, "dynamic", P, 1.0).expected > b.expected


def test_large_change_is_motion_evidence():
    b = StationarityBelief(4, 2)
    assert responsibility(b, 1.0, P) > 0.99
    assert bayes_update(b, 1.0, "dynamic", P, 1.0).expected < b.expected


def test_repeated_zero_change_converges_upward():
    # uncapped pseudo-counts: beta stays ~1 while alpha grows by ~1 per update
    p = DecayPolicy(max_evidence=1e9)
    b = StationarityBelief(1, 1)
    prev = b.expected
    for k in range(50):
        b = bayes_update(b, 0.0, "static", p, float(k))
        assert b.expected > prev
        prev = b.expected
    # hand iteration of the pseudo-count recursion; the "moved" share at e=0 is (1-E)*l/(E+(1-E)*l)
    a, bb, lm = 1.0, 1.0, p.sigma_meas / p.e_broad
    for _ in range(50):
        e = a / (a + bb)
        r = (1 - e) * lm / (e + (1 - e) * lm)
        a, bb = a + 1 - r, bb + r
    assert b.expected == pytest.approx(a / (a + bb), rel=1e-12)
    assert b.expected > 0.97


def test_negative_change_rejected():
    with pytest.raises(ValueError):
        bayes_update(StationarityBelief(2, 1), -0.1, "static", P, 0.0)


def test_static_object_within_delay_unchanged():
    p = DecayPolicy(delay_static=30.0)
    b = initial_belief(p, 0.0)
    assert inject_decay(b, "static", p, 10.0, last_seen=0.0) == b


def test_dynamic_decay_strictly_decreasing_and_floored():
    b = initial_belief(P, 0.0)
    prev = b.expected
    seen_floor = False
    for k in range(1, 2000):
        t = P.delay_dynamic + k * 0.5
        b = inject_decay(b, "dynamic", P, t, last_seen=0.0)
        assert b.expected >= 0.6 + CLIP_EPS - 1e-12
        if b.expected > 0.6 + CLIP_EPS + 1e-9:
            assert b.expected < prev
        else:
            seen_floor = True
        prev = b.expected
    assert seen_floor


def test_decay_clip_value():
    # a rate that would take E[v] from 0.9 to 0.4 within 100 one-second ticks
    p = DecayPolicy(delay_static=0.0, delay_dynamic=0.0, rate_dynamic=0.2, max_evidence=1e9)
    b = StationarityBelief(9, 1, last_update=0.0)
    for k in range(1, 101):
        b = inject_decay(b, "dynamic", p, float(k), last_seen=0.0)
    assert b.expected == pytest.approx(0.600001, abs=1e-9)


def test_absence_frames_until_removal():
    b = initial_belief(P, 0.0)
    k = 0
    while b.expected >= 0.6:
        b = observed_absence(b, "dynamic", P, float(k))
        k += 1
    assert 1 <= k <= 5


def test_spurious_absence_recovers():
    b = initial_belief(P, 0.0)
    b = observed_absence(b, "dynamic", P, 1.0)
    assert b.expected <= 0.8 + 1e-12
    for k in range(10):
        b = bayes_update(b, 0.0, "dynamic", P, 2.0 + k)
        if b.expected > 0.8:
            break
    assert b.expected > 0.8 and k < 5


def test_absence_at_clip_drops_below_threshold():
    b = StationarityBelief(0.6 + CLIP_EPS, 0.4 - CLIP_EPS)
    assert observed_absence(b, "dynamic", P, 1.0).expected < 0.6


policies = st.builds(
    lambda ds, dd_frac, rs, rd_mult, sig: DecayPolicy(
        delay_static=ds, delay_dynamic=ds * dd_frac, rate_static=rs, rate_dynamic=rs * rd_mult, sigma_meas=sig
    ),
    st.floats(1.0, 120.0), st.floats(0.0, 1.0), st.floats(1e-3, 0.5), st.floats(1.0, 10.0), st.floats(0.01, 0.2),
)


@given(policies, st.lists(st.floats(0.0, 0.3), min_size=1, max_size=8))
def test_dynamic_never_above_static_after_shorter_delay(policy, changes):
    # identical observation histories, then both objects go out of view
    bs = bd = initial_belief(policy, 0.0)
    for k, e in enumerate(changes):
        bs = bayes_update(bs, e, "static", policy, float(k))
        bd = bayes_update(bd, e, "dynamic", policy, float(k))
    assert bs == bd
    last = float(len(changes) - 1)
    t = last + policy.delay_dynamic
    floor = min(bs.expected, 0.6 + CLIP_EPS)
    for _ in range(400):
        t += 0.5
        bs = inject_decay(bs, "static", policy, t, last)
        bd = inject_decay(bd, "dynamic", policy, t, last)
        assert bd.expected <= bs.expected + 1e-12
        # decay alone never pushes a belief through the removal threshold
        assert min(bd.expected, bs.expected) >= floor - 1e-12


@given(st.floats(0.0, 2.0), st.floats(0.1, 50), st.floats(0.1, 50))
def test_update_keeps_belief_valid(e, a, b):
    nb = bayes_update(StationarityBelief(a, b), e, "dynamic", P, 1.0)
    assert nb.alpha > 0 and nb.beta > 0
    assert 0.0 < nb.expected < 1.0
    assert nb.alpha + nb.beta <= max(a + b + 1.0, P.max_evidence) + 1e-9


def test_updates_are_order_deterministic():
    seq = [0.0, 0.3, 1.0, 0.02]
    runs = []
    for _ in range(2):
        b = initial_belief(P, 0.0)
        for k, e in enumerate(seq):
            b = bayes_update(b, e, "static", P, float(k))
        b = inject_decay(b, "static", P, 200.0, last_seen=3.0)
        runs.append(b)
    assert runs[0] == runs[1]


def test_policy_invariants_enforced():
    with pytest.raises(ValueError):
        DecayPolicy(delay_dynamic=90.0, delay_static=60.0)
    with pytest.raises(ValueError):
        DecayPolicy(rate_dynamic=0.001, rate_static=0.02)
    with pytest.raises(ValueError):
        StationarityBelief(0.0, 1.0)
    assert math.isclose(P.delay("static"), 60.0)
