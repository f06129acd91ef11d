"""Detection statistics: z, exact tails, windows, calibration, decisions."""

from __future__ import annotations

from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from scipy import stats

from dgmark.detector import (
    CalibratedThreshold,
    DetectorConfig,
    batch_global,
    batch_z_win,
    calibrate,
    decide,
    detect,
    global_z,
    window_scan,
)
from dgmark.errors import (
    CalibrationInfeasibleError,
    ConfigError,
    InvalidInputError,
    InvalidWindowError,
)
from dgmark.partition import MODE_TOKEN_ID_MOD_2, build_partition, match_bits

from oracles import binomial_tail, binomial_tail_float, smallest_g_at_fpr, window_recount

PART2 = build_partition(None, 2, MODE_TOKEN_ID_MOD_2)
PART3 = build_partition(None, 3, MODE_TOKEN_ID_MOD_2)

# exact tail P(Bin(256, 1/2) >= 160), frozen from the big-integer oracle
P_256_160 = 3.802648956855043e-05


def _tokens_with_matches(n: int, g: int) -> np.ndarray:
    """Binary tokens whose first g positions parity-match and the rest do not."""
    tokens = np.arange(n) % 2
    tokens[g:] = 1 - tokens[g:]
    return tokens


def test_tokens_with_matches_helper():
    assert match_bits(PART2, _tokens_with_matches(10, 4)).tolist() == [1] * 4 + [0] * 6


def test_z_at_the_mean_is_zero():
    g, z, p = global_z(_tokens_with_matches(256, 128), PART2)
    assert (g, z) == (128, 0.0)
    assert 0.5 < p < 0.55


def test_z_at_160_of_256():
    g, z, p = global_z(_tokens_with_matches(256, 160), PART2)
    assert (g, z) == (160, 4.0)
    assert p == P_256_160
    assert p == binomial_tail_float(256, 160)


def test_float_tail_is_correctly_rounded():
    assert binomial_tail_float(256, 160) == float(binomial_tail(256, 160))
    assert binomial_tail_float(8, 7) == 9 / 256


def test_extreme_tails():
    g, z, p = global_z(_tokens_with_matches(16, 16), PART2)
    assert (g, p) == (16, 2.0**-16)
    g, z, p = global_z(_tokens_with_matches(16, 0), PART2)
    assert (g, p) == (0, 1.0)


def test_empty_tokens_rejected():
    with pytest.raises(InvalidInputError):
        global_z([], PART2)
    with pytest.raises(InvalidInputError):
        detect(np.empty(0, dtype=np.int64), PART2)


def test_odd_vocab_null_uses_class_probabilities():
    # mod2 over vocab 3: even positions match with p=2/3, odd with p=1/3
    tokens = np.array([0, 1, 0, 1])
    g, z, p = global_z(tokens, PART3)
    assert g == 4
    mean = 2 * Fraction(2, 3) + 2 * Fraction(1, 3)
    var = 2 * Fraction(2, 9) + 2 * Fraction(2, 9)
    assert z == pytest.approx(float((4 - mean) / var**0.5), rel=1e-12)
    assert p == pytest.approx(float(Fraction(4, 81)), rel=1e-10)


def test_odd_vocab_tail_matches_exact_enumeration():
    tokens = np.array([0, 0, 0, 0])  # matches at positions 0 and 2 only
    g, _, p = global_z(tokens, PART3)
    assert g == 2
    probs = [Fraction(2, 3), Fraction(1, 3), Fraction(2, 3), Fraction(1, 3)]
    exact = Fraction(0)
    for bits in product((0, 1), repeat=4):
        if sum(bits) >= 2:
            weight = Fraction(1)
            for b, q in zip(bits, probs):
                weight *= q if b else 1 - q
            exact += weight
    assert p == pytest.approx(float(exact), rel=1e-10)


def test_batch_global_matches_scalar():
    rng = np.random.default_rng(3)
    rows = rng.integers(0, 2, size=(20, 40))
    gs, zs, ps = batch_global(rows, PART2)
    for i in range(rows.shape[0]):
        g, z, p = global_z(rows[i], PART2)
        assert (gs[i], zs[i], ps[i]) == (g, z, p)


def test_g_is_exactly_binomial_under_the_null():
    rng = np.random.default_rng(11)
    part = build_partition(None, 64, MODE_TOKEN_ID_MOD_2)
    rows = rng.integers(0, 64, size=(100_000, 64))
    gs, _, _ = batch_global(rows, part)
    support = np.arange(65)
    expected = stats.binom.pmf(support, 64, 0.5) * rows.shape[0]
    # lump sparse tails so every chi-square cell expects >= 5
    keep = expected >= 5
    lo, hi = support[keep][0], support[keep][-1]
    observed = np.bincount(gs, minlength=65)
    obs = np.concatenate(
        ([observed[:lo].sum()], observed[lo : hi + 1], [observed[hi + 1 :].sum()])
    )
    exp = np.concatenate(([expected[:lo].sum()], expected[lo : hi + 1], [expected[hi + 1 :].sum()]))
    result = stats.chisquare(obs, exp * obs.sum() / exp.sum())
    assert result.pvalue > 0.001


# -- windows -------------------------------------------------------------------


def test_all_match_window_score():
    windows, z_win = window_scan(_tokens_with_matches(8, 8), PART2)
    assert len(windows) == 1
    assert windows[0].match_count == 8
    assert windows[0].z == pytest.approx(2.8284, abs=1e-4)
    assert z_win == pytest.approx(8.0, abs=1e-3)


def test_half_match_window_scores_zero():
    windows, _ = window_scan(_tokens_with_matches(8, 4), PART2)
    assert windows[0].z == 0.0


def test_window_scan_matches_plain_loop_oracle():
    rng = np.random.default_rng(17)
    tokens = rng.integers(0, 4, size=100)
    part = build_partition(None, 4, MODE_TOKEN_ID_MOD_2)
    for stride in (1, 3):
        config = DetectorConfig(window=8, stride=stride)
        windows, z_win = window_scan(tokens, part, config)
        bits = match_bits(part, tokens).tolist()
        expected_windows, expected_z_win = window_recount(bits, 8, stride)
        assert [(w.start, w.match_count) for w in windows] == [
            (s, g) for s, g, _ in expected_windows
        ]
        for w, (_, _, z) in zip(windows, expected_windows):
            assert w.z == pytest.approx(z, rel=1e-12)
        assert z_win == pytest.approx(expected_z_win, rel=1e-12)


def test_null_z_win_concentrates_near_one():
    rng = np.random.default_rng(29)
    tokens = rng.integers(0, 2, size=4096)
    _, z_win = window_scan(tokens, PART2)
    assert 0.9 <= z_win <= 1.1


def test_window_larger_than_sequence_rejected():
    with pytest.raises(InvalidWindowError):
        window_scan(np.zeros(4, dtype=np.int64), PART2, DetectorConfig(window=8))


def test_batch_z_win_matches_scalar():
    rng = np.random.default_rng(31)
    rows = rng.integers(0, 2, size=(10, 64))
    batched = batch_z_win(rows, PART2)
    for i in range(rows.shape[0]):
        _, z_win = window_scan(rows[i], PART2)
        assert batched[i] == pytest.approx(z_win, rel=1e-12)


def test_single_insertion_flips_downstream_window_ratios():
    # alternating-partition parity: shifting a suffix by one position maps
    # every downstream match bit m to 1-m, so fully-post-edit windows on an
    # all-match sequence drop to zero matches exactly
    clean = _tokens_with_matches(64, 64)
    attacked = np.insert(clean, 32, 0)
    windows, _ = window_scan(attacked, PART2)
    for w in windows:
        ratio = w.match_count / 8
        if w.start + 8 <= 32:
            assert ratio == 1.0
        elif w.start > 32:
            assert ratio == 0.0


# -- decisions -----------------------------------------------------------------


def _report(z: float, z_win: float = 0.0):
    from dgmark.detector import DetectionReport

    return DetectionReport(n=8, match_count=4, z=z, p_value=0.5, windows=(), z_win=z_win)


def test_decide_thresholds():
    assert decide(_report(z=4.2), {"z": 4.0}) == {"z": True}
    assert decide(_report(z=4.0), {"z": 4.0}) == {"z": True}
    assert decide(_report(z=-6.0), {"z": 4.0}) == {"z": False}
    assert decide(_report(z=0.0, z_win=2.0), {"z_win": 1.5}) == {"z_win": True}
    with pytest.raises(ConfigError):
        decide(_report(z=0.0), {"p_value": 0.01})


def test_detect_populates_decisions_from_config():
    tokens = _tokens_with_matches(64, 60)
    config = DetectorConfig(z_threshold=4.0, z_win_threshold=1.5)
    report = detect(tokens, PART2, config)
    assert report.match_count == 60
    assert report.decisions == {"z": True, "z_win": True}
    assert report.n == 64
    assert len(report.windows) == 57


def test_detection_needs_only_tokens_and_key():
    tokens = np.random.default_rng(41).integers(0, 2, size=128)
    first = detect(tokens, PART2)
    second = detect(tokens, PART2)
    assert first == second


# -- calibration ---------------------------------------------------------------


def test_exact_calibration_at_n256():
    got = calibrate("exact-binomial", "z", 256, 1e-4)
    assert got.match_count == 159
    assert got.threshold == (159 - 128) / 8
    assert got.achieved_fpr == binomial_tail_float(256, 159)
    assert smallest_g_at_fpr(256, 1e-4) == 159


def test_exact_calibration_at_target_half():
    got = calibrate("exact-binomial", "z", 256, 0.5)
    assert got.match_count == 129
    assert got.threshold == 0.125


@pytest.mark.parametrize("n,target", [(16, 1e-4), (32, 1e-4), (64, 0.01), (128, 0.001)])
def test_exact_calibration_agrees_with_oracle(n, target):
    got = calibrate("exact-binomial", "z", n, target)
    assert got.match_count == smallest_g_at_fpr(n, target)
    assert got.achieved_fpr <= target


def test_infeasible_target_reports_floor():
    with pytest.raises(CalibrationInfeasibleError) as err:
        calibrate("exact-binomial", "z", 4, 1e-3)
    assert err.value.floor == 1 / 16


def test_monte_carlo_z_agrees_with_exact_cutoff():
    exact = calibrate("exact-binomial", "z", 64, 0.05)
    mc = calibrate("monte-carlo", "z", 64, 0.05, num_sequences=100_000, seed=0)
    assert mc.threshold == exact.threshold
    assert mc.achieved_fpr <= 0.05


def test_z_win_monte_carlo_fixture():
    got = calibrate(
        "monte-carlo",
        "z_win",
        256,
        0.01,
        config=DetectorConfig(window=8, stride=1),
        num_sequences=10**6,
        seed=0,
    )
    assert got == CalibratedThreshold(
        threshold=1.4919678714859435, achieved_fpr=0.00996, match_count=None
    )


def test_z_win_exact_mode_rejected():
    with pytest.raises(ConfigError):
        calibrate("exact-binomial", "z_win", 256, 0.01)


def test_calibrate_argument_validation():
    with pytest.raises(ConfigError):
        calibrate("bootstrap", "z", 64, 0.01)
    with pytest.raises(ConfigError):
        calibrate("exact-binomial", "auc", 64, 0.01)
    with pytest.raises(ConfigError):
        calibrate("exact-binomial", "z", 64, 0.0)
    with pytest.raises(ConfigError):
        calibrate("exact-binomial", "z", 64, 0.6)
    with pytest.raises(InvalidWindowError):
        calibrate("monte-carlo", "z_win", 4, 0.01, config=DetectorConfig(window=8))


def test_under_resolved_monte_carlo_warns():
    with pytest.warns(RuntimeWarning):
        calibrate("monte-carlo", "z", 16, 1e-4, num_sequences=1000, seed=0)


def test_detector_config_validation():
    with pytest.raises(ConfigError):
        DetectorConfig(window=0)
    with pytest.raises(ConfigError):
        DetectorConfig(stride=0)
