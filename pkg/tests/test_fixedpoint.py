"""Q-format arithmetic checks against exact integer/real oracles."""

import math

import numpy as np
import pytest

from ecgarr.fixedpoint import (
    saturate,
    FixedPoint,
    QFormat,
    from_fixed,
    fx_add,
    fx_dot,
    fx_mul,
    fx_shr,
    quantize_raw_array,
    rne_shift,
    rne_shift_array,
    saturate_array,
    to_fixed,
)

Q24_12 = QFormat(24, 12)


def test_format_properties():
    assert Q24_12.scale == 4096
    assert Q24_12.raw_min == -(2 ** 23)
    assert Q24_12.raw_max == 2 ** 23 - 1
    assert Q24_12.max_value == (2 ** 23 - 1) / 4096


def test_format_validation():
    with pytest.raises(ValueError):
        QFormat(1, 0)
    with pytest.raises(ValueError):
        QFormat(8, 8)
    with pytest.raises(ValueError):
        QFormat(8, -1)


def test_to_fixed_known_values():
    assert to_fixed(1.0, Q24_12).raw == 4096
    assert to_fixed(-0.25, Q24_12).raw == -1024
    sat = to_fixed(3000.0, Q24_12)
    assert sat.raw == 2 ** 23 - 1
    assert sat.value == pytest.approx(2047.999755859375)
    assert to_fixed(-3000.0, Q24_12).raw == -(2 ** 23)


def test_to_fixed_ties_round_to_even():
    # 1.5/4096 sits exactly between raws 1 and 2; even wins.
    assert to_fixed(1.5 / 4096, Q24_12).raw == 2
    assert to_fixed(2.5 / 4096, Q24_12).raw == 2
    assert to_fixed(-1.5 / 4096, Q24_12).raw == -2
    assert to_fixed(0.5 / 4096, Q24_12).raw == 0


def test_to_fixed_rejects_nan_saturates_inf():
    with pytest.raises(ValueError):
        to_fixed(float("nan"), Q24_12)
    assert to_fixed(float("inf"), Q24_12).raw == Q24_12.raw_max
    assert to_fixed(float("-inf"), Q24_12).raw == Q24_12.raw_min


def test_quantization_error_bound():
    rng = np.random.default_rng(42)
    half_ulp = 2.0 ** -13
    for x in rng.uniform(-2047.9, 2047.9, size=2000):
        err = abs(from_fixed(to_fixed(float(x), Q24_12)) - x)
        assert err <= half_ulp + 1e-15


def test_rne_shift_matches_integer_oracle():
    rng = np.random.default_rng(7)
    for _ in range(2000):
        raw = int(rng.integers(-(2 ** 30), 2 ** 30))
        k = int(rng.integers(1, 16))
        # Oracle: round-half-even of the exact rational raw / 2^k.
        q, rem = divmod(raw, 1 << k)
        half = 1 << (k - 1)
        expect = q + (1 if (rem > half or (rem == half and q % 2 == 1)) else 0)
        assert rne_shift(raw, k) == expect


def test_fx_mul_known_and_randomized():
    half = to_fixed(0.5, Q24_12)
    assert fx_mul(half, half).value == 0.25
    rng = np.random.default_rng(3)
    for _ in range(3000):
        a = to_fixed(float(rng.uniform(-30, 30)), Q24_12)
        b = to_fixed(float(rng.uniform(-30, 30)), Q24_12)
        got = from_fixed(fx_mul(a, b))
        assert abs(got - a.value * b.value) <= 2.0 ** -12


def test_fx_shr():
    assert fx_shr(to_fixed(1.0, Q24_12), 1).value == 0.5
    assert fx_shr(to_fixed(1.0, Q24_12), 0).value == 1.0
    # raw 3 >> 1 has remainder exactly half: rounds to even quotient 2.
    assert fx_shr(FixedPoint(3, Q24_12), 1).raw == 2
    assert fx_shr(FixedPoint(-3, Q24_12), 1).raw == -2
    with pytest.raises(ValueError):
        fx_shr(to_fixed(1.0, Q24_12), -1)


def test_fx_add_saturates():
    top = FixedPoint(Q24_12.raw_max, Q24_12)
    assert fx_add(top, top).raw == Q24_12.raw_max
    bottom = FixedPoint(Q24_12.raw_min, Q24_12)
    assert fx_add(bottom, bottom).raw == Q24_12.raw_min
    assert fx_add(top, bottom).raw == -1


def test_saturation_idempotent():
    fmt = QFormat(8, 4)
    top = FixedPoint(fmt.raw_max, fmt)
    for _ in range(4):
        top = fx_add(top, to_fixed(1.0, fmt))
        assert top.raw == fmt.raw_max
        top = fx_mul(top, to_fixed(3.0, fmt))
        assert top.raw == fmt.raw_max


def test_commutativity():
    rng = np.random.default_rng(11)
    for _ in range(500):
        a = to_fixed(float(rng.uniform(-40, 40)), Q24_12)
        b = to_fixed(float(rng.uniform(-40, 40)), Q24_12)
        assert fx_add(a, b) == fx_add(b, a)
        assert fx_mul(a, b) == fx_mul(b, a)


def test_add_associative_without_saturation():
    rng = np.random.default_rng(13)
    for _ in range(500):
        vals = [to_fixed(float(v), Q24_12) for v in rng.uniform(-10, 10, 3)]
        a, b, c = vals
        assert fx_add(fx_add(a, b), c) == fx_add(a, fx_add(b, c))


def test_format_mismatch_rejected():
    with pytest.raises(ValueError):
        fx_add(to_fixed(1.0, QFormat(24, 12)), to_fixed(1.0, QFormat(16, 8)))


def test_fx_dot_against_real_oracle():
    rng = np.random.default_rng(5)
    for _ in range(300):
        w = [to_fixed(float(v), Q24_12) for v in rng.uniform(-2, 2, 12)]
        x = [to_fixed(float(v), Q24_12) for v in rng.uniform(-1, 1, 12)]
        bias = to_fixed(float(rng.uniform(-1, 1)), Q24_12)
        got = from_fixed(fx_dot(w, x, bias))
        want = sum(a.value * b.value for a, b in zip(w, x)) + bias.value
        # One final rounding of the exact wide accumulation.
        assert abs(got - want) <= 2.0 ** -13 + 1e-12


def test_fx_dot_single_rounding_is_exact_on_raws():
    # The accumulator must not round per term: build a case where per-term
    # rounding would differ from one final rounding.
    fmt = QFormat(24, 12)
    w = [FixedPoint(1, fmt)] * 3          # 3 * (1/4096)
    x = [FixedPoint(2048, fmt)] * 3       # 0.5 each
    # exact sum = 3 * (1*2048) / 4096^2 = 6144 / 2^24 -> raw 1.5 -> RNE -> 2
    assert fx_dot(w, x).raw == 2
    # per-term rounding would give 3 * rne(2048/4096 = 0.5) = 3 * 0 = 0


# ---------------------------------------------------------------------------
# vectorized raw helpers


def test_rne_shift_array_matches_scalar():
    rng = np.random.default_rng(21)
    raws = rng.integers(-(1 << 40), 1 << 40, size=5000)
    for k in (0, 1, 5, 12):
        got = rne_shift_array(raws, k)
        want = [rne_shift(int(r), k) for r in raws]
        assert got.tolist() == want
    assert rne_shift_array(np.asarray([3]), -2).tolist() == [12]


def test_rne_shift_array_tie_cases():
    # 6144 = 1.5 * 4096: tie rounds to even quotient 2
    assert rne_shift_array(np.asarray([6144, 2048, -2048, -6144]), 12).tolist() == [
        rne_shift(6144, 12),
        rne_shift(2048, 12),
        rne_shift(-2048, 12),
        rne_shift(-6144, 12),
    ]


def test_saturate_array_matches_scalar():
    fmt = QFormat(8, 4)
    raws = np.asarray([-500, -129, -128, 0, 127, 128, 500])
    assert saturate_array(raws, fmt).tolist() == [saturate(int(r), fmt) for r in raws]


def test_quantize_raw_array_matches_to_fixed():
    fmt = QFormat(24, 12)
    rng = np.random.default_rng(22)
    xs = np.concatenate([
        rng.uniform(-3000, 3000, size=2000),
        np.asarray([1.5 / 4096, 2.5 / 4096, 0.5 / 4096, -1.5 / 4096]),  # ties
        np.asarray([np.inf, -np.inf, 0.0, 2047.99975, -2048.0]),
    ])
    got = quantize_raw_array(xs, fmt)
    want = [to_fixed(float(x), fmt).raw for x in xs]
    assert got.tolist() == want
    with pytest.raises(ValueError):
        quantize_raw_array(np.asarray([0.0, np.nan]), fmt)
