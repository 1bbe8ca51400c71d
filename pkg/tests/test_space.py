"""Grid functions, quadrature, metrics and the dense family."""
import json
import math

import numpy as np
import pytest

from userial.space import (DenseFamilyCode, Domain, GridFunction, MaskSet,
                           Metric, SpaceError, decode, encode, enumerate_dense,
                           index_from_json, index_to_json, integrate, l1_norm,
                           locate_close, lp_distance, measure_metric, quantize)

TRIG = Domain.trig(12)
UNIT = Domain.dyadic(12)


def half_indicator(dom):
    return GridFunction(dom, (np.arange(dom.cells) < dom.cells // 2).astype(float))


# --- domain and grid functions

def test_domain_rejects_small_or_odd_grids():
    with pytest.raises(SpaceError):
        Domain.dyadic(3)
    with pytest.raises(SpaceError):
        Domain("DyadicUnit", 48)


def test_domain_geometry():
    assert UNIT.cell_width == 2.0 ** -12
    assert TRIG.length == pytest.approx(2 * math.pi)
    x = UNIT.midpoints()
    assert x[0] == 2.0 ** -13 and x[-1] == 1 - 2.0 ** -13


def test_gridfunction_rejects_nonfinite_and_wrong_length():
    with pytest.raises(SpaceError):
        GridFunction(UNIT, np.full(UNIT.cells, np.nan))
    with pytest.raises(SpaceError):
        GridFunction(UNIT, np.zeros(7))


def test_gridfunction_json_round_trip():
    f = GridFunction(UNIT, np.arange(UNIT.cells) * (0.5 - 0.25j))
    obj = f.to_json()
    assert set(obj) == {"domain", "re", "im"}
    assert GridFunction.from_json(json.loads(json.dumps(obj))) == f


def test_maskset_measures_and_json():
    m = MaskSet(UNIT, [5, 1, 3])
    assert list(m.members) == [1, 3, 5]
    assert m.measure() == 3 * UNIT.cell_width
    assert m.complement_measure() == (UNIT.cells - 3) * UNIT.cell_width
    c = m.complement()
    assert len(c) + len(m) == UNIT.cells and not np.any(c.as_bool() & m.as_bool())
    assert MaskSet.from_json(m.to_json()) == m


# --- quadrature

def test_integrate_examples():
    assert integrate(GridFunction.zeros(TRIG)) == 0
    assert integrate(GridFunction.constant(TRIG, 1.0)).real == pytest.approx(2 * math.pi, abs=1e-12)
    assert integrate(half_indicator(UNIT)) == 0.5


def test_l1_norm_examples():
    assert l1_norm(GridFunction.zeros(TRIG)) == 0
    assert l1_norm(GridFunction.constant(TRIG, -1.0)) == pytest.approx(2 * math.pi, abs=1e-12)


def test_l1_norm_of_sine_matches_closed_form():
    # independent oracle: the midpoint sum of |sin| over each half period
    # is h / sin(h/2) with h the cell width; both halves tend to 4
    f = GridFunction.from_callable(TRIG, np.sin)
    h = TRIG.cell_width
    assert abs(l1_norm(f) - 4.0) < 1e-3
    assert l1_norm(f) == pytest.approx(2 * h / math.sin(h / 2), rel=1e-12)


def test_lp_distance_examples():
    f = GridFunction.constant(TRIG, 1.0)
    assert lp_distance(f, f, 0.5) == 0
    assert lp_distance(f, GridFunction.zeros(TRIG), 0.5) == pytest.approx(2 * math.pi, abs=1e-12)
    four = GridFunction.constant(UNIT, 4.0)
    assert lp_distance(four, GridFunction.zeros(UNIT), 0.5) == 2.0


def test_lp_distance_rejects_mixed_domains():
    with pytest.raises(SpaceError, match="incompatible domains"):
        lp_distance(GridFunction.zeros(TRIG), GridFunction.zeros(UNIT), 0.5)


def test_measure_metric_examples():
    one = GridFunction.constant(TRIG, 1.0)
    z = GridFunction.zeros(TRIG)
    assert measure_metric(one, one) == 0
    assert measure_metric(one, z) == pytest.approx(math.pi, abs=1e-12)
    assert measure_metric(half_indicator(UNIT), GridFunction.zeros(UNIT)) == 0.25


# --- dense family

def test_first_indices():
    assert encode(decode(1)) == 1
    assert not np.any(enumerate_dense(1, UNIT).values)
    assert np.all(enumerate_dense(2, UNIT).values == 1)
    # pair (s, v) is listed by n = 2^s (2v + 1); n = 1 holds the nine codes
    # (0, 0) in zigzag order, so index 10 is zero again at two cells
    assert decode(9) == DenseFamilyCode(0, 0, ((-1 - 1j),))
    assert decode(10) == DenseFamilyCode(1, 0, (0j, 0j))


def test_encode_decode_round_trip_first_thousand():
    assert all(encode(decode(m)) == m for m in range(1, 1001))


def test_step_function_encodes_exactly():
    vals = np.array([0.5, -1, 0.25j, 0])
    h = GridFunction(UNIT, np.repeat(vals, UNIT.cells // 4))
    code = quantize(h, 2, 2)
    assert enumerate_dense(encode(code), UNIT) == h


def test_grid_too_coarse():
    code = DenseFamilyCode(5, 0, (0j,) * 32)
    with pytest.raises(SpaceError, match="grid too coarse"):
        enumerate_dense(encode(code), Domain.dyadic(4))


def test_locate_close_examples():
    assert locate_close(GridFunction.zeros(UNIT), 1e-9) == 1
    h = half_indicator(UNIT)
    m = locate_close(h, 1e-12)
    assert enumerate_dense(m, UNIT) == h
    saw = GridFunction.from_callable(TRIG, lambda x: x / math.pi)
    m = locate_close(saw, 0.1, "L1")
    assert l1_norm(saw - enumerate_dense(m, TRIG)) < 0.1


def test_locate_close_fails_beyond_bounds():
    big = GridFunction.constant(UNIT, 1e30)
    with pytest.raises(SpaceError, match="target not quantizable"):
        locate_close(big, 1e-3)


def test_locate_close_honours_every_metric():
    h = GridFunction.from_callable(UNIT, lambda x: np.cos(7 * x))
    for met in ("L1", "L0", Metric.lp(0.25)):
        m = locate_close(h, 0.05, met)
        from userial.space import as_metric
        assert as_metric(met).distance(h, enumerate_dense(m, UNIT)) < 0.05


def test_index_json_is_hex_and_round_trips():
    big = 10 ** 5000 + 7
    assert index_from_json(index_to_json(big)) == big
    assert index_to_json(255) == "0xff"


def test_pair_offsets_match_brute_force():
    # independent oracle: count every code of every earlier pair directly
    from userial.space import _offset_n, _pair
    total = 0
    for n in range(1, 160):
        assert _offset_n(n) == total
        s, v = _pair(n)
        total += (2 * 4 ** v + 1) ** (2 << s)


@pytest.mark.parametrize("s,v", [(6, 3), (12, 8), (0, 300)])
def test_large_codes_round_trip(s, v):
    rng = np.random.default_rng(s * 1000 + v)
    b = 4 ** v if v < 20 else 2 ** 62
    nums = tuple(complex(int(rng.integers(-b, b + 1)), int(rng.integers(-b, b + 1)))
                 for _ in range(1 << s))
    code = DenseFamilyCode(s, v, nums)
    m = encode(code)
    assert decode(m) == code and decode(m - 1) != code
