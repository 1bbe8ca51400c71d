"""Walsh and trigonometric systems, coefficients, partial sums, kernels."""
import math

import numpy as np
import pytest

from userial.space import GridFunction, SpaceError, integrate, l1_norm
from userial.systems import (CoefficientBlock, SeriesError, SystemSpec,
                             all_coefficients, coefficient, coefficients_at,
                             evaluate_basis, fejer_kernel, partial_sum,
                             synthesize, walsh_dirichlet)

WAL = SystemSpec.walsh(12)
TRI = SystemSpec.trig(12)
TRI_POS = SystemSpec.trig(12, "positive")


def paley_oracle(k, x):
    """Paley function from Rademacher factors: w_k = prod r_j^{bit j of k}."""
    out = np.ones_like(x)
    j = 0
    while k >> j:
        if (k >> j) & 1:
            out *= np.where(np.floor(x * 2 ** (j + 1)) % 2 == 0, 1.0, -1.0)
        j += 1
    return out


# --- basis

def test_trig_first_basis_function_is_one_near_zero():
    phi = evaluate_basis(TRI, 1).values
    assert np.all(phi == 1)     # symmetric index 1 is frequency 0
    phi = evaluate_basis(TRI_POS, 1)
    x = TRI_POS.domain.midpoints()
    assert np.allclose(phi.values, np.exp(1j * x))


def test_walsh_first_function_is_constant():
    assert np.all(evaluate_basis(WAL, 1).values == 1)


@pytest.mark.parametrize("n", [1, 2, 3, 7, 64, 1000, 4096])
def test_walsh_matches_rademacher_products(n):
    x = WAL.domain.midpoints()
    assert np.array_equal(evaluate_basis(WAL, n).values.real, paley_oracle(n - 1, x))


def test_walsh_index_beyond_grid():
    with pytest.raises(SpaceError, match="index beyond grid resolution"):
        evaluate_basis(WAL, WAL.cells + 1)


def test_first_four_walsh_functions_sum_to_dirichlet():
    s = sum(evaluate_basis(WAL, n).values for n in range(1, 5))
    x = WAL.domain.midpoints()
    assert np.array_equal(s, np.where(x < 0.25, 4.0, 0.0))


@pytest.mark.parametrize("s", [0, 1, 3, 6, 12])
def test_walsh_dirichlet_identity(s):
    f = partial_sum(WAL, [walsh_dirichlet(WAL, s)], 1 << s, use_signs=False)
    x = WAL.domain.midpoints()
    assert np.array_equal(f.values, np.where(x < 2.0 ** -s, 2.0 ** s, 0.0))


# --- coefficients

@pytest.mark.parametrize("sys", [WAL, TRI, TRI_POS], ids=["walsh", "trig", "trig+"])
def test_biorthonormality(sys):
    M = np.array([[coefficient(sys, n, evaluate_basis(sys, m)) for m in range(1, 65)]
                  for n in range(1, 65)])
    if sys is WAL:
        assert np.array_equal(M, np.eye(64))
    else:
        assert np.abs(M - np.eye(64)).max() < 1e-10


def test_coefficient_examples():
    for sys in (WAL, TRI):
        one = evaluate_basis(sys, 1)
        assert coefficient(sys, 1, one) == pytest.approx(1, abs=1e-12)
        assert coefficient(sys, 2, one) == pytest.approx(0, abs=1e-12)
        f = GridFunction(sys.domain, 3 * evaluate_basis(sys, 5).values)
        assert coefficient(sys, 5, f) == pytest.approx(3, abs=1e-12)


def test_trig_coefficient_is_normalised_integral():
    # independent oracle: (1/2pi) * midpoint integral of f e^{-ikx}
    rng = np.random.default_rng(3)
    f = GridFunction(TRI.domain, rng.standard_normal(TRI.cells) + 1j * rng.standard_normal(TRI.cells))
    x = TRI.domain.midpoints()
    for n in (1, 2, 3, 40, 101):
        k = TRI.frequency(n)
        ref = integrate(GridFunction(TRI.domain, f.values * np.exp(-1j * k * x))) / (2 * math.pi)
        assert coefficient(TRI, n, f) == pytest.approx(ref, abs=1e-12)


def test_fast_coefficients_agree_with_direct_ones():
    rng = np.random.default_rng(5)
    for sys in (WAL, TRI, TRI_POS):
        f = GridFunction(sys.domain, rng.standard_normal(sys.cells))
        idx = np.array([1, 2, 3, 17, 200, 1000])
        direct = np.array([coefficient(sys, int(n), f) for n in idx])
        assert np.abs(coefficients_at(sys, f, idx) - direct).max() < 1e-12


def test_walsh_parseval_reconstruction_is_exact():
    rng = np.random.default_rng(7)
    vals = rng.integers(-8, 9, WAL.cells) / 8.0
    f = GridFunction(WAL.domain, vals)
    c = all_coefficients(WAL, f)
    g = synthesize(WAL, np.arange(1, WAL.cells + 1), c)
    assert np.array_equal(g.values, f.values)


# --- partial sums

def test_partial_sum_examples():
    assert not np.any(partial_sum(WAL, [], 10, True).values)
    blk = CoefficientBlock(5, 5, [1.0], [-1.0])
    got = partial_sum(TRI, [blk], 5, True).values
    assert np.allclose(got, -evaluate_basis(TRI, 5).values, rtol=0, atol=1e-12)
    four = partial_sum(WAL, [CoefficientBlock(1, 4, np.ones(4))], 4, True)
    x = WAL.domain.midpoints()
    assert np.array_equal(four.values, np.where(x < 0.25, 4.0, 0.0))


def test_partial_sum_truncates_at_upto():
    blk = CoefficientBlock(1, 4, np.ones(4))
    assert partial_sum(WAL, [blk], 2, False) == GridFunction(
        WAL.domain, evaluate_basis(WAL, 1).values + evaluate_basis(WAL, 2).values)


def test_partial_sum_rejects_overlaps():
    a = CoefficientBlock(1, 4, np.ones(4))
    b = CoefficientBlock(4, 6, np.ones(3))
    with pytest.raises(SeriesError, match="inconsistent series"):
        partial_sum(WAL, [a, b], 6, True)


def test_partial_sum_is_additive_and_linear():
    rng = np.random.default_rng(11)
    a = CoefficientBlock(1, 8, rng.standard_normal(8), rng.choice([-1.0, 1.0], 8))
    b = CoefficientBlock(9, 30, rng.standard_normal(22), rng.choice([-1.0, 1.0], 22))
    for sys in (WAL, TRI):
        both = partial_sum(sys, [a, b], 30, True).values
        sep = partial_sum(sys, [a], 30, True).values + partial_sum(sys, [b], 30, True).values
        assert np.allclose(both, sep, atol=1e-12)
        twice = partial_sum(sys, [a.with_alphas(2 * a.alphas)], 8, True).values
        assert np.allclose(twice, 2 * partial_sum(sys, [a], 8, True).values, atol=1e-12)


def test_coefficient_block_validation():
    with pytest.raises(SeriesError):
        CoefficientBlock(0, 3, np.ones(4))
    with pytest.raises(SeriesError):
        CoefficientBlock(1, 3, np.ones(2))
    with pytest.raises(SeriesError, match="sign set"):
        CoefficientBlock(1, 2, np.ones(2), [1, 0.5])
    blk = CoefficientBlock(3, 5, [1, 2j, -1], [1, -1, 1])
    assert CoefficientBlock.from_json(blk.to_json()) == blk


# --- kernels

def test_fejer_kernel_weights():
    k = fejer_kernel(TRI_POS, 1)
    assert (k.start, k.end) == (1, 3)
    assert np.allclose(k.alphas, [0.5, 1, 0.5])


@pytest.mark.parametrize("M", [1, 5, 40])
def test_fejer_kernel_is_positive(M):
    # centred kernel: the L1 norm equals the integral, which is 2 pi
    blk = fejer_kernel(TRI, M)
    K = partial_sum(TRI, [blk], blk.end, False)
    assert np.all(K.values.real > -1e-12)
    assert l1_norm(K) == pytest.approx(integrate(K).real, rel=1e-9)
    assert l1_norm(K) == pytest.approx(2 * math.pi, rel=0.01)
    # positive enumeration: the same kernel times a unimodular factor
    blk = fejer_kernel(TRI_POS, M)
    Kp = partial_sum(TRI_POS, [blk], blk.end, False)
    assert l1_norm(Kp) == pytest.approx(l1_norm(K), rel=1e-9)


def test_fejer_modulation_preserves_norm():
    base = fejer_kernel(TRI_POS, 8)
    mod = fejer_kernel(TRI_POS, 8, modulation=100)
    n0 = l1_norm(partial_sum(TRI_POS, [base], base.end, False))
    n1 = l1_norm(partial_sum(TRI_POS, [mod], mod.end, False))
    assert n1 == pytest.approx(n0, rel=1e-12)


def test_fejer_aliasing_guard():
    with pytest.raises(SpaceError, match="aliasing risk"):
        fejer_kernel(TRI_POS, TRI_POS.cells // 8, modulation=10)
