"""Inductive engines, persistence, approximation runs and modification."""
from fractions import Fraction

import numpy as np
import pytest

from userial.builder import (ASYM, H1Q1, H2Q2, PADDING, PAYLOAD, BlockRecord,
                             BuildConfig, BuildError, DepthExhausted,
                             InsufficientDepth, SeriesArtifact,
                             approximate_with, build_asym_universal,
                             build_universal, checkpoints, modify_to_universal,
                             residual_bound)
from userial.space import (DenseFamilyCode, GridFunction, encode,
                           enumerate_dense, l1_norm, lp_distance)
from userial.systems import (CoefficientBlock, SystemSpec, coefficients_at,
                             partial_sum)
from userial.verify import density_witnesses, structural_report

W12 = SystemSpec.walsh(12)
W16 = SystemSpec.walsh(16)
HALF = encode(DenseFamilyCode(1, 0, (1, 0)))                 # chi_[0,1/2)
SIXTEENTH = encode(DenseFamilyCode(1, 4, (1, 0)))            # chi_[0,1/2) / 16


@pytest.fixture(scope="module")
def almost():
    return build_universal(W12, 2, 0.5, BuildConfig(targets=(HALF, HALF)))


@pytest.fixture(scope="module")
def asym():
    cfg = BuildConfig(targets=(SIXTEENTH,) * 3)
    return build_asym_universal(W16, 3, cfg)


# --- schedule bookkeeping

def fake_records(m_stars):
    recs, M = [], 1
    for k, ms in enumerate(m_stars, start=1):
        blk = CoefficientBlock(M, ms - 1, np.zeros(ms - M))
        recs.append(BlockRecord(PAYLOAD, M, ms - 1, k, payload=blk))
        M = 2 ** k * ms
        recs.append(BlockRecord(PADDING, ms, M - 1, k))
    return recs


def test_density_first_checkpoint():
    (k, m_star, m_next, w), = density_witnesses(fake_records([10]))
    assert (m_star, m_next, w) == (10, 20, Fraction(1, 2))


def test_density_three_step_schedule():
    rows = density_witnesses(fake_records([10, 60, 600]))
    assert [r[2] for r in rows] == [20, 240, 4800]
    assert [r[3] for r in rows] == [Fraction(1, 2), Fraction(3, 4), Fraction(7, 8)]


# --- almost universal build

def test_first_step_with_zero_target():
    art = build_universal(W12, 1)
    assert art.steps[0].target == 1 and art.steps[0].residual_norm == 0
    assert l1_norm(art.U) < 0.5
    assert [r.kind for r in art.blocks] == [PAYLOAD, PADDING]


def test_empty_build():
    art = build_universal(W12, 0)
    assert art.blocks == () and not np.any(art.U.values)
    assert structural_report(art).overall


def test_almost_build_schedule(almost):
    pays = almost.payloads()
    pads = [r for r in almost.blocks if r.kind == PADDING]
    assert pays[0].start == 1
    for k, (pay, pad) in enumerate(zip(pays, pads), start=1):
        assert pad.start == pay.end + 1
        assert pad.end + 1 == 2 ** k * (pay.end + 1)
        assert l1_norm(almost.unsigned_sum(pay.end) - almost.unsigned_sum(pay.start - 1)) <= 2.0 ** -k
    assert pays[1].start == pads[0].end + 1


def test_almost_build_chained_estimate(almost):
    f = enumerate_dense(HALF, W12.domain)
    for k, N in checkpoints(almost):
        assert lp_distance(f, almost.signed_sum(N), 0.5) < 1.0 / k


def test_almost_build_passes_verifier(almost):
    rep = structural_report(almost)
    assert rep.overall, rep.failed()


def test_coefficients_of_U_match_payloads(almost):
    for r in almost.payloads():
        c = coefficients_at(W12, almost.U, r.payload.indices())
        assert np.abs(c - r.payload.alphas).max() < 1e-10


def test_build_error_carries_partial():
    # enumeration-order targets: f_2 = 1 is out of reach at this grid
    with pytest.raises(BuildError) as info:
        build_universal(W12, 2)
    assert info.value.step == 2
    assert len(info.value.partial.steps) == 1


def test_builds_are_deterministic_and_round_trip(almost):
    again = build_universal(W12, 2, 0.5, BuildConfig(targets=(HALF, HALF)))
    text = almost.dumps()
    assert again.dumps() == text
    back = SeriesArtifact.loads(text)
    assert back.dumps() == text
    assert back == almost


# --- approximation runs

def test_approximate_dense_target(almost):
    f = enumerate_dense(HALF, W12.domain)
    run = approximate_with(almost, f, 0.5)
    assert run.checkpoints[-1][2] < 0.5
    assert run.achieved < 0.5


def test_approximate_first_signed_sum(almost):
    k, N = checkpoints(almost)[0]
    Q1 = almost.signed_sum(N)
    run = approximate_with(almost, Q1, 1.0)
    assert run.checkpoints[0][2] == 0.0


def test_insufficient_depth_reports_best(almost):
    far = GridFunction.constant(W12.domain, -3.0)
    with pytest.raises(InsufficientDepth) as info:
        approximate_with(almost, far, 0.1)
    assert np.isfinite(info.value.best) and info.value.run is not None


# --- asymptotic build and modification

def test_asym_build_bounds(asym):
    assert asym.mode == ASYM and len(asym.steps) == 3
    dom = W16.domain
    for st in asym.steps:
        k = st.k
        for mask in (st.E1, st.E2):
            assert Fraction(dom.cells - len(mask), dom.cells) < Fraction(1, 2 ** (k + 1))
        for role in (H1Q1, H2Q2):
            r = asym.step_block(k, role)
            H = asym.unsigned_sum(r.end) - asym.unsigned_sum(r.start - 1)
            assert l1_norm(H) < 2.0 ** -(k + 1)
    F = asym.asym_sets.F
    for m in F:
        assert Fraction(dom.cells - len(F[m]), dom.cells) < Fraction(1, 2 ** m)
        if m + 1 in F:
            assert set(F[m].members) <= set(F[m + 1].members)


def test_asym_signs_are_one_on_first_blocks(asym):
    N = asym.last_index()
    manual = GridFunction.zeros(W16.domain)
    for r in asym.payloads():
        signs = np.ones(len(r.payload)) if r.role == H1Q1 else r.payload.signs
        manual = manual + partial_sum(W16, [r.payload.with_signs(signs)], r.end, True)
    assert np.allclose(asym.signed_sum(N).values, manual.values, atol=1e-12)


def test_asym_build_passes_verifier(asym):
    rep = structural_report(asym)
    assert rep.overall, rep.failed()


def test_literal_second_target_also_verifies():
    cfg = BuildConfig(targets=(SIXTEENTH,) * 3, second_target="literal")
    art = build_asym_universal(W16, 3, cfg)
    assert structural_report(art).overall
    back = SeriesArtifact.loads(art.dumps())
    assert back.build_config["config"]["second_target"] == "literal"


def test_residual_bound_arithmetic():
    C = 5.25
    assert residual_bound(5, C) == pytest.approx(3 / 32 + (C + 1) / 4)


def test_modify_zero(asym):
    g = GridFunction.zeros(W16.domain)
    mod = modify_to_universal(asym, g, 1, 1)
    assert len(mod.chain) == 1
    link = mod.chain[0]
    assert link["sum_fk_minus_g"] < link["sum_fk_bound"]
    assert link["nu_gap"] < link["nu_bound"]
    cells = mod.certified.as_bool()
    assert np.array_equal(mod.V.values[cells], g.values[cells])
    assert set(mod.certified.members) <= set(asym.asym_sets.E[1].members)


def test_modify_coefficient_relation(asym):
    g = GridFunction(W16.domain, (np.arange(W16.cells) < W16.cells // 3) / 3.0)
    mod = modify_to_universal(asym, g, 1, 1)
    worst = 0.0
    for blk in mod.epsilon_blocks(asym):
        c = coefficients_at(W16, mod.V, blk.indices())
        worst = max(worst, float(np.abs(c - blk.signs * blk.alphas).max()))
    assert worst < 1.05 * mod.residual_bound


def test_modify_signs_are_one_off_the_chosen_blocks(asym):
    mod = modify_to_universal(asym, GridFunction.zeros(W16.domain), 1, 1)
    flipped = set(mod.sign_ranges)
    for r, blk in zip(asym.payloads(), mod.epsilon_blocks(asym)):
        if (r.start, r.end) not in flipped:
            assert np.all(blk.signs == 1)
        else:
            assert r.role == H1Q1


def test_modify_depth_exhausted(asym):
    with pytest.raises(DepthExhausted) as info:
        modify_to_universal(asym, GridFunction.zeros(W16.domain), 1, 2)
    assert info.value.q == 2 and len(info.value.partial) == 1


def test_modify_needs_asym_intermediates(almost):
    with pytest.raises(ValueError, match="artifact lacks asym intermediates"):
        modify_to_universal(almost, GridFunction.zeros(W12.domain), 1, 1)
