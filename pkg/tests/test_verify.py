"""Verifier suites: recomputation, tamper detection, reports."""
import copy
import json

import numpy as np
import pytest

from userial.builder import (PADDING, BuildConfig, SeriesArtifact,
                             build_asym_universal, build_universal)
from userial.space import DenseFamilyCode, GridFunction, encode
from userial.systems import SystemSpec
from userial.verify import (check_asym, check_budgets, check_coefficients,
                            check_density, check_integrity,
                            check_kolmogorov_sanity, full_report,
                            structural_report)

W12 = SystemSpec.walsh(12)
W16 = SystemSpec.walsh(16)
HALF = encode(DenseFamilyCode(1, 0, (1, 0)))
SIXTEENTH = encode(DenseFamilyCode(1, 4, (1, 0)))


@pytest.fixture(scope="module")
def almost():
    return build_universal(W12, 2, 0.5, BuildConfig(targets=(HALF, HALF)))


@pytest.fixture(scope="module")
def asym():
    return build_asym_universal(W16, 3, BuildConfig(targets=(SIXTEENTH,) * 3))


def tampered(art, edit):
    """Round trip through JSON with `edit` applied to the payload dict."""
    obj = copy.deepcopy(art.to_json())
    edit(obj)
    return SeriesArtifact.from_json(json.loads(json.dumps(obj)))


def first_payload(obj, step=1, role=None):
    for b in obj["blocks"]:
        if b["kind"] == "Payload" and b["step"] == step and (role is None or b["role"] == role):
            return b
    raise KeyError(step)


def failed_names(rep):
    return {c.name for c in rep.failed()}


# --- fresh artifacts

def test_fresh_artifacts_pass(almost, asym):
    for art in (almost, asym):
        rep = structural_report(art)
        assert rep.overall, rep.failed()


def test_fresh_walsh_coefficients_are_exact(almost):
    rep = check_coefficients(almost)
    assert max(c.value for c in rep.checks) < 1e-10


def test_empty_artifact_is_vacuous():
    art = build_universal(W12, 0)
    for suite in (check_coefficients, check_density, check_budgets,
                  check_kolmogorov_sanity):
        assert suite(art).overall


def test_density_witnesses_of_a_build(almost):
    rep = check_density(almost)
    vals = [c.value for c in rep.find("density witness")]
    assert vals == [0.5, 0.75]


def test_density_skipped_for_asym(asym):
    rep = check_density(asym)
    assert rep.overall and "skipped" in rep.checks[0].note


# --- tampering

def test_tamper_alpha(almost):
    def edit(obj):
        b = first_payload(obj)
        b["payload"]["alphas"][0][0] += 0.1
    bad = tampered(almost, edit)
    assert not check_coefficients(bad).overall
    assert "content digest" in failed_names(check_integrity(bad))


def test_tamper_sign(almost):
    def edit(obj):
        b = first_payload(obj)
        s = b["payload"]["signs"]
        j = int(np.argmax([abs(a[0]) for a in b["payload"]["alphas"]]))
        s[j][0] = -s[j][0]
    bad = tampered(almost, edit)
    rep = structural_report(bad)
    assert not rep.overall
    assert "content digest" in failed_names(rep)


def test_tamper_sign_without_digest_still_caught(almost):
    # drop the stored digest: the recomputed schedule must still catch it
    def edit(obj):
        b = first_payload(obj)
        for s in b["payload"]["signs"]:
            s[0] = 1.0
        del obj["content_digest"]
    bad = tampered(almost, edit)
    rep = structural_report(bad)
    assert not rep.overall
    assert any(n.startswith("d_p") for n in failed_names(rep))


def test_tamper_mask(asym):
    def edit(obj):
        members = obj["steps"][0]["E2"]["members"]
        obj["steps"][0]["E2"]["members"] = members[: len(members) // 2]
    bad = tampered(asym, edit)
    rep = check_asym(bad)
    assert not rep.overall
    assert "|E2_k^c| < 2^-(k+1)" in failed_names(rep)


def test_scaling_third_block_breaks_budget(asym):
    def edit(obj):
        b = first_payload(obj, 3, "H1Q1")
        b["payload"]["alphas"] = [[3 * a[0], 3 * a[1]] for a in b["payload"]["alphas"]]
    bad = tampered(asym, edit)
    rep = check_budgets(bad)
    steps = {c.step for c in rep.failed()}
    assert 3 in steps


def test_removed_padding_fails_density(almost):
    def edit(obj):
        obj["blocks"] = [b for b in obj["blocks"] if b["kind"] != PADDING]
    bad = tampered(almost, edit)
    assert not check_density(bad).overall
    assert "blocks tile 1..N" in failed_names(check_integrity(bad))


# --- kolmogorov sanity and reports

def test_kolmogorov_on_walsh_build(almost):
    rep = check_kolmogorov_sanity(almost)
    assert rep.find("kolmogorov minimum at final checkpoint")[0].passed


def test_full_report_without_corpus_is_structural(almost):
    a = full_report(almost, ())
    b = structural_report(almost)
    assert [c.name for c in a.checks] == [c.name for c in b.checks]


def test_full_report_adds_one_row_per_target(almost):
    f = GridFunction(W12.domain, (np.arange(W12.cells) < W12.cells // 2).astype(float))
    rep = full_report(almost, (f, GridFunction.zeros(W12.domain)))
    rows = [c for c in rep.checks if c.name.startswith("approximation target")]
    assert len(rows) == 2 and rows[0].passed


def test_report_bytes_are_deterministic(almost):
    assert full_report(almost).to_csv() == full_report(almost).to_csv()
    header = full_report(almost).to_csv().splitlines()[0]
    assert header == "check,step,bound,value,pass"


def test_report_provenance(almost):
    prov = structural_report(almost).provenance
    assert prov["artifact_digest"] == almost.digest()
    assert prov["slack"] == 1.05
