"""Independent invariant suites over built artifacts.

Every number is recomputed from blocks, masks and grid functions; stored
norms and achieved values in the certificate summaries are never read.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .builder import (ALMOST, ASYM, H1Q1, H2Q2, PADDING, PAYLOAD, PLAIN,
                      InsufficientDepth, SeriesArtifact, approximate_with,
                      checkpoints)
from .report import SLACK, CheckReport
from .space import (DYADIC_UNIT, GridFunction, MaskSet, enumerate_dense, l1_norm,
                    lp_distance)
from .systems import WALSH, coefficients_at, partial_sum

COEF_TOL = {WALSH: 1e-10, "Trig": 1e-6}


def _report(artifact: SeriesArtifact) -> CheckReport:
    return CheckReport(provenance={"artifact_digest": artifact.digest(),
                                   "config": artifact.build_config,
                                   "tool_version": __version__, "slack": SLACK})


def _block_sum(artifact, rec, signed: bool) -> GridFunction:
    return partial_sum(artifact.system, [rec.payload], rec.end, use_signs=signed)


def check_integrity(artifact: SeriesArtifact) -> CheckReport:
    """Stored content digest against the recomputed one, plus block tiling."""
    rep = _report(artifact)
    if artifact.loaded_digest is not None:
        same = artifact.loaded_digest == artifact.digest()
        rep.add("content digest", 0, 0 if same else 1, same)
    nxt, gaps = 1, 0
    for r in artifact.blocks:
        if r.start != nxt or r.end < r.start:
            gaps += 1
        nxt = r.end + 1
    rep.add("blocks tile 1..N", 0, gaps, gaps == 0)
    allowed = {complex(1), complex(-1)}
    bad = sum(int(np.count_nonzero([complex(s) not in allowed for s in r.payload.signs]))
              for r in artifact.payloads())
    rep.add("signs in {+1,-1}", 0, bad, bad == 0)
    return rep


def _resolvable(artifact: SeriesArtifact) -> int:
    sys = artifact.system
    if sys.kind == WALSH:
        return sys.cells
    if sys.frequencies == "positive":
        return sys.cells // 2 - 1
    return sys.cells - 2


def check_coefficients(artifact: SeriesArtifact) -> CheckReport:
    """c_n(U) against alpha_n on payloads and against 0 on resolvable gaps."""
    rep = _report(artifact)
    sys, U = artifact.system, artifact.U
    tol = COEF_TOL[sys.kind]
    pays = artifact.payloads()
    if not pays:
        rep.add("coefficient identity", tol, 0.0, True, note="empty artifact")
        return rep
    per_step = {}
    for r in pays:
        c = coefficients_at(sys, U, r.payload.indices())
        dev = np.abs(c - r.payload.alphas)
        j = int(np.argmax(dev))
        worst = per_step.get(r.step, (0.0, None))
        if dev[j] >= worst[0]:
            per_step[r.step] = (float(dev[j]), r.start + j)
    for k, (d, n) in sorted(per_step.items()):
        rep.add("coefficient identity", tol, d, d < tol, k, note=f"worst index {n}")
    # outside the payloads the coefficients must vanish up to the grid limit
    top = min(artifact.last_index(), _resolvable(artifact))
    expect = np.zeros(top, dtype=np.complex128)
    for r in pays:
        lo, hi = r.start, min(r.end, top)
        if lo <= hi:
            expect[lo - 1:hi] = r.payload.alphas[:hi - lo + 1]
    got = coefficients_at(sys, U, np.arange(1, top + 1))
    d = float(np.abs(got - expect).max()) if top else 0.0
    rep.add("coefficients vanish off payloads", tol, d, d < tol)
    return rep


def density_witnesses(records: Sequence) -> list:
    """(k, M_k*, M_{k+1}, witness) with witness = padding count / M_{k+1}.

    Exact rational arithmetic over the block records of an almost build.
    """
    out = []
    steps = sorted({r.step for r in records})
    for k in steps:
        pay = [r for r in records if r.step == k and r.kind == PAYLOAD]
        pad = [r for r in records if r.step == k and r.kind == PADDING]
        m_star = pay[-1].end + 1 if pay else None
        if pad and m_star is not None and pad[0].start == m_star:
            m_next = pad[-1].end + 1
            count = m_next - m_star
        else:
            m_next = m_star if m_star is not None else 1
            count = 0
        out.append((k, m_star, m_next, Fraction(count, m_next)))
    return out


def check_density(artifact: SeriesArtifact) -> CheckReport:
    rep = _report(artifact)
    if artifact.mode == ASYM:
        rep.add("density", 0, 0, True, note="skipped: asym artifacts carry no padding")
        return rep
    for k, m_star, m_next, w in density_witnesses(artifact.blocks):
        need = 1 - Fraction(1, 2 ** k)
        rep.add("density witness", float(need), float(w), w >= need, k)
        off = m_next - (2 ** k) * m_star
        rep.add("padding schedule M_{k+1} = 2^k M_k*", 0, off, off == 0, k)
    return rep


def check_budgets(artifact: SeriesArtifact) -> CheckReport:
    rep = _report(artifact)
    total = 0.0
    for r in artifact.payloads():
        k = r.step
        nrm = l1_norm(_block_sum(artifact, r, False))
        total += nrm
        if artifact.mode == ASYM:
            name = "||H1_k||_1" if r.role == H1Q1 else "||H2_k||_1"
            rep.upper(name, 2.0 ** -(k + 1), nrm, k, strict=False)
        else:
            rep.upper("||H_k||_1", 2.0 ** -k, nrm, k, strict=False)
    rep.upper("sum of ||H||_1", 1.0, total)
    return rep


def check_schedule(artifact: SeriesArtifact) -> CheckReport:
    """Scheduled inequalities of the almost build, recomputed per step."""
    rep = _report(artifact)
    if artifact.mode != ALMOST:
        return rep
    sys, p = artifact.system, artifact.metric_p
    dom = sys.domain
    Qsum = GridFunction.zeros(dom)
    M = 1
    for st in artifact.steps:
        k = st.k
        rec = artifact.step_block(k, PLAIN)
        rep.add("payload starts at M_k", M, rec.start, rec.start == M, k)
        f_k = enumerate_dense(st.target, dom)
        fm = enumerate_dense(st.m_k, dom)
        Q = _block_sum(artifact, rec, True)
        rep.upper("d_p(residual, f_m_k) < 1/(2k)", 1.0 / (2 * k),
                  lp_distance(f_k - Qsum, fm, p), k)
        rep.upper("d_p(f_m_k, Q_k) < 1/(2k)", 1.0 / (2 * k), lp_distance(fm, Q, p), k)
        Qsum = Qsum + Q
        rep.upper("d_p(f_k, sum Q) < 1/k", 1.0 / k, lp_distance(f_k, Qsum, p), k)
        pads = [r for r in artifact.blocks if r.kind == PADDING and r.step == k]
        M = pads[-1].end + 1 if pads else rec.end + 1
    return rep


def _measure_ok(mask: MaskSet, bound: Fraction):
    """|mask^c| < bound, exact for the dyadic unit, float on the trig interval."""
    dom = mask.domain
    out = dom.cells - len(mask)
    if dom.kind == DYADIC_UNIT:
        val = Fraction(out, dom.cells)
        return float(val), val < bound
    val = out * dom.cell_width
    return val, val < float(bound)


def check_asym(artifact: SeriesArtifact) -> CheckReport:
    """Exceptional sets, modified targets and restricted integrals."""
    rep = _report(artifact)
    if artifact.mode != ASYM:
        return rep
    sys = artifact.system
    dom = sys.domain
    K = len(artifact.steps)
    C = float(artifact.C)
    tail = GridFunction.zeros(dom)
    for st in artifact.steps:
        k = st.k
        small = 2.0 ** -(k + 1)
        r1, r2 = artifact.step_block(k, H1Q1), artifact.step_block(k, H2Q2)
        f_k = enumerate_dense(st.target, dom)
        H1, Q1 = _block_sum(artifact, r1, False), _block_sum(artifact, r1, True)
        Q2 = _block_sum(artifact, r2, True)
        for name, E in (("|E1_k^c|", st.E1), ("|E2_k^c|", st.E2)):
            v, ok = _measure_ok(E, Fraction(1, 2 ** (k + 1)))
            rep.add(name + " < 2^-(k+1)", small, v, ok, k)
        inE = st.E1.as_bool()
        diff = np.abs(st.ghat.values - f_k.values)[inE]
        d = float(diff.max()) if diff.size else 0.0
        rep.add("ghat_k = f_k on E1_k", 0.0, d, d == 0.0, k)
        rep.upper("||ghat_k||_1 <= C ||f_k||_1", C * l1_norm(f_k), l1_norm(st.ghat), k,
                  strict=False)
        rep.upper("int_E1 |f_k - Q1_k| < 2^-(k+1)", small,
                  l1_norm((f_k - Q1).restrict(st.E1)), k)
        rep.upper("||ghat_k - Q1_k||_1 < 2^-(k+1)", small, l1_norm(st.ghat - Q1), k)
        tail = tail + H1 + Q2
        rep.upper("int_E2 |f_k - sum (H1 + Q2)| < 1/k", 1.0 / k,
                  l1_norm((f_k - tail).restrict(st.E2)), k)
    # the nested sets, recomputed from the step masks
    stored = artifact.asym_sets
    prev = None
    for m in range(1, K + 1):
        F = np.ones(dom.cells, dtype=bool)
        E = np.ones(dom.cells, dtype=bool)
        for st in artifact.steps[m - 1:]:
            F &= st.E2.as_bool()
            E &= st.E1.as_bool() & st.E2.as_bool()
        Fm, Em = MaskSet.from_bool(dom, F), MaskSet.from_bool(dom, E)
        v, ok = _measure_ok(Fm, Fraction(1, 2 ** m))
        rep.add("|F_m^c| < 2^-m", 2.0 ** -m, v, ok, m)
        v, ok = _measure_ok(Em, Fraction(1, 2 ** (m - 1)))
        rep.add("|E_m^c| < 2^-(m-1)", 2.0 ** -(m - 1), v, ok, m)
        if prev is not None:
            rep.add("F_{m-1} within F_m", 0, 0 if prev.issubset(Fm) else 1,
                    prev.issubset(Fm), m)
        prev = Fm
        same = (stored is not None and stored.F.get(m) == Fm and stored.E.get(m) == Em)
        rep.add("stored F_m, E_m match masks", 0, 0 if same else 1, same, m)
    return rep


def check_kolmogorov_sanity(artifact: SeriesArtifact,
                            p: Optional[float] = None) -> CheckReport:
    """Unsigned partial sums at the checkpoints approach U itself."""
    rep = _report(artifact)
    if artifact.mode != ALMOST:
        return rep
    p = artifact.metric_p if p is None else p
    U = artifact.U
    errs = []
    for k, N in checkpoints(artifact):
        errs.append(lp_distance(artifact.unsigned_sum(N), U, p))
        signed = lp_distance(artifact.signed_sum(N), U, p)
        rep.add("signed sum distance to U (info)", float("inf"), signed, True, k)
    if not errs:
        rep.add("kolmogorov minimum at final checkpoint", 0, 0, True, note="K = 0")
        return rep
    final, first = errs[-1], errs[0]
    rep.add("kolmogorov minimum at final checkpoint", min(errs), final,
            final <= min(errs), len(errs))
    ok = final < 0.5 * first or (first == 0.0 and final == 0.0)
    rep.add("kolmogorov final < 0.5 first", 0.5 * first, final, ok, len(errs))
    return rep


def structural_report(artifact: SeriesArtifact) -> CheckReport:
    rep = _report(artifact)
    for suite in (check_integrity, check_coefficients, check_budgets,
                  check_density, check_schedule, check_asym,
                  check_kolmogorov_sanity):
        rep.extend(suite(artifact))
    return rep


def full_report(artifact: SeriesArtifact, targets: Sequence = (),
                tol: float = 0.5, m: int = 1) -> CheckReport:
    """Structural suites plus one approximation run per corpus target."""
    rep = structural_report(artifact)
    for j, f in enumerate(targets, 1):
        try:
            run = approximate_with(artifact, f, tol, m)
            achieved = run.achieved
        except InsufficientDepth as exc:
            achieved = exc.best
        rep.add(f"approximation target {j:02d}", tol, achieved, achieved < tol)
    return rep
