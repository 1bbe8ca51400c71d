"""Inductive engines: almost universal series, asymptotic series, modification.

The series is kept sparse: payload blocks carry coefficients and signs,
padding blocks are index ranges with zero coefficients and sign 1.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .space import (GridFunction, MaskSet, Metric, SpaceError,
                    decode, encode, enumerate_dense,
                    index_from_json, index_to_json, l1_norm, locate_close,
                    lp_distance, DenseFamilyCode)
from .systems import CoefficientBlock, SystemSpec, partial_sum
from .uap import (ASYM_C, Budget, UapError, UapRequest, solve_asym_uap,
                  solve_uap)

FORMAT_VERSION = 1
PAYLOAD, PADDING = "Payload", "Padding"
PLAIN, H1Q1, H2Q2 = "Plain", "H1Q1", "H2Q2"
ALMOST, ASYM = "almost", "asym"


class BuildError(RuntimeError):
    """Oracle failure during a build; carries the artifact before that step."""

    def __init__(self, message: str, partial: "SeriesArtifact", step: int,
                 cause: Optional[Exception] = None):
        super().__init__(message)
        self.partial = partial
        self.step = step
        self.cause = cause


class InsufficientDepth(RuntimeError):
    def __init__(self, message: str, best: float, run=None):
        super().__init__(message)
        self.best = best
        self.run = run


class DepthExhausted(RuntimeError):
    def __init__(self, q: int, partial):
        super().__init__(f"depth exhausted at q={q}")
        self.q = q
        self.partial = partial


@dataclass(frozen=True)
class BlockRecord:
    kind: str
    start: int
    end: int
    step: int
    role: str = PLAIN
    payload: Optional[CoefficientBlock] = None

    def __post_init__(self):
        if self.kind == PAYLOAD:
            if self.payload is None:
                raise ValueError("payload record needs coefficients")
            if (self.payload.start, self.payload.end) != (self.start, self.end):
                raise ValueError("payload range mismatch")
        elif self.kind == PADDING:
            if self.payload is not None:
                raise ValueError("padding stores no coefficients")
        else:
            raise ValueError(f"unknown record kind {self.kind!r}")

    def to_json(self) -> dict:
        out = {"kind": self.kind, "start": self.start, "end": self.end,
               "step": self.step, "role": self.role}
        if self.payload is not None:
            out["payload"] = self.payload.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "BlockRecord":
        pl = obj.get("payload")
        return cls(obj["kind"], int(obj["start"]), int(obj["end"]),
                   int(obj["step"]), obj.get("role", PLAIN),
                   CoefficientBlock.from_json(pl) if pl is not None else None)


@dataclass(frozen=True)
class StepRecord:
    k: int
    target: int                # dense index of f_k
    m_k: Optional[int]         # dense index located for the residual (almost)
    certificates: tuple        # summaries of the oracle outputs
    residual_norm: float
    E1: Optional[MaskSet] = None
    E2: Optional[MaskSet] = None
    ghat: Optional[GridFunction] = None

    def to_json(self) -> dict:
        out = {"k": self.k, "target": index_to_json(self.target),
               "m_k": None if self.m_k is None else index_to_json(self.m_k),
               "certificates": list(self.certificates),
               "residual_norm": self.residual_norm}
        if self.E1 is not None:
            out["E1"] = self.E1.to_json()
            out["E2"] = self.E2.to_json()
            out["ghat"] = self.ghat.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "StepRecord":
        m = obj.get("m_k")
        return cls(int(obj["k"]), index_from_json(obj["target"]),
                   None if m is None else index_from_json(m),
                   tuple(obj["certificates"]), float(obj["residual_norm"]),
                   MaskSet.from_json(obj["E1"]) if "E1" in obj else None,
                   MaskSet.from_json(obj["E2"]) if "E2" in obj else None,
                   GridFunction.from_json(obj["ghat"]) if "ghat" in obj else None)


@dataclass(frozen=True)
class AsymSets:
    F: dict   # m -> MaskSet
    E: dict

    def to_json(self) -> dict:
        return {"F": {str(m): s.to_json() for m, s in sorted(self.F.items())},
                "E": {str(m): s.to_json() for m, s in sorted(self.E.items())}}

    @classmethod
    def from_json(cls, obj: dict) -> "AsymSets":
        return cls({int(m): MaskSet.from_json(s) for m, s in obj["F"].items()},
                   {int(m): MaskSet.from_json(s) for m, s in obj["E"].items()})


@dataclass(frozen=True)
class BuildConfig:
    seed: int = 0
    targets: Optional[tuple] = None   # dense indices f_1..f_K; default 1..K
    budget: Budget = field(default_factory=Budget)
    second_target: str = "consistent"  # or "literal", see the ledger
    C: Optional[float] = None

    def target(self, k: int) -> int:
        if self.targets is None:
            return k
        if k > len(self.targets):
            raise ValueError(f"no target configured for step {k}")
        return int(self.targets[k - 1])

    def step_seed(self, k: int, call: int = 0) -> int:
        return (self.seed * 1_000_003 + 31 * k + call) % (1 << 63)

    def to_json(self) -> dict:
        return {"seed": self.seed,
                "targets": None if self.targets is None else [index_to_json(t) for t in self.targets],
                "budget": {"max_index": self.budget.max_index,
                           "max_candidates": self.budget.max_candidates,
                           "fallback_samples": self.budget.fallback_samples},
                "second_target": self.second_target, "C": self.C}

    @classmethod
    def from_json(cls, obj: dict) -> "BuildConfig":
        b = obj["budget"]
        t = obj.get("targets")
        return cls(int(obj["seed"]),
                   None if t is None else tuple(index_from_json(x) for x in t),
                   Budget(b["max_index"], int(b["max_candidates"]),
                          int(b["fallback_samples"])),
                   obj.get("second_target", "consistent"), obj.get("C"))


@dataclass(frozen=True)
class SeriesArtifact:
    system: SystemSpec
    metric_p: float
    mode: str
    blocks: tuple
    steps: tuple
    U: GridFunction
    build_config: dict
    asym_sets: Optional[AsymSets] = None
    C: Optional[float] = None
    K: int = 0
    # digest found in the file this artifact was loaded from, if any
    loaded_digest: Optional[str] = field(default=None, compare=False)

    # --- structure helpers
    def payloads(self, role: Optional[str] = None) -> list:
        return [r for r in self.blocks if r.kind == PAYLOAD
                and (role is None or r.role == role)]

    def coefficient_blocks(self) -> list:
        return [r.payload for r in self.payloads()]

    def last_index(self) -> int:
        return self.blocks[-1].end if self.blocks else 0

    def series_block(self, rec: BlockRecord) -> CoefficientBlock:
        """Payload with the series' own signs (1 on H1 blocks of asym builds)."""
        if rec.role == H1Q1:
            return rec.payload.with_signs(np.ones(len(rec.payload)))
        return rec.payload

    def signed_sum(self, upto: int, signs_for=None) -> GridFunction:
        blocks = [(signs_for or self.series_block)(r) for r in self.payloads()]
        return partial_sum(self.system, blocks, max(upto, 1), use_signs=True)

    def unsigned_sum(self, upto: int) -> GridFunction:
        return partial_sum(self.system, self.coefficient_blocks(), max(upto, 1),
                           use_signs=False)

    def step_block(self, k: int, role: str = PLAIN) -> Optional[BlockRecord]:
        for r in self.payloads(role):
            if r.step == k:
                return r
        return None

    def target_function(self, k: int) -> GridFunction:
        return enumerate_dense(self.steps[k - 1].target, self.system.domain)

    # --- persistence
    def _content(self) -> dict:
        out = {"version": FORMAT_VERSION, "tool_version": __version__,
               "system": self.system.to_json(), "metric_p": self.metric_p,
               "mode": self.mode, "K": self.K,
               "blocks": [b.to_json() for b in self.blocks],
               "steps": [s.to_json() for s in self.steps],
               "U": self.U.to_json(), "build_config": self.build_config,
               "C": self.C}
        if self.asym_sets is not None:
            out["asym_sets"] = self.asym_sets.to_json()
        return out

    def digest(self) -> str:
        """sha256 of the canonical content (everything but the digest)."""
        text = json.dumps(self._content(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def to_json(self) -> dict:
        out = self._content()
        out["content_digest"] = self.digest()
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, obj: dict) -> "SeriesArtifact":
        if obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported artifact version {obj.get('version')!r}")
        sets = obj.get("asym_sets")
        return cls(SystemSpec.from_json(obj["system"]), float(obj["metric_p"]),
                   obj["mode"],
                   tuple(BlockRecord.from_json(b) for b in obj["blocks"]),
                   tuple(StepRecord.from_json(s) for s in obj["steps"]),
                   GridFunction.from_json(obj["U"]), obj["build_config"],
                   AsymSets.from_json(sets) if sets is not None else None,
                   obj.get("C"), int(obj.get("K", 0)), obj.get("content_digest"))

    @classmethod
    def loads(cls, text: str) -> "SeriesArtifact":
        return cls.from_json(json.loads(text))


def _rebase(block: CoefficientBlock, start: int) -> CoefficientBlock:
    """Prepend zero coefficients so the block begins exactly at start."""
    if block.start == start:
        return block
    if block.start < start:
        raise ValueError("block starts before the scheduled index")
    pad = block.start - start
    return CoefficientBlock(start, block.end,
                            np.concatenate([np.zeros(pad), block.alphas]),
                            np.concatenate([np.ones(pad), block.signs]))


def _summary(cert, req: UapRequest, role: str, sigma: Optional[float] = None) -> dict:
    out = {"role": role, "strategy": cert.strategy, "seed": cert.seed,
           "params": cert.params, "request": req.echo(),
           "achieved_eps": cert.achieved_eps,
           "achieved_delta": cert.achieved_delta}
    if sigma is not None:
        out["sigma"] = sigma
        out["achieved"] = dict(cert.achieved)
    return out


def _assemble(system, metric_p, mode, records, steps, config, K, sets=None, C=None):
    blocks = [r.payload for r in records if r.kind == PAYLOAD]
    if blocks:
        U = partial_sum(system, blocks, records[-1].end, use_signs=False)
    else:
        U = GridFunction.zeros(system.domain)
    echo = {"config": config.to_json(), "system": system.to_json(),
            "metric_p": metric_p, "mode": mode, "K": K}
    return SeriesArtifact(system, metric_p, mode, tuple(records), tuple(steps),
                          U, echo, sets, C, K)


def build_universal(system: SystemSpec, K: int, p: float = 0.5,
                    config: Optional[BuildConfig] = None) -> SeriesArtifact:
    """Almost universal series: K payload blocks with padding in between.

    Step k locates f_{m_k} within 1/(2k) of f_k minus the signed sums so far,
    asks the oracle for eps = 2^-k, delta = 1/(2k), n0 = M_k, and pads with
    zeros up to M_{k+1} = 2^k M_k* where M_k* is one past the payload.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    config = config or BuildConfig()
    metric = Metric.lp(p)
    records, steps = [], []
    M = 1
    Qsum = GridFunction.zeros(system.domain)
    for k in range(1, K + 1):
        partial = lambda: _assemble(system, p, ALMOST, records, steps, config, k - 1)
        try:
            f_k = enumerate_dense(config.target(k), system.domain)
            resid = f_k - Qsum
            m_k = locate_close(resid, 1.0 / (2 * k), metric)
            fm = enumerate_dense(m_k, system.domain)
            req = UapRequest(system, fm, eps=2.0 ** -k, delta=1.0 / (2 * k), n0=M,
                             metric_p=p, budget=config.budget,
                             seed=config.step_seed(k))
            cert = solve_uap(req)
        except (UapError, SpaceError) as exc:
            raise BuildError(f"oracle failure at step {k}: {exc}", partial(), k, exc) from exc
        blk = _rebase(cert.block, M)
        m_star = blk.end + 1
        m_next = (2 ** k) * m_star
        records.append(BlockRecord(PAYLOAD, blk.start, blk.end, k, PLAIN, blk))
        records.append(BlockRecord(PADDING, m_star, m_next - 1, k))
        Qsum = Qsum + cert.Q
        steps.append(StepRecord(k, config.target(k), m_k,
                                (_summary(cert, req, PLAIN),),
                                lp_distance(resid, fm, p)))
        M = m_next
    return _assemble(system, p, ALMOST, records, steps, config, K)


def _asym_sets(steps, domain) -> AsymSets:
    K = len(steps)
    F, E = {}, {}
    for m in range(1, K + 1):
        f_acc = np.ones(domain.cells, dtype=bool)
        e_acc = np.ones(domain.cells, dtype=bool)
        for st in steps[m - 1:]:
            f_acc &= st.E2.as_bool()
            e_acc &= st.E1.as_bool() & st.E2.as_bool()
        F[m] = MaskSet.from_bool(domain, f_acc)
        E[m] = MaskSet.from_bool(domain, e_acc)
    return AsymSets(F, E)


def build_asym_universal(system: SystemSpec, K: int,
                         config: Optional[BuildConfig] = None) -> SeriesArtifact:
    """Asymptotically conditionally universal series, two oracle calls per step."""
    if K < 0:
        raise ValueError("K must be >= 0")
    config = config or BuildConfig()
    C = ASYM_C[system.kind] if config.C is None else float(config.C)
    records, steps = [], []
    M = 1
    tail = GridFunction.zeros(system.domain)  # sum_{j<k} (H_j^(1) + Q_j^(2))
    for k in range(1, K + 1):
        def partial():
            sets = _asym_sets(steps, system.domain) if steps else AsymSets({}, {})
            return _assemble(system, 1.0, ASYM, records, steps, config, k - 1, sets, C)
        small = 2.0 ** -(k + 1)
        try:
            f_k = enumerate_dense(config.target(k), system.domain)
            req1 = UapRequest(system, f_k, eps=small, delta=small, n0=M,
                              budget=config.budget, seed=config.step_seed(k, 1))
            c1 = solve_asym_uap(req1, small, C)
            b1 = _rebase(c1.block, M)
            M2 = b1.end + 1
            lead = c1.Q if config.second_target == "literal" else c1.H
            target2 = f_k - lead - tail
            req2 = UapRequest(system, target2, eps=small, delta=1.0 / k, n0=M2,
                              budget=config.budget, seed=config.step_seed(k, 2))
            c2 = solve_asym_uap(req2, small, C)
            b2 = _rebase(c2.block, M2)
        except (UapError, SpaceError) as exc:
            raise BuildError(f"oracle failure at step {k}: {exc}", partial(), k, exc) from exc
        records.append(BlockRecord(PAYLOAD, b1.start, b1.end, k, H1Q1, b1))
        records.append(BlockRecord(PAYLOAD, b2.start, b2.end, k, H2Q2, b2))
        tail = tail + c1.H + c2.Q
        resid = l1_norm((f_k - tail).restrict(c2.E))
        steps.append(StepRecord(k, config.target(k), None,
                                (_summary(c1, req1, H1Q1, small),
                                 _summary(c2, req2, H2Q2, small)),
                                resid, c1.E, c2.E, c1.ghat))
        M = b2.end + 1
    return _assemble(system, 1.0, ASYM, records, steps, config, K,
                     _asym_sets(steps, system.domain), C)


# --- approximation runs ---------------------------------------------------------

@dataclass(frozen=True)
class ApproximationRun:
    checkpoints: tuple      # (step k, N, error)
    selected: tuple         # steps k forming the approaching subsequence
    achieved: float
    tol: float
    metric: str

    def to_json(self) -> dict:
        return {"checkpoints": [list(c) for c in self.checkpoints],
                "selected": list(self.selected), "achieved": self.achieved,
                "tol": self.tol, "metric": self.metric}


def checkpoints(artifact: SeriesArtifact) -> list:
    """(k, N) with N the last index of step k's signed contribution."""
    out = []
    for st in artifact.steps:
        role = H2Q2 if artifact.mode == ASYM else PLAIN
        rec = artifact.step_block(st.k, role)
        out.append((st.k, rec.end))
    return out


def approximate_with(artifact: SeriesArtifact, target: GridFunction, tol: float,
                     m: int = 1) -> ApproximationRun:
    """Errors of the sign-modified partial sums at the step checkpoints.

    The approaching subsequence consists of the steps whose dense target is a
    new closest one to `target`. Almost builds use d_p; asymptotic builds use
    the L1 distance restricted to F_m.
    """
    if target.domain != artifact.system.domain:
        raise SpaceError("incompatible domains")
    rows, selected = [], []
    best_gap = None
    if artifact.mode == ASYM:
        F = artifact.asym_sets.F.get(m) if artifact.asym_sets else None
        metric = f"L1 on F_{m}"

        def err(S):
            d = target - S
            return l1_norm(d.restrict(F) if F is not None else d)

        def gap(f):
            return l1_norm(target - f)
    else:
        p = artifact.metric_p
        metric = f"Lp({p})"

        def err(S):
            return lp_distance(target, S, p)

        def gap(f):
            return lp_distance(target, f, p)
    for k, N in checkpoints(artifact):
        e = err(artifact.signed_sum(N))
        rows.append((k, N, e))
        gk = gap(artifact.target_function(k))
        if best_gap is None or gk < best_gap:
            best_gap = gk
            selected.append(k)
    if not rows:
        raise InsufficientDepth("insufficient depth", float("inf"))
    by_k = {k: e for k, _, e in rows}
    achieved = by_k[selected[-1]]
    run = ApproximationRun(tuple(rows), tuple(selected), achieved, tol, metric)
    if not achieved < tol:
        raise InsufficientDepth("insufficient depth", achieved, run)
    return run


# --- modification engine ----------------------------------------------------------

@dataclass(frozen=True)
class ModifiedFunction:
    V: GridFunction
    m: int
    chain: tuple            # per q: dict with k_q, nu_q and the inequalities
    sign_ranges: tuple      # (start, end) ranges where eps_n = beta_n
    certified: MaskSet      # cells of E_m where every used ghat equals its f
    residual_bound: float
    C: float

    def epsilon_blocks(self, artifact: SeriesArtifact) -> list:
        """Blocks with signs eps_n: beta_n on the chosen H1 blocks, else 1."""
        flip = set(self.sign_ranges)
        out = []
        for r in artifact.payloads():
            if (r.start, r.end) in flip:
                out.append(r.payload)
            else:
                out.append(r.payload.with_signs(np.ones(len(r.payload))))
        return out

    def to_json(self) -> dict:
        return {"V": self.V.to_json(), "m": self.m, "chain": list(self.chain),
                "sign_ranges": [list(r) for r in self.sign_ranges],
                "certified": self.certified.to_json(),
                "residual_bound": self.residual_bound, "C": self.C}


def residual_bound(q: int, C: float) -> float:
    return 3.0 / 2 ** q + (C + 1.0) / 2.0 ** (q - 3)


def _index_above(code: DenseFamilyCode, m: int) -> int:
    """An index > m naming the same step function (refine the level)."""
    idx = encode(code)
    while idx <= m:
        code = DenseFamilyCode(code.resolution, code.level + 1,
                               tuple(2 * z for z in code.numerators))
        idx = encode(code)
    return idx


def modify_to_universal(artifact: SeriesArtifact, g: GridFunction, m: int,
                        q_max: int) -> ModifiedFunction:
    """Finite-horizon modification of g into a sign-equivalent of U.

    Selections follow the construction: k_q > m with
    ||sum_{r<=q} f_{k_r} - g||_1 < 2^-(q+2), then nu_q > nu_{q-1} + m with
    ||f_{k_q} + R_{q-1} - f_{nu_q}||_1 < 2^-(q+1) over the built steps, and
    g_q = f_{k_q} + ghat_{nu_q} - f_{nu_q}. The tail beyond q_max is closed by
    g - sum f_{k_q}, so V_m = g + sum_q (ghat_{nu_q} - f_{nu_q}).
    """
    if artifact.mode != ASYM or any(st.ghat is None for st in artifact.steps):
        raise ValueError("artifact lacks asym intermediates")
    if m < 1 or q_max < 1:
        raise ValueError("need m >= 1 and q_max >= 1")
    if g.domain != artifact.system.domain:
        raise SpaceError("incompatible domains")
    dom = artifact.system.domain
    K = len(artifact.steps)
    C = float(artifact.C)
    fsum = GridFunction.zeros(dom)
    R = GridFunction.zeros(dom)         # sum_{r<q} [g_r - (H-blocks, Q1, H2)]
    nu_prev = 1
    chain, ranges = [], []
    corrections = []
    E_m = artifact.asym_sets.E.get(m, MaskSet(dom, []))
    agree = E_m.as_bool()
    for q in range(1, q_max + 1):
        tol_k = 2.0 ** -(q + 2)
        try:
            k_idx = locate_close(g - fsum, tol_k, "L1")
        except SpaceError as exc:
            raise DepthExhausted(q, tuple(chain)) from exc
        k_idx = _index_above(decode(k_idx), m)
        f_kq = enumerate_dense(k_idx, dom)
        fsum = fsum + f_kq
        sel1 = l1_norm(fsum - g)
        nu, sel2 = None, None
        for cand in range(nu_prev + m + 1, K + 1):
            val = l1_norm(f_kq + R - artifact.target_function(cand))
            if val < 2.0 ** -(q + 1):
                nu, sel2 = cand, val
                break
        if nu is None:
            raise DepthExhausted(q, tuple(chain))
        st = artifact.steps[nu - 1]
        f_nu = artifact.target_function(nu)
        g_q = f_kq + st.ghat - f_nu
        corrections.append(st.ghat - f_nu)
        agree &= st.ghat.values == f_nu.values
        # R_q adds g_q minus H_k for k in [nu_{q-1}, nu_q), Q1 and H2 of nu_q
        used = GridFunction.zeros(dom)
        for kk in range(nu_prev, nu):
            for role in (H1Q1, H2Q2):
                rec = artifact.step_block(kk, role)
                used = used + partial_sum(artifact.system, [rec.payload], rec.end, False)
        r1 = artifact.step_block(nu, H1Q1)
        r2 = artifact.step_block(nu, H2Q2)
        used = used + partial_sum(artifact.system, [r1.payload], r1.end, True)
        used = used + partial_sum(artifact.system, [r2.payload], r2.end, False)
        R = R + g_q - used
        ranges.append((r1.start, r1.end))
        chain.append({"q": q, "k_q": index_to_json(k_idx), "nu_q": nu,
                      "sum_fk_minus_g": sel1, "sum_fk_bound": tol_k,
                      "nu_gap": sel2, "nu_bound": 2.0 ** -(q + 1),
                      "R_norm": l1_norm(R), "R_bound": 3.0 / 2 ** q,
                      "g_q_norm": l1_norm(g_q)})
        nu_prev = nu
    V = g
    for c in corrections:
        V = V + c
    certified = MaskSet.from_bool(dom, agree)
    return ModifiedFunction(V, m, tuple(chain), tuple(ranges), certified,
                            residual_bound(q_max, C), C)
