"""Approximation-property oracles with independent certificate checkers.

A certificate is a coefficient block starting at or after n0 whose unsigned
sum H is small in L1 while the sign-flipped sum Q is close to the target f.
The solvers build H and Q as products: the target (smoothed to a polynomial
for the trigonometric system) times a lacunary product of spike kernels.

    h = eta * (prod_j Z_j - 1)       Z_j: mean-one spike on its own digits
    q = eta * (prod_j (2 - Z_j) - 1)  or frequency band

Expanding both products gives the same coefficients up to the sign
(-1)^(number of factors a term touches), so q is a sign flip of h. Off the
spike sets q = eta * (2^J - 1), which is 1 for the canonical eta, while
||h||_1 is about 2 * eta. Walsh factors are exact indicator spikes; trig
factors are dilated Fejer or Jackson kernels.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .report import SLACK, CheckReport
from .space import (GridFunction, MaskSet, SpaceError, dyadic_resolution,
                    l1_norm, lp_distance)
from .systems import (SIGNS_PM1, TRIG, WALSH, CoefficientBlock, SystemSpec,
                      all_coefficients, partial_sum, synthesize)

# Fixed by calibrate_asym_constant over the build corpora (see tests and the
# decisions ledger): twice the largest observed ||ghat||_1 / ||f||_1.
# twice the largest ghat norm ratio seen on the step corpus, rounded up
ASYM_C = {WALSH: 5.25, TRIG: 2.0}

_MARGIN = 1.0 - 1e-9


class UapError(RuntimeError):
    pass


class UapSearchFailed(UapError):
    """No candidate met the bounds; carries the best one found."""

    def __init__(self, best, reason: str = ""):
        self.best = best
        self.reason = reason
        msg = "uap search failed"
        if best is not None:
            msg += f" (best eps={best.achieved_eps:.4g}, delta={best.achieved_delta:.4g})"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)

    @property
    def achieved(self) -> dict:
        if self.best is None:
            return {}
        return {"eps": self.best.achieved_eps, "delta": self.best.achieved_delta}


class ResolutionInsufficient(UapError):
    def __init__(self, detail: str = ""):
        super().__init__("resolution insufficient" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class Budget:
    max_index: Optional[int] = None  # spectrum cap, defaults to the system's
    max_candidates: int = 5000
    fallback_samples: int = 64


@dataclass(frozen=True)
class UapRequest:
    system: SystemSpec
    f: GridFunction
    eps: float
    delta: float
    n0: int = 1
    metric_p: float = 0.5
    budget: Budget = field(default_factory=Budget)
    seed: int = 0
    sign_set: tuple = SIGNS_PM1

    def __post_init__(self):
        if not (self.eps > 0 and self.delta > 0):
            raise ValueError("eps and delta must be positive")
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        if not 0.0 < self.metric_p < 1.0:
            raise ValueError("metric_p must lie in (0, 1)")
        if self.f.domain != self.system.domain:
            raise SpaceError("incompatible domains")

    def cap(self) -> int:
        cap = self.system.max_index()
        if self.budget.max_index is not None:
            cap = min(cap, int(self.budget.max_index))
        return cap

    def echo(self) -> dict:
        return {"eps": self.eps, "delta": self.delta, "n0": self.n0,
                "metric_p": self.metric_p, "seed": self.seed,
                "cap": self.cap()}


@dataclass(frozen=True)
class UapCertificate:
    block: CoefficientBlock
    H: GridFunction
    Q: GridFunction
    achieved_eps: float
    achieved_delta: float
    strategy: str
    seed: int
    params: dict

    def to_json(self) -> dict:
        return {"block": self.block.to_json(), "H": self.H.to_json(),
                "Q": self.Q.to_json(), "achieved_eps": self.achieved_eps,
                "achieved_delta": self.achieved_delta,
                "strategy": self.strategy, "seed": self.seed,
                "params": self.params}

    @classmethod
    def from_json(cls, obj: dict) -> "UapCertificate":
        return cls(CoefficientBlock.from_json(obj["block"]),
                   GridFunction.from_json(obj["H"]),
                   GridFunction.from_json(obj["Q"]),
                   float(obj["achieved_eps"]), float(obj["achieved_delta"]),
                   obj["strategy"], int(obj["seed"]), obj["params"])


@dataclass(frozen=True)
class AsymUapCertificate:
    block: CoefficientBlock
    H: GridFunction
    Q: GridFunction
    E: MaskSet
    ghat: GridFunction
    C: float
    sigma: float
    achieved: dict
    strategy: str
    seed: int
    params: dict

    @property
    def achieved_eps(self) -> float:
        return self.achieved["norm_H"]

    @property
    def achieved_delta(self) -> float:
        return self.achieved["restricted_l1"]

    def to_json(self) -> dict:
        return {"block": self.block.to_json(), "H": self.H.to_json(),
                "Q": self.Q.to_json(), "E": self.E.to_json(),
                "ghat": self.ghat.to_json(), "C": self.C, "sigma": self.sigma,
                "achieved": self.achieved, "strategy": self.strategy,
                "seed": self.seed, "params": self.params}

    @classmethod
    def from_json(cls, obj: dict) -> "AsymUapCertificate":
        return cls(CoefficientBlock.from_json(obj["block"]),
                   GridFunction.from_json(obj["H"]),
                   GridFunction.from_json(obj["Q"]),
                   MaskSet.from_json(obj["E"]),
                   GridFunction.from_json(obj["ghat"]), float(obj["C"]),
                   float(obj["sigma"]), dict(obj["achieved"]),
                   obj["strategy"], int(obj["seed"]), obj["params"])


# --- shared helpers -----------------------------------------------------------

def _zero_certificate(req: UapRequest, strategy: str = "zero") -> UapCertificate:
    blk = CoefficientBlock(req.n0, req.n0, [0.0])
    z = GridFunction.zeros(req.system.domain)
    return UapCertificate(blk, z, z, 0.0, lp_distance(req.f, z, req.metric_p),
                          strategy, req.seed, {})


def _block_from_coefs(indices: np.ndarray, coefs: np.ndarray,
                      signs: np.ndarray) -> CoefficientBlock:
    order = np.argsort(indices)
    idx, cf, sg = indices[order], coefs[order], signs[order]
    start, end = int(idx[0]), int(idx[-1])
    a = np.zeros(end - start + 1, dtype=np.complex128)
    s = np.ones(end - start + 1, dtype=np.complex128)
    a[idx - start] = cf
    s[idx - start] = sg
    return CoefficientBlock(start, end, a, s)


def _certificate(req: UapRequest, block: CoefficientBlock, strategy: str,
                 params: dict) -> UapCertificate:
    sys = req.system
    H = partial_sum(sys, [block], block.end, use_signs=False)
    Q = partial_sum(sys, [block], block.end, use_signs=True)
    return UapCertificate(block, H, Q, l1_norm(H),
                          lp_distance(req.f, Q, req.metric_p),
                          strategy, req.seed, params)


def _better_failure(a, b) -> bool:
    """Is candidate a (eps, delta, ...) a better near-miss than b?"""
    return b is None or a < b


def _spike_distribution(sizes) -> list:
    """Joint law of prod_j (2 - Z_j) over independent factors.

    Z_j equals 2^b_j with probability 2^-b_j and 0 otherwise. Returns
    (probability, product, spiked) triples with equal sizes grouped.
    """
    groups = {}
    for b in sizes:
        groups[b] = groups.get(b, 0) + 1
    items = sorted(groups.items())
    out = []
    for ks in itertools.product(*[range(n + 1) for _, n in items]):
        prob, prod = 1.0, 1.0
        for (b, n), k in zip(items, ks):
            a = 2.0 ** -b
            prob *= math.comb(n, k) * a ** k * (1 - a) ** (n - k)
            prod *= 2.0 ** (n - k) * (2.0 - 2.0 ** b) ** k
        out.append((prob, prod, any(ks)))
    return out


# --- Walsh product construction ----------------------------------------------

def _walsh_low_bit(n0: int, s_f: int) -> int:
    # every term has Paley index >= 2^low, i.e. index >= 2^low + 1 >= n0
    need = 0 if n0 <= 2 else (n0 - 2).bit_length()
    return max(s_f, need)


def _walsh_spikes(g: int, low: int, sizes) -> list:
    """Per factor: boolean grid where all its digits vanish."""
    i = np.arange(1 << g, dtype=np.int64)
    out, a = [], low
    for b in sizes:
        shift = g - a - b
        out.append(((i >> shift) & ((1 << b) - 1)) == 0)
        a += b
    return out


def walsh_product_block(sys: SystemSpec, f: GridFunction, low: int, sizes,
                        eta: float) -> CoefficientBlock:
    """Coefficient block of f * eta * (prod Z_j - 1) with product signs.

    Factor j lives on Paley bits [low + sum(sizes[:j]), ... + sizes[j]); f
    must depend only on the first `low` binary digits.
    """
    g = sys.domain.log2_cells
    B = int(sum(sizes))
    if low + B > g:
        raise ResolutionInsufficient("factor digits exceed the grid")
    if dyadic_resolution(f) > low:
        raise ValueError("f must be resolved above the factor digits")
    prodZ = np.ones(sys.cells)
    for sp, b in zip(_walsh_spikes(g, low, sizes), sizes):
        prodZ = prodZ * np.where(sp, 2.0 ** b, 0.0)
    H = GridFunction(sys.domain, f.values * (eta * (prodZ - 1.0)))
    coefs = all_coefficients(sys, H)
    paley = np.arange(sys.cells, dtype=np.int64)
    high = paley >> low
    keep = (high > 0) & (high < (1 << B))
    tol = 1e-13 * max(1.0, float(np.max(np.abs(coefs))))
    keep &= np.abs(coefs) > tol
    P = paley[keep]
    touched = np.zeros(P.size, dtype=np.int64)
    a = low
    for b in sizes:
        touched += ((P >> a) & ((1 << b) - 1)) != 0
        a += b
    signs = np.where(touched % 2 == 0, 1.0, -1.0)
    if P.size == 0:
        raise ValueError("empty product block")
    return _block_from_coefs(P + 1, coefs[keep], signs)


def _partitions(total: int, parts: int, max_part: Optional[int] = None):
    """Non-increasing partitions of total into exactly `parts` positive parts."""
    if max_part is None:
        max_part = total
    if parts == 0:
        if total == 0:
            yield ()
        return
    if total < parts:
        return
    for first in range(min(total - parts + 1, max_part), 0, -1):
        if first * parts < total:
            break
        for rest in _partitions(total - first, parts - 1, first):
            yield (first,) + rest


def _walsh_layouts(avail: int, limit: int):
    """Partitions with at most three distinct part sizes, smallest B first."""
    count = 0
    for B in range(1, avail + 1):
        for J in range(1, B + 1):
            for sizes in _partitions(B, J):
                if len(set(sizes)) > 3:
                    continue
                yield sizes
                count += 1
                if count >= limit:
                    return


def _eta_grid(eta_max: float, J: int) -> np.ndarray:
    canon = 1.0 / (2.0 ** J - 1.0)
    pts = list(eta_max * np.geomspace(1e-3, 1.0, 40)[:-1])
    pts.append(eta_max * _MARGIN)
    if canon < eta_max:
        pts.append(canon)
    return np.unique(np.asarray(pts))


def _walsh_cost(sizes, fl1: float, fpp: float, p: float, eps: float):
    """Best (delta, eta) for the layout subject to the eps bound."""
    B = sum(sizes)
    per_eta = 2.0 * (1.0 - 2.0 ** -B) * fl1
    dist = _spike_distribution(sizes)
    probs = np.array([d[0] for d in dist])
    X = np.array([d[1] for d in dist]) - 1.0
    eta_max = eps / per_eta * _MARGIN

    def delta(eta):
        return fpp * float(np.sum(probs * np.abs(1.0 - eta * X) ** p))

    best = None
    for eta in _eta_grid(eta_max, len(sizes)):
        d = delta(eta)
        if best is None or d < best[0]:
            best = (d, float(eta))
    return best[0], best[1], per_eta * best[1]


def _solve_walsh(req: UapRequest) -> UapCertificate:
    sys, f = req.system, req.f
    g = sys.domain.log2_cells
    s_f = dyadic_resolution(f)
    low = _walsh_low_bit(req.n0, s_f)
    cap_bits = req.cap().bit_length() - 1  # Paley < 2^bits <=> index <= 2^bits
    top = min(g, cap_bits)
    if (1 << low) + 1 > req.cap() or low >= top:
        raise ResolutionInsufficient(f"no factor digits between {low} and {top}")
    avail = top - low
    fl1 = l1_norm(f)
    fpp = float(np.sum(np.abs(f.values) ** req.metric_p)) * sys.domain.cell_width
    feasible, near = None, None
    for sizes in _walsh_layouts(avail, req.budget.max_candidates):
        d, eta, e = _walsh_cost(sizes, fl1, fpp, req.metric_p, req.eps)
        key = (sum(sizes), d, e)
        if d < req.delta * _MARGIN and e < req.eps:
            if feasible is None or key < feasible[0]:
                feasible = (key, sizes, eta)
        else:
            score = (max(e / req.eps, d / req.delta), key)
            if _better_failure(score, near and near[0]):
                near = (score, sizes, eta)
    # fallback: seeded samples of layouts with many distinct sizes
    if feasible is None and avail >= 4:
        rng = np.random.default_rng(req.seed)
        for _ in range(req.budget.fallback_samples):
            J = int(rng.integers(2, avail + 1))
            cuts = np.sort(rng.choice(np.arange(1, avail + 1), size=J, replace=False))
            sizes = tuple(int(x) for x in np.diff(np.concatenate([[0], cuts])))
            if min(sizes) < 1:
                continue
            d, eta, e = _walsh_cost(sizes, fl1, fpp, req.metric_p, req.eps)
            if d < req.delta * _MARGIN and e < req.eps:
                key = (sum(sizes), d, e)
                if feasible is None or key < feasible[0]:
                    feasible = (key, sizes, eta)
                    break
    chosen = feasible or near
    if chosen is None:
        raise UapSearchFailed(_zero_certificate(req), "no layout fits the grid")
    _, sizes, eta = chosen
    block = walsh_product_block(sys, f, low, sizes, eta)
    params = {"low": low, "sizes": list(sizes), "eta": eta}
    cert = _certificate(req, block, "walsh-product" if feasible else "walsh-product-best", params)
    if feasible is None or not (cert.achieved_eps < req.eps and cert.achieved_delta < req.delta):
        raise UapSearchFailed(cert, "no layout within the grid meets both bounds")
    return cert


def brick_walsh(sys: SystemSpec, gamma: complex, cell: tuple, n0: int,
                smallness: float) -> CoefficientBlock:
    """Block whose signed sum is gamma on the dyadic cell off a thin set.

    cell = (s, j) is [j 2^-s, (j+1) 2^-s). The factor count J and digit
    sizes depend only on |cell| and smallness (so the brick is linear in
    gamma): 2 |cell| / (2^J - 1) <= smallness bounds ||H||_1 / |gamma|, and the
    exceptional set where Q differs from gamma * chi_cell has measure
    |cell| (1 - prod (1 - 2^-b_j)) <= smallness.
    """
    if sys.kind != WALSH:
        raise SpaceError("Walsh bricks need the Walsh system")
    if n0 < 1 or smallness <= 0:
        raise ValueError("need n0 >= 1 and smallness > 0")
    s, j = int(cell[0]), int(cell[1])
    g = sys.domain.log2_cells
    if s > g or not 0 <= j < (1 << s):
        raise ResolutionInsufficient("cell finer than the grid")
    width = 2.0 ** -s
    low = _walsh_low_bit(n0, s)
    if gamma == 0:
        return CoefficientBlock(n0, n0, [0.0])
    J = 1
    while 2.0 * width / (2.0 ** J - 1.0) > smallness:
        J += 1
    b = 1
    while width * (1.0 - (1.0 - 2.0 ** -b) ** J) > smallness:
        b += 1
    if low + J * b > g:
        raise ResolutionInsufficient(f"brick needs {low + J * b} binary digits, grid has {g}")
    vals = np.zeros(sys.cells, dtype=np.complex128)
    reps = sys.cells >> s
    vals[j * reps:(j + 1) * reps] = gamma
    f = GridFunction(sys.domain, vals)
    return walsh_product_block(sys, f, low, (b,) * J, 1.0 / (2.0 ** J - 1.0))


# --- trigonometric product construction ----------------------------------------

_SMOOTHERS = ("fejer", "vallee-poussin")
_KERNELS = ("fejer", "jackson")


def _smooth_weights(kind: str, D0: int, k: np.ndarray) -> np.ndarray:
    a = np.abs(k).astype(float)
    if kind == "fejer":
        return np.clip(1.0 - a / (D0 + 1.0), 0.0, None)
    # de la Vallee Poussin: flat to D0/2, linear down to zero at D0
    h = max(D0 // 2, 1)
    return np.clip((D0 + 1.0 - a) / (D0 + 1.0 - h), 0.0, 1.0)


def _kernel_coefs(kind: str, d: int) -> np.ndarray:
    """Coefficients a_l, l = 0..degree, of a mean-one non-negative kernel."""
    if kind == "fejer":
        return 1.0 - np.arange(d + 1) / (d + 1.0)
    m = max(d // 2, 1)
    w = 1.0 - np.abs(np.arange(-m, m + 1)) / (m + 1.0)
    sq = np.convolve(w, w)
    return (sq / sq[2 * m])[2 * m:]


def _kernel_on_grid(coefs: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.full(x.shape, coefs[0])
    for l in range(1, coefs.size):
        out += 2.0 * coefs[l] * np.cos(l * x)
    return out


@dataclass(frozen=True)
class TrigLayout:
    smoother: str
    D0: int
    kernel: str
    d: int
    dilations: tuple

    def max_freq(self) -> int:
        return self.D0 + self.d * sum(self.dilations)

    def to_json(self) -> dict:
        return {"smoother": self.smoother, "D0": self.D0, "kernel": self.kernel,
                "d": self.d, "dilations": list(self.dilations)}


def _trig_dilations(D0: int, d: int, J: int, n0: int, stretch: float = 1.0) -> tuple:
    N1 = max(2 * D0 + 1, D0 + (n0 + 1) // 2 + 1)
    Ns = [int(math.ceil(N1 * stretch))]
    for _ in range(1, J):
        Ns.append(int(math.ceil((2 * (D0 + d * sum(Ns)) + 1) * stretch)))
    return tuple(Ns)


def _kernel_degree(kernel: str, d: int) -> int:
    return d if kernel == "fejer" else 2 * max(d // 2, 1)


class _TrigFactory:
    """Caches smoothed targets and factor products for one request."""

    def __init__(self, req: UapRequest):
        self.req = req
        sys = req.system
        self.x = sys.domain.midpoints()
        self.C = sys.cells
        self.fhat = all_coefficients(sys, req.f)
        self.k = np.fft.fftfreq(self.C, 1.0 / self.C).astype(np.int64)
        self._smooth = {}
        self._prods = {}

    def smooth(self, kind: str, D0: int) -> np.ndarray:
        key = (kind, D0)
        if key not in self._smooth:
            w = _smooth_weights(kind, D0, self.k)
            keep = w > 0
            idx = np.array([self.req.system.index_of(int(k)) for k in self.k[keep]])
            self._smooth[key] = synthesize(self.req.system, idx,
                                           self.fhat[keep] * w[keep]).values
        return self._smooth[key]

    def products(self, kernel: str, d: int, Ns: tuple):
        key = (kernel, d, Ns)
        if key not in self._prods:
            coefs = _kernel_coefs(kernel, d)
            pz = np.ones(self.C)
            pw = np.ones(self.C)
            for N in Ns:
                z = _kernel_on_grid(coefs, N * self.x)
                pz = pz * z
                pw = pw * (2.0 - z)
            self._prods[key] = (pz - 1.0, pw - 1.0)
        return self._prods[key]


def _trig_layouts(req: UapRequest, cap_freq: int):
    for smoother in _SMOOTHERS:
        for D0 in (1, 2, 4, 8, 16, 32, 64, 128):
            for kernel in _KERNELS:
                for d in (1, 2, 3, 4, 6, 8, 12, 16, 24, 32):
                    deg = _kernel_degree(kernel, d)
                    for J in range(1, 9):
                        Ns = _trig_dilations(D0, deg, J, req.n0)
                        lay = TrigLayout(smoother, D0, kernel, deg, Ns)
                        if lay.max_freq() > cap_freq:
                            break
                        yield lay


def _trig_random_layouts(req: UapRequest, cap_freq: int, rng, count: int):
    for _ in range(count):
        smoother = _SMOOTHERS[int(rng.integers(2))]
        kernel = _KERNELS[int(rng.integers(2))]
        D0 = int(rng.integers(1, 129))
        d = _kernel_degree(kernel, int(rng.integers(1, 49)))
        J = int(rng.integers(1, 9))
        stretch = float(rng.uniform(1.0, 2.0))
        lay = TrigLayout(smoother, D0, kernel, d,
                         _trig_dilations(D0, d, J, req.n0, stretch))
        if lay.max_freq() <= cap_freq:
            yield lay


def _trig_cap_freq(req: UapRequest) -> int:
    cap = req.cap()
    return cap if req.system.frequencies == "positive" else (cap - 1) // 2


def _trig_eval(fac: _TrigFactory, lay: TrigLayout, req: UapRequest):
    """(delta, eps, eta) for the layout with the best eta under the eps bound."""
    fs = fac.smooth(lay.smoother, lay.D0)
    xh, xq = fac.products(lay.kernel, lay.d, lay.dilations)
    cw = req.system.domain.cell_width
    base = float(np.sum(np.abs(fs * xh))) * cw
    if base == 0.0:
        return None
    eta_max = req.eps / base * _MARGIN
    fsq = fs * xq
    fv = req.f.values
    best = None
    for eta in _eta_grid(eta_max, len(lay.dilations)):
        d = float(np.sum(np.abs(fv - eta * fsq) ** req.metric_p)) * cw
        if best is None or d < best[0]:
            best = (d, base * eta, float(eta))
    return best


def trig_product_block(sys: SystemSpec, fs_values: np.ndarray, lay: TrigLayout,
                       eta: float) -> CoefficientBlock:
    """Block of fs * eta * (prod K(N_j x) - 1) with signs from the factor count."""
    x = sys.domain.midpoints()
    coefs = _kernel_coefs(lay.kernel, lay.d)
    pz = np.ones(sys.cells)
    for N in lay.dilations:
        pz = pz * _kernel_on_grid(coefs, N * x)
    H = GridFunction(sys.domain, fs_values * (eta * (pz - 1.0)))
    allc = all_coefficients(sys, H)
    C = sys.cells
    top = lay.max_freq()
    if top >= C // 2:
        raise ResolutionInsufficient("aliasing risk")
    freqs = np.arange(-top, top + 1)
    cf = allc[np.mod(freqs, C)]
    keep = np.abs(freqs) > lay.D0
    tol = 1e-13 * max(1.0, float(np.max(np.abs(cf))))
    keep &= np.abs(cf) > tol
    freqs, cf = freqs[keep], cf[keep]
    signs = np.empty(freqs.size)
    for i, w in enumerate(freqs):
        rem, touched = int(w), 0
        for N in reversed(lay.dilations):
            l = int(round(rem / N))
            if l:
                touched += 1
                rem -= l * N
        signs[i] = 1.0 if touched % 2 == 0 else -1.0
    idx = np.array([sys.index_of(int(w)) for w in freqs], dtype=np.int64)
    return _block_from_coefs(idx, cf, signs)


def _solve_trig(req: UapRequest) -> UapCertificate:
    if req.system.frequencies == "positive":
        # analytic polynomials: (1/2pi) int |P - f|^p >= |mean of f|^p by
        # subharmonicity, so no block can approach a target with mean != 0
        raise UapSearchFailed(_zero_certificate(req),
                              "positive-frequency system has no sign-flip gain")
    cap_freq = _trig_cap_freq(req)
    smallest = TrigLayout("fejer", 1, "fejer", 1, _trig_dilations(1, 1, 1, req.n0))
    if smallest.max_freq() > cap_freq:
        raise ResolutionInsufficient(f"n0={req.n0} leaves no room below the cap")
    fac = _TrigFactory(req)
    feasible, near = None, None
    seen = 0

    def consider(lay):
        nonlocal feasible, near
        r = _trig_eval(fac, lay, req)
        if r is None:
            return
        d, e, eta = r
        key = (lay.max_freq(), d, e)
        if d < req.delta * _MARGIN and e < req.eps * _MARGIN:
            if feasible is None or key < feasible[0]:
                feasible = (key, lay, eta)
        else:
            score = (max(e / req.eps, d / req.delta), key)
            if _better_failure(score, near and near[0]):
                near = (score, lay, eta)

    for lay in _trig_layouts(req, cap_freq):
        consider(lay)
        seen += 1
        if seen >= req.budget.max_candidates:
            break
    if feasible is None:
        rng = np.random.default_rng(req.seed)
        for lay in _trig_random_layouts(req, cap_freq, rng, req.budget.fallback_samples):
            consider(lay)
    chosen = feasible or near
    if chosen is None:
        raise UapSearchFailed(_zero_certificate(req), "no layout fits below the cap")
    _, lay, eta = chosen
    fs = fac.smooth(lay.smoother, lay.D0)
    block = trig_product_block(req.system, fs, lay, eta)
    params = dict(lay.to_json(), eta=eta)
    cert = _certificate(req, block, "trig-riesz" if feasible else "trig-riesz-best", params)
    if feasible is None or not (cert.achieved_eps < req.eps and cert.achieved_delta < req.delta):
        raise UapSearchFailed(cert, "no layout below the cap meets both bounds")
    return cert


def solve_uap(req: UapRequest) -> UapCertificate:
    """Certificate with ||H||_1 < eps and d_p(f, Q) < delta, spectrum >= n0."""
    if not np.any(req.f.values):
        return _zero_certificate(req)
    if not any(np.isclose(s, -1.0) for s in req.sign_set):
        raise UapSearchFailed(_zero_certificate(req), "product signs need -1 in the sign set")
    if req.system.kind == WALSH:
        return _solve_walsh(req)
    return _solve_trig(req)


def check_uap(cert: UapCertificate, req: UapRequest) -> CheckReport:
    """Recompute both bounds from the block alone."""
    rep = CheckReport(provenance={"request": req.echo(), "slack": SLACK,
                                  "strategy": cert.strategy})
    blk = cert.block
    sys = req.system
    rep.add("spectrum >= n0", req.n0, blk.start, blk.start >= req.n0)
    rep.add("spectrum <= cap", req.cap(), blk.end, blk.end <= req.cap())
    allowed = np.asarray(req.sign_set, dtype=np.complex128)
    bad = ~np.isclose(blk.signs[:, None], allowed[None, :], atol=1e-12).any(axis=1)
    rep.add("signs in sign set", 0, int(bad.sum()), not bad.any())
    H = partial_sum(sys, [blk], blk.end, use_signs=False)
    Q = partial_sum(sys, [blk], blk.end, use_signs=True)
    rep.upper("||H||_1 < eps", req.eps, l1_norm(H))
    rep.upper("d_p(f,Q) < delta", req.delta, lp_distance(req.f, Q, req.metric_p))
    drift = max(float(np.max(np.abs(H.values - cert.H.values))),
                float(np.max(np.abs(Q.values - cert.Q.values))))
    scale = 1e-9 * (1.0 + float(np.max(np.abs(Q.values))))
    rep.add("stored grids match block", scale, drift, drift <= scale)
    return rep


# --- asymptotic property -------------------------------------------------------

def _asym_from_block(req: UapRequest, sigma: float, C: float, block,
                     E: MaskSet, strategy: str, params: dict) -> AsymUapCertificate:
    sys = req.system
    H = partial_sum(sys, [block], block.end, use_signs=False)
    Q = partial_sum(sys, [block], block.end, use_signs=True)
    inE = E.as_bool()
    ghat = GridFunction(sys.domain, np.where(inE, req.f.values, Q.values))
    fl1 = l1_norm(req.f)
    achieved = {"complement_measure": E.complement_measure(),
                "norm_H": l1_norm(H),
                "ghat_ratio": l1_norm(ghat) / fl1 if fl1 > 0 else 0.0,
                "restricted_l1": l1_norm((req.f - Q).restrict(E))}
    return AsymUapCertificate(block, H, Q, E, ghat, C, sigma, achieved,
                              strategy, req.seed, params)


def _asym_ok(cert: AsymUapCertificate, req: UapRequest) -> bool:
    a = cert.achieved
    return (a["complement_measure"] < cert.sigma and a["norm_H"] < req.eps
            and a["ghat_ratio"] <= cert.C and a["restricted_l1"] < req.delta)


def _asym_score(a: dict, req: UapRequest, sigma: float, C: float) -> float:
    return max(a["complement_measure"] / sigma, a["norm_H"] / req.eps,
               a["ghat_ratio"] / C, a["restricted_l1"] / req.delta)


def _walsh_asym_stats(sizes, fl1: float, support: float):
    """Closed forms for the canonical eta = 1/(2^J - 1)."""
    J = len(sizes)
    eta = 1.0 / (2.0 ** J - 1.0)
    B = sum(sizes)
    normH = 2.0 * eta * (1.0 - 2.0 ** -B) * fl1
    p_spike = 1.0 - float(np.prod([1.0 - 2.0 ** -b for b in sizes]))
    spike_mass = sum(pr * abs(eta * (x - 1.0)) for pr, x, sp in _spike_distribution(sizes) if sp)
    ratio = (1.0 - p_spike) + spike_mass
    return eta, normH, support * p_spike, ratio


def _coarsen(f: GridFunction, s: int) -> GridFunction:
    """Block means of f over 2^s equal cells (conditional expectation)."""
    c = f.domain.cells
    means = f.values.reshape(1 << s, -1).mean(axis=1)
    return GridFunction(f.domain, np.repeat(means, c >> s))


def _solve_asym_walsh_at(req: UapRequest, sigma: float, C: float,
                         s: int, fs: GridFunction):
    sys = req.system
    g = sys.domain.log2_cells
    low = _walsh_low_bit(req.n0, s)
    top = min(g, req.cap().bit_length() - 1)
    if (1 << low) + 1 > req.cap() or low >= top:
        return None, None
    support = float(np.count_nonzero(fs.values)) * sys.domain.cell_width
    fl1 = l1_norm(fs)
    feasible, near = None, None
    for sizes in _walsh_layouts(top - low, req.budget.max_candidates):
        eta, nH, cm, ratio = _walsh_asym_stats(sizes, fl1, support)
        a = {"complement_measure": cm, "norm_H": nH, "ghat_ratio": ratio,
             "restricted_l1": 0.0}
        key = (sum(sizes), cm, nH)
        if cm < sigma * _MARGIN and nH < req.eps * _MARGIN and ratio <= C * _MARGIN:
            if feasible is None or key < feasible[0]:
                feasible = (key, sizes, eta)
        else:
            score = (_asym_score(a, req, sigma, C), key)
            if _better_failure(score, near and near[0]):
                near = (score, sizes, eta)
    chosen = feasible or near
    if chosen is None:
        return None, None
    _, sizes, eta = chosen
    block = walsh_product_block(sys, fs, low, sizes, eta)
    spikes = np.zeros(sys.cells, dtype=bool)
    for sp in _walsh_spikes(g, low, sizes):
        spikes |= sp
    E = MaskSet.from_bool(sys.domain, ~(spikes & (fs.values != 0)))
    params = {"low": low, "sizes": list(sizes), "eta": eta, "resolution": s}
    cert = _asym_from_block(req, sigma, C, block, E,
                            "walsh-product" if feasible else "walsh-product-best", params)
    return cert, _asym_ok(cert, req)


def _solve_asym_walsh(req: UapRequest, sigma: float, C: float) -> AsymUapCertificate:
    """Product construction on the block means of f.

    A target with fine structure leaves no digits for the factors, so it is
    replaced by its means over 2^s cells, s decreasing from the exact
    resolution, as long as the discarded part keeps L1 norm below delta.
    ghat stays equal to f itself on E.
    """
    f = req.f
    s_f = dyadic_resolution(f)
    best, chosen, tried = None, None, False
    for s in range(s_f, -1, -1):
        fs = f if s == s_f else _coarsen(f, s)
        if s != s_f and l1_norm(f - fs) >= req.delta * _MARGIN:
            break
        cert, ok = _solve_asym_walsh_at(req, sigma, C, s, fs)
        if cert is None:
            continue
        tried = True
        if ok:
            # shortest block wins, so later steps keep spectrum room
            if chosen is None or cert.block.end < chosen.block.end:
                chosen = cert
        elif best is None or (_asym_score(cert.achieved, req, sigma, C)
                              < _asym_score(best.achieved, req, sigma, C)):
            best = cert
    if chosen is not None:
        return chosen
    if not tried:
        raise ResolutionInsufficient("no factor digits above the target resolution")
    raise UapSearchFailed(best, "no layout within the grid meets all five conditions")


def _trig_exceptional(req: UapRequest, Q: np.ndarray, sigma: float) -> MaskSet:
    """Drop the cells with the largest |f - Q| while the dropped measure < sigma."""
    cw = req.system.domain.cell_width
    n_drop = int(math.ceil(sigma / cw)) - 1
    n_drop = max(0, min(n_drop, req.system.cells))
    err = np.abs(req.f.values - Q)
    order = np.argsort(-err, kind="stable")
    keep = np.ones(req.system.cells, dtype=bool)
    keep[order[:n_drop]] = False
    keep |= err == 0
    return MaskSet.from_bool(req.system.domain, keep)


def _solve_asym_trig(req: UapRequest, sigma: float, C: float) -> AsymUapCertificate:
    if req.system.frequencies == "positive":
        raise UapSearchFailed(None, "positive-frequency system has no sign-flip gain")
    cap_freq = _trig_cap_freq(req)
    fac = _TrigFactory(req)
    cw = req.system.domain.cell_width
    fl1 = l1_norm(req.f)
    feasible, near = None, None
    seen = 0
    for lay in _trig_layouts(req, cap_freq):
        seen += 1
        if seen > req.budget.max_candidates:
            break
        fs = fac.smooth(lay.smoother, lay.D0)
        xh, xq = fac.products(lay.kernel, lay.d, lay.dilations)
        base = float(np.sum(np.abs(fs * xh))) * cw
        if base == 0.0:
            continue
        eta_max = req.eps / base * _MARGIN
        for eta in _eta_grid(eta_max, len(lay.dilations))[-8:]:
            Q = eta * fs * xq
            E = _trig_exceptional(req, Q, sigma)
            inE = E.as_bool()
            ghat = np.where(inE, req.f.values, Q)
            a = {"complement_measure": E.complement_measure(), "norm_H": base * eta,
                 "ghat_ratio": float(np.sum(np.abs(ghat))) * cw / fl1,
                 "restricted_l1": float(np.sum(np.abs(req.f.values - Q)[inE])) * cw}
            key = (lay.max_freq(), a["restricted_l1"])
            if (a["complement_measure"] < sigma and a["norm_H"] < req.eps
                    and a["ghat_ratio"] <= C * _MARGIN
                    and a["restricted_l1"] < req.delta * _MARGIN):
                if feasible is None or key < feasible[0]:
                    feasible = (key, lay, float(eta))
            else:
                score = (_asym_score(a, req, sigma, C), key)
                if _better_failure(score, near and near[0]):
                    near = (score, lay, float(eta))
    chosen = feasible or near
    if chosen is None:
        raise UapSearchFailed(None, "no layout fits below the cap")
    _, lay, eta = chosen
    fs = fac.smooth(lay.smoother, lay.D0)
    block = trig_product_block(req.system, fs, lay, eta)
    Q = partial_sum(req.system, [block], block.end, use_signs=True)
    E = _trig_exceptional(req, Q.values, sigma)
    params = dict(lay.to_json(), eta=eta)
    cert = _asym_from_block(req, sigma, C, block, E,
                            "trig-riesz" if feasible else "trig-riesz-best", params)
    if not _asym_ok(cert, req):
        raise UapSearchFailed(cert, "no layout below the cap meets all five conditions")
    return cert


def solve_asym_uap(req: UapRequest, sigma: float,
                   C: Optional[float] = None) -> AsymUapCertificate:
    """Certificate for the asymptotic property (L1 restricted to E)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    C = ASYM_C[req.system.kind] if C is None else float(C)
    if not np.any(req.f.values):
        blk = CoefficientBlock(req.n0, req.n0, [0.0])
        return _asym_from_block(req, sigma, C, blk, MaskSet.full(req.system.domain),
                                "zero", {})
    if req.system.kind == WALSH:
        return _solve_asym_walsh(req, sigma, C)
    return _solve_asym_trig(req, sigma, C)


def check_asym_uap(cert: AsymUapCertificate, req: UapRequest) -> CheckReport:
    """Recompute the five conditions from block, mask and ghat."""
    rep = CheckReport(provenance={"request": req.echo(), "sigma": cert.sigma,
                                  "C": cert.C, "slack": SLACK,
                                  "strategy": cert.strategy})
    sys, blk, E = req.system, cert.block, cert.E
    rep.add("spectrum >= n0", req.n0, blk.start, blk.start >= req.n0)
    H = partial_sum(sys, [blk], blk.end, use_signs=False)
    Q = partial_sum(sys, [blk], blk.end, use_signs=True)
    rep.upper("|E^c| < sigma", cert.sigma, E.complement_measure())
    rep.upper("||H||_1 < eps", req.eps, l1_norm(H))
    inE = E.as_bool()
    diff = np.abs(cert.ghat.values - req.f.values)[inE]
    rep.add("ghat = f on E", 0.0, float(diff.max()) if diff.size else 0.0,
            not np.any(diff))
    rep.upper("||ghat||_1 <= C ||f||_1", cert.C * l1_norm(req.f), l1_norm(cert.ghat),
              strict=False)
    rep.upper("int_E |f - Q| < delta", req.delta, l1_norm((req.f - Q).restrict(E)))
    rep.upper("||ghat - Q||_1 < delta", req.delta, l1_norm(cert.ghat - Q))
    return rep


def calibrate_asym_constant(ratios) -> float:
    """C as twice the largest observed ||ghat||_1 / ||f||_1."""
    return 2.0 * max(ratios)
