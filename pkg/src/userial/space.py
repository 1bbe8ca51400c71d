"""Discretized measure spaces, grid functions, metrics and the dense family.

Functions live on a uniform dyadic grid over one of two intervals and are
treated as piecewise constant (value at the cell midpoint). All integrals use
the midpoint rule, which is exact for step functions.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import gmpy2
import numpy as np
from gmpy2 import mpz

from .kernels import pow_abs_sum

TRIG_INTERVAL = "TrigInterval"
DYADIC_UNIT = "DyadicUnit"

_BOUNDS = {TRIG_INTERVAL: (-math.pi, math.pi), DYADIC_UNIT: (0.0, 1.0)}


class SpaceError(ValueError):
    """Raised for invalid grid objects or failed space operations."""


@dataclass(frozen=True)
class Domain:
    kind: str
    cells: int

    def __post_init__(self):
        if self.kind not in _BOUNDS:
            raise SpaceError(f"unknown domain kind {self.kind!r}")
        c = int(self.cells)
        if c < 16 or c & (c - 1):
            raise SpaceError("cells must be a power of two, at least 2^4")

    @classmethod
    def trig(cls, log2_cells: int = 12) -> "Domain":
        return cls(TRIG_INTERVAL, 1 << log2_cells)

    @classmethod
    def dyadic(cls, log2_cells: int = 12) -> "Domain":
        return cls(DYADIC_UNIT, 1 << log2_cells)

    @property
    def lower(self) -> float:
        return _BOUNDS[self.kind][0]

    @property
    def upper(self) -> float:
        return _BOUNDS[self.kind][1]

    @property
    def length(self) -> float:
        return self.upper - self.lower

    @property
    def log2_cells(self) -> int:
        return self.cells.bit_length() - 1

    @property
    def cell_width(self) -> float:
        return self.length / self.cells

    def midpoints(self) -> np.ndarray:
        return self.lower + (np.arange(self.cells) + 0.5) * self.cell_width

    def to_json(self) -> dict:
        return {"kind": self.kind, "cells": self.cells}

    @classmethod
    def from_json(cls, obj: dict) -> "Domain":
        return cls(str(obj["kind"]), int(obj["cells"]))


class GridFunction:
    """Complex values at the cell midpoints of a domain (immutable)."""

    __slots__ = ("domain", "values")

    def __init__(self, domain: Domain, values):
        vals = np.array(values, dtype=np.complex128)
        if vals.shape != (domain.cells,):
            raise SpaceError(
                f"expected {domain.cells} values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise SpaceError("grid function values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "values", vals)

    def __setattr__(self, name, value):
        raise AttributeError("GridFunction is immutable")

    @classmethod
    def zeros(cls, domain: Domain) -> "GridFunction":
        return cls(domain, np.zeros(domain.cells))

    @classmethod
    def constant(cls, domain: Domain, value: complex) -> "GridFunction":
        return cls(domain, np.full(domain.cells, value, dtype=np.complex128))

    @classmethod
    def from_callable(cls, domain: Domain, fn) -> "GridFunction":
        return cls(domain, fn(domain.midpoints()))

    def _check(self, other: "GridFunction") -> None:
        if not isinstance(other, GridFunction):
            raise TypeError("expected a GridFunction")
        if other.domain != self.domain:
            raise SpaceError("incompatible domains")

    def __add__(self, other):
        self._check(other)
        return GridFunction(self.domain, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return GridFunction(self.domain, self.values - other.values)

    def __neg__(self):
        return GridFunction(self.domain, -self.values)

    def __mul__(self, scalar):
        if isinstance(scalar, GridFunction):
            self._check(scalar)
            return GridFunction(self.domain, self.values * scalar.values)
        return GridFunction(self.domain, self.values * complex(scalar))

    __rmul__ = __mul__

    def __eq__(self, other):
        return (isinstance(other, GridFunction) and other.domain == self.domain
                and np.array_equal(other.values, self.values))

    def __hash__(self):
        return hash((self.domain, self.values.tobytes()))

    def __repr__(self):
        return f"GridFunction({self.domain.kind}, cells={self.domain.cells})"

    def restrict(self, mask: "MaskSet") -> "GridFunction":
        """Copy that is zero outside the mask."""
        if mask.domain != self.domain:
            raise SpaceError("incompatible domains")
        out = np.zeros(self.domain.cells, dtype=np.complex128)
        out[mask.members] = self.values[mask.members]
        return GridFunction(self.domain, out)

    def to_json(self) -> dict:
        return {"domain": self.domain.to_json(),
                "re": [float(x) for x in self.values.real],
                "im": [float(x) for x in self.values.imag]}

    @classmethod
    def from_json(cls, obj: dict) -> "GridFunction":
        dom = Domain.from_json(obj["domain"])
        re = np.asarray(obj["re"], dtype=np.float64)
        im = np.asarray(obj["im"], dtype=np.float64)
        if re.shape != im.shape:
            raise SpaceError("re/im length mismatch")
        return cls(dom, re + 1j * im)


class MaskSet:
    """A set of grid cells; measure is cell count times cell width."""

    __slots__ = ("domain", "members")

    def __init__(self, domain: Domain, members: Iterable[int]):
        idx = np.unique(np.asarray(list(members) if not isinstance(
            members, np.ndarray) else members, dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= domain.cells):
            raise SpaceError("mask member out of range")
        idx.setflags(write=False)
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "members", idx)

    def __setattr__(self, name, value):
        raise AttributeError("MaskSet is immutable")

    @classmethod
    def full(cls, domain: Domain) -> "MaskSet":
        return cls(domain, np.arange(domain.cells))

    @classmethod
    def from_bool(cls, domain: Domain, flags) -> "MaskSet":
        return cls(domain, np.flatnonzero(np.asarray(flags, dtype=bool)))

    def as_bool(self) -> np.ndarray:
        out = np.zeros(self.domain.cells, dtype=bool)
        out[self.members] = True
        return out

    def complement(self) -> "MaskSet":
        return MaskSet.from_bool(self.domain, ~self.as_bool())

    def __and__(self, other: "MaskSet") -> "MaskSet":
        if other.domain != self.domain:
            raise SpaceError("incompatible domains")
        return MaskSet(self.domain, np.intersect1d(self.members, other.members))

    def issubset(self, other: "MaskSet") -> bool:
        return bool(np.all(np.isin(self.members, other.members)))

    def __len__(self):
        return int(self.members.size)

    def __eq__(self, other):
        return (isinstance(other, MaskSet) and other.domain == self.domain
                and np.array_equal(other.members, self.members))

    def __hash__(self):
        return hash((self.domain, self.members.tobytes()))

    def measure(self) -> float:
        return len(self) * self.domain.cell_width

    def complement_measure(self) -> float:
        return (self.domain.cells - len(self)) * self.domain.cell_width

    def to_json(self) -> dict:
        return {"domain": self.domain.to_json(),
                "members": [int(i) for i in self.members]}

    @classmethod
    def from_json(cls, obj: dict) -> "MaskSet":
        return cls(Domain.from_json(obj["domain"]), obj["members"])


# --- integrals and metrics -------------------------------------------------

def _same(f: GridFunction, g: GridFunction) -> None:
    if f.domain != g.domain:
        raise SpaceError("incompatible domains")


def integrate(f: GridFunction) -> complex:
    return complex(np.sum(f.values) * f.domain.cell_width)


def l1_norm(f: GridFunction) -> float:
    return float(np.sum(np.abs(f.values)) * f.domain.cell_width)


def lp_distance(f: GridFunction, g: GridFunction, p: float) -> float:
    """Integral of |f - g|^p over the domain, for 0 < p < 1."""
    _same(f, g)
    if not 0.0 < p < 1.0:
        raise SpaceError("p must lie in (0, 1)")
    d = f.values - g.values
    return pow_abs_sum(np.ascontiguousarray(d.real),
                       np.ascontiguousarray(d.imag), p) * f.domain.cell_width


def measure_metric(f: GridFunction, g: GridFunction) -> float:
    """Integral of |f - g| / (1 + |f - g|): metrizes convergence in measure."""
    _same(f, g)
    a = np.abs(f.values - g.values)
    return float(np.sum(a / (1.0 + a)) * f.domain.cell_width)


@dataclass(frozen=True)
class Metric:
    """Which distance to use: "L1", "Lp" (with p) or "L0"."""
    kind: str
    p: float = 0.5

    def __post_init__(self):
        if self.kind not in ("L1", "Lp", "L0"):
            raise SpaceError(f"unknown metric {self.kind!r}")
        if self.kind == "Lp" and not 0.0 < self.p < 1.0:
            raise SpaceError("p must lie in (0, 1)")

    @classmethod
    def lp(cls, p: float) -> "Metric":
        return cls("Lp", float(p))

    def distance(self, f: GridFunction, g: GridFunction) -> float:
        if self.kind == "L1":
            _same(f, g)
            return l1_norm(f - g)
        if self.kind == "L0":
            return measure_metric(f, g)
        return lp_distance(f, g, self.p)

    def to_json(self) -> dict:
        return {"kind": self.kind, "p": self.p}

    @classmethod
    def from_json(cls, obj: dict) -> "Metric":
        return cls(str(obj["kind"]), float(obj["p"]))


MetricLike = Union[Metric, str, float]


def as_metric(metric: MetricLike) -> Metric:
    if isinstance(metric, Metric):
        return metric
    if isinstance(metric, str):
        return Metric(metric)
    return Metric.lp(float(metric))


# --- dense family -----------------------------------------------------------
#
# Codes are triples (s, v, numerators): a step function on 2^s equal cells
# with values numerator / 2^v, where each numerator is a Gaussian integer
# with |re|, |im| <= 4^v. For each (s, v) the numerator tuples form a finite
# set, listed in mixed-radix order with zigzag digits 0, 1, -1, 2, -2, ...
# (cell-major, real part first, cell 0 least significant). The pairs (s, v)
# are listed by n = 2^s (2v + 1), so n = 1, 2, 3, ... visits (0,0), (1,0),
# (0,1), (2,0), ... A pair's set has about 4^n members, so an index needs
# roughly as many bits as the code it names. Index 1 is the zero function
# at (0, 0).

MAX_LEVEL = 40


@dataclass(frozen=True)
class DenseFamilyCode:
    resolution: int
    level: int
    numerators: tuple

    def __post_init__(self):
        if self.resolution < 0 or self.level < 0:
            raise SpaceError("resolution and level must be non-negative")
        if len(self.numerators) != 1 << self.resolution:
            raise SpaceError("need 2^s numerators")
        bound = 4 ** self.level
        for z in self.numerators:
            if abs(z.real) > bound or abs(z.imag) > bound:
                raise SpaceError("numerator exceeds 4^v")

    @property
    def index(self) -> int:
        return encode(self)


def _radix(v: int) -> int:
    return 2 * 4 ** v + 1


def _count(s: int, v: int):
    return mpz(_radix(v)) ** (2 << s)


def _pair(n: int) -> tuple:
    """(s, v) with n = 2^s (2v + 1)."""
    s = (n & -n).bit_length() - 1
    return s, ((n >> s) - 1) // 2


_LEVEL_MEMO: dict = {}


def _level_sum(s: int, V: int):
    """Sum of _count(s, v) over v = 0..V.

    With N = 2^(s+1) the sum is (V+1) + sum_j C(N,j) 2^j (4^(j(V+1)) - 1)/(4^j - 1)
    by the binomial theorem.  Short sums go term by term, and a nearby
    memoized sum of the same resolution is adjusted when that is cheaper.
    """
    if V < 0:
        return mpz(0)
    memo = _LEVEL_MEMO.setdefault(s, {})
    if V in memo:
        return memo[V]
    N = 2 << s
    near = min(memo, key=lambda w: abs(w - V), default=None)
    if near is not None and abs(near - V) <= min(V + 1, N) // 4:
        total = memo[near]
        if near < V:
            total = total + sum((_count(s, v) for v in range(near + 1, V + 1)), mpz(0))
        else:
            total = total - sum((_count(s, v) for v in range(V + 1, near + 1)), mpz(0))
    elif 2 * (V + 1) <= N:
        total = sum((_count(s, v) for v in range(V + 1)), mpz(0))
    else:
        total = mpz(V + 1)
        one = mpz(1)
        for j in range(1, N + 1):
            rep = ((one << (2 * j * (V + 1))) - 1) // ((one << (2 * j)) - 1)
            total += gmpy2.bincoef(N, j) * (rep << j)
    if len(memo) >= 64:
        memo.clear()
    memo[V] = total
    return total


@functools.lru_cache(maxsize=4096)
def _offset_n(n: int):
    """Number of codes whose pair comes before pair number n."""
    total, s = mpz(0), 0
    while (1 << s) <= n - 1:
        odd_max = (n - 1) >> s          # odd o with o 2^s < n lie in [1, odd_max]
        total += _level_sum(s, (odd_max + 1) // 2 - 1)
        s += 1
    return total


def _offset(s: int, v: int):
    return _offset_n((2 * v + 1) << s)


def _level_of(n: int, s: int) -> int:
    """Largest v with (2v + 1) 2^s < n, or -1."""
    return (((n - 1) >> s) + 1) // 2 - 1


def _log2_top(n: int, s: int) -> float:
    """log2 of the largest count summed by _level_sum(s, _level_of(n, s))."""
    v = _level_of(n, s)
    if v < 0:
        return -math.inf
    return (2 << s) * (2 * v + 1 + math.log2(1 + 0.5 * 4.0 ** -v))


def _log2_big(x) -> float:
    b = int(gmpy2.bit_length(x))
    if b <= 60:
        return math.log2(int(x))
    return b - 60 + math.log2(int(x >> (b - 60)))


def _pair_of_rank(rest) -> int:
    """Pair number n with _offset_n(n) <= rest < _offset_n(n + 1).

    Every pair n holds more than 4^n codes and at most 3^(2n), so the bit
    length of rest pins n to a window.  Levels whose summed range does not
    move across the window contribute a constant; each moving level sum is
    within 9/8 of its largest term, so the logarithm of the moving part is
    known to within log2(9/8) and narrows the window further.
    """
    bits = int(gmpy2.bit_length(rest)) if rest else 0
    lo = max(1, int(bits / (2 * math.log2(3))) - 2)
    hi = bits // 2 + 2
    slack = math.log2(9 / 8) + 1e-6
    # invariant: offset(lo) <= rest < offset(hi + 1)
    while lo < hi:
        top = (hi + 1).bit_length()
        fixed = [s for s in range(top) if _level_of(lo, s) == _level_of(hi + 1, s)]
        moving = [s for s in range(top) if s not in fixed]
        r = rest - sum((_level_sum(s, _level_of(lo, s)) for s in fixed), mpz(0))
        shrunk = False
        if r > 0:
            target = _log2_big(r)

            def est(n):
                xs = [_log2_top(n, s) for s in moving]
                m = max(xs)
                if m == -math.inf:
                    return m
                return m + math.log2(sum(2.0 ** (x - m) for x in xs))
            # certainly offset(n) <= rest when est(n) + slack < target
            a, b = lo, hi
            while a < b:
                mid = (a + b + 1) // 2
                if est(mid) + slack < target:
                    a = mid
                else:
                    b = mid - 1
            # certainly offset(n + 1) > rest when est(n + 1) > target
            c, d = a, hi
            while c < d:
                mid = (c + d) // 2
                if est(mid + 1) > target + 1e-6:
                    d = mid
                else:
                    c = mid + 1
            if (a, c) != (lo, hi):
                lo, hi, shrunk = a, c, True
        if not shrunk:                   # exact bisection step
            mid = (lo + hi) // 2
            if _offset_n(mid + 1) > rest:
                hi = mid
            else:
                lo = mid + 1
    return lo


def _zig(x: int) -> int:
    return 2 * x - 1 if x > 0 else -2 * x


def _unzig(d: int) -> int:
    return (d + 1) // 2 if d & 1 else -(d // 2)


@functools.lru_cache(maxsize=256)
def _rpow(r: int, e: int):
    return mpz(r) ** e


def _to_digits(x: int, r: int, count: int) -> list:
    if count <= 64:
        out = []
        for _ in range(count):
            x, d = divmod(x, r)
            out.append(int(d))
        return out
    half = count // 2
    hi, lo = divmod(x, _rpow(r, half))
    return _to_digits(lo, r, half) + _to_digits(hi, r, count - half)


def _from_digits(digits: Sequence[int], r: int) -> int:
    n = len(digits)
    if n <= 64:
        x = mpz(0)
        for d in reversed(digits):
            x = x * r + d
        return x
    half = n // 2
    return (_from_digits(digits[:half], r)
            + _from_digits(digits[half:], r) * _rpow(r, half))


def _gauss(z) -> complex:
    return complex(int(z.real), int(z.imag))


def encode(code: DenseFamilyCode) -> int:
    s, v = code.resolution, code.level
    digits = []
    for z in code.numerators:
        digits.append(_zig(int(z.real)))
        digits.append(_zig(int(z.imag)))
    return int(1 + _offset(s, v) + _from_digits(digits, _radix(v)))


def decode(m: int) -> DenseFamilyCode:
    m = int(m)
    if m < 1:
        raise SpaceError("dense-family index must be >= 1")
    n = _pair_of_rank(mpz(m - 1))
    rest = mpz(m - 1) - _offset_n(n)
    s, v = _pair(n)
    digits = _to_digits(rest, _radix(v), 2 << s)
    nums = tuple(complex(_unzig(digits[2 * j]), _unzig(digits[2 * j + 1]))
                 for j in range(1 << s))
    return DenseFamilyCode(s, v, nums)


def code_to_grid(code: DenseFamilyCode, domain: Domain) -> GridFunction:
    if code.resolution > domain.log2_cells:
        raise SpaceError("grid too coarse")
    vals = np.array([complex(z) for z in code.numerators]) / float(2 ** code.level)
    reps = domain.cells >> code.resolution
    return GridFunction(domain, np.repeat(vals, reps))


def enumerate_dense(m: int, domain: Domain) -> GridFunction:
    """The m-th element of the dense family, sampled on the domain."""
    return code_to_grid(decode(m), domain)


def _block_means(h: GridFunction, s: int) -> np.ndarray:
    return h.values.reshape(1 << s, -1).mean(axis=1)


def quantize(h: GridFunction, s: int, v: int):
    """Dense code for h averaged on 2^s cells and rounded to 2^-v, or None."""
    means = _block_means(h, s)
    scale = float(2 ** v)
    re = np.rint(means.real * scale)
    im = np.rint(means.imag * scale)
    bound = float(4 ** v)
    if np.any(np.abs(re) > bound) or np.any(np.abs(im) > bound):
        return None
    nums = tuple(complex(int(a), int(b)) for a, b in zip(re, im))
    return DenseFamilyCode(s, v, nums)


def locate_close(h: GridFunction, tol: float,
                 metric: MetricLike = "L1") -> int:
    """Index m with distance(h, f_m) < tol, found by quantization.

    Candidates are tried in enumeration order of (s, v), so the first hit is
    the coarsest quantization that meets the tolerance.
    """
    if tol <= 0:
        raise SpaceError("tol must be positive")
    met = as_metric(metric)
    g = h.domain.log2_cells
    for stage in range(g + MAX_LEVEL + 1):
        for s in range(min(stage, g) + 1):
            v = stage - s
            if v > MAX_LEVEL:
                continue
            code = quantize(h, s, v)
            if code is None:
                continue
            if met.distance(h, code_to_grid(code, h.domain)) < tol:
                return encode(code)
    raise SpaceError("target not quantizable at tolerance")


def dyadic_resolution(f: GridFunction) -> int:
    """Smallest s such that f is constant on each of 2^s equal cells."""
    g = f.domain.log2_cells
    for s in range(g + 1):
        blocks = f.values.reshape(1 << s, -1)
        if np.all(blocks == blocks[:, :1]):
            return s
    return g


def index_to_json(m: int) -> str:
    # hex keeps huge indices clear of the int -> decimal string limit
    return hex(int(m))


def index_from_json(s) -> int:
    return int(s, 16) if isinstance(s, str) else int(s)
