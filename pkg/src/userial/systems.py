"""Trigonometric and Walsh-Paley systems with 1-based indexing.

Walsh index n is the Paley function w_{n-1} on [0, 1). With the grid cell
index i, w_k(i) = (-1)^popcount(k & bitrev(i)), so Paley coefficients are a
Hadamard transform of the bit-reversed samples.

The trigonometric system has two enumerations. "positive" is e^{inx},
n >= 1. "symmetric" enumerates all of Z as 0, 1, -1, 2, -2, ..., that is
frequency (-1)^n * floor(n/2) for index n. Only the symmetric one can have
the approximation property (see the decisions ledger); it is the default.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kernels import fwht
from .space import (DYADIC_UNIT, TRIG_INTERVAL, Domain, GridFunction,
                    SpaceError)

TRIG = "Trig"
WALSH = "Walsh"
SIGNS_PM1 = (1 + 0j, -1 + 0j)


class SeriesError(ValueError):
    pass


@dataclass(frozen=True)
class SystemSpec:
    kind: str
    domain: Domain
    frequencies: str = "symmetric"

    def __post_init__(self):
        if self.kind == TRIG:
            if self.domain.kind != TRIG_INTERVAL:
                raise SpaceError("trigonometric system needs [-pi, pi]")
            if self.frequencies not in ("symmetric", "positive"):
                raise SpaceError("frequencies must be symmetric or positive")
        elif self.kind == WALSH:
            if self.domain.kind != DYADIC_UNIT:
                raise SpaceError("Walsh system needs [0, 1)")
            object.__setattr__(self, "frequencies", "paley")
        else:
            raise SpaceError(f"unknown system {self.kind!r}")

    @classmethod
    def trig(cls, log2_cells: int = 12, frequencies: str = "symmetric"):
        return cls(TRIG, Domain.trig(log2_cells), frequencies)

    @classmethod
    def walsh(cls, log2_cells: int = 12):
        return cls(WALSH, Domain.dyadic(log2_cells))

    @property
    def cells(self) -> int:
        return self.domain.cells

    def frequency(self, n):
        """Frequency (trig) or Paley index (Walsh) of 1-based index n."""
        n = np.asarray(n, dtype=np.int64)
        if self.kind == WALSH or self.frequencies == "positive":
            out = n - 1 if self.kind == WALSH else n
        else:
            out = np.where(n % 2 == 0, n // 2, -(n // 2))
        return out if out.ndim else int(out)

    def index_of(self, k: int) -> int:
        """Inverse of frequency()."""
        if self.kind == WALSH:
            return int(k) + 1
        if self.frequencies == "positive":
            if k < 1:
                raise SpaceError("positive enumeration has no frequency <= 0")
            return int(k)
        return 2 * k if k > 0 else 1 - 2 * k

    def max_index(self) -> int:
        """Largest index any solver may use (anti-aliasing cap for trig)."""
        if self.kind == WALSH:
            return self.cells
        cap = self.cells // 4
        return cap if self.frequencies == "positive" else 2 * cap + 1

    def to_json(self) -> dict:
        return {"kind": self.kind, "domain": self.domain.to_json(),
                "frequencies": self.frequencies}

    @classmethod
    def from_json(cls, obj: dict) -> "SystemSpec":
        return cls(str(obj["kind"]), Domain.from_json(obj["domain"]),
                   str(obj.get("frequencies", "symmetric")))


def _cplx_pairs(values) -> list:
    return [[float(z.real), float(z.imag)] for z in values]


def _from_pairs(pairs) -> np.ndarray:
    a = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    return a[:, 0] + 1j * a[:, 1]


class CoefficientBlock:
    """Coefficients alpha_n and signs delta_n for n in [start, end]."""

    __slots__ = ("start", "end", "alphas", "signs")

    def __init__(self, start: int, end: int, alphas, signs=None,
                 sign_set: Sequence[complex] = SIGNS_PM1):
        start, end = int(start), int(end)
        if start < 1 or end < start:
            raise SeriesError("need 1 <= start <= end")
        a = np.array(alphas, dtype=np.complex128)
        if a.shape != (end - start + 1,):
            raise SeriesError("alphas length must be end - start + 1")
        if not np.all(np.isfinite(a)):
            raise SeriesError("alphas must be finite")
        if signs is None:
            sg = np.ones_like(a)
        else:
            sg = np.array(signs, dtype=np.complex128)
            if sg.shape != a.shape:
                raise SeriesError("signs length must match alphas")
        allowed = np.asarray(sign_set, dtype=np.complex128)
        if not np.any(np.isclose(allowed, 1.0)):
            raise SeriesError("the sign set must contain 1")
        ok = np.isclose(sg[:, None], allowed[None, :], rtol=0, atol=1e-12)
        if not np.all(ok.any(axis=1)):
            raise SeriesError("sign outside the configured sign set")
        a.setflags(write=False)
        sg.setflags(write=False)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "signs", sg)

    def __setattr__(self, name, value):
        raise AttributeError("CoefficientBlock is immutable")

    def __len__(self):
        return self.end - self.start + 1

    def __eq__(self, other):
        return (isinstance(other, CoefficientBlock)
                and (self.start, self.end) == (other.start, other.end)
                and np.array_equal(self.alphas, other.alphas)
                and np.array_equal(self.signs, other.signs))

    def __repr__(self):
        return f"CoefficientBlock([{self.start}, {self.end}])"

    def indices(self) -> np.ndarray:
        return np.arange(self.start, self.end + 1, dtype=np.int64)

    def with_alphas(self, alphas) -> "CoefficientBlock":
        return CoefficientBlock(self.start, self.end, alphas, self.signs)

    def with_signs(self, signs) -> "CoefficientBlock":
        return CoefficientBlock(self.start, self.end, self.alphas, signs)

    def to_json(self) -> dict:
        return {"start": self.start, "end": self.end,
                "alphas": _cplx_pairs(self.alphas),
                "signs": _cplx_pairs(self.signs)}

    @classmethod
    def from_json(cls, obj: dict) -> "CoefficientBlock":
        return cls(obj["start"], obj["end"], _from_pairs(obj["alphas"]),
                   _from_pairs(obj["signs"]))


# --- evaluation -------------------------------------------------------------

@functools.lru_cache(maxsize=8)
def bitrev(g: int) -> np.ndarray:
    i = np.arange(1 << g, dtype=np.int64)
    r = np.zeros_like(i)
    for b in range(g):
        r |= ((i >> b) & 1) << (g - 1 - b)
    r.setflags(write=False)
    return r


def walsh_row(paley: int, g: int) -> np.ndarray:
    """Values (+1/-1) of w_paley on the 2^g grid cells."""
    par = np.bitwise_count(np.int64(paley) & bitrev(g)) & 1
    return 1.0 - 2.0 * par


def evaluate_basis(sys: SystemSpec, n: int) -> GridFunction:
    if n < 1:
        raise SpaceError("index must be >= 1")
    if sys.kind == WALSH:
        if n > sys.cells:
            raise SpaceError("index beyond grid resolution")
        return GridFunction(sys.domain, walsh_row(n - 1, sys.domain.log2_cells))
    k = sys.frequency(n)
    return GridFunction(sys.domain, np.exp(1j * k * sys.domain.midpoints()))


def _trig_phase(sys: SystemSpec, k):
    # e^{ik x_i} = e^{ik(x_0)} * e^{2 pi i k i / C} with x_0 the first midpoint
    return np.exp(1j * np.asarray(k) * sys.domain.midpoints()[0])


def all_coefficients(sys: SystemSpec, f: GridFunction) -> np.ndarray:
    """Coefficients for every grid-resolvable index.

    Walsh: array over Paley 0..C-1 (index n at position n-1). Trig: array over
    FFT bins, position k mod C holds the coefficient of frequency k for
    |k| < C/2.
    """
    if f.domain != sys.domain:
        raise SpaceError("incompatible domains")
    C = sys.cells
    if sys.kind == WALSH:
        return fwht(f.values[bitrev(sys.domain.log2_cells)]) / C
    k = np.fft.fftfreq(C, 1.0 / C)
    return np.fft.fft(f.values) / C * np.conj(_trig_phase(sys, k))


def coefficient(sys: SystemSpec, n: int, f: GridFunction) -> complex:
    if f.domain != sys.domain:
        raise SpaceError("incompatible domains")
    if sys.kind == WALSH:
        if n < 1 or n > sys.cells:
            raise SpaceError("index beyond grid resolution")
        w = walsh_row(n - 1, sys.domain.log2_cells)
        return complex(np.dot(f.values, w) / sys.cells)
    k = sys.frequency(n)
    e = np.exp(-1j * k * sys.domain.midpoints())
    return complex(np.dot(f.values, e) / sys.cells)


def coefficients_at(sys: SystemSpec, f: GridFunction, indices) -> np.ndarray:
    """Coefficients c_n(f) for an array of indices."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return np.zeros(0, dtype=np.complex128)
    allc = all_coefficients(sys, f)
    C = sys.cells
    if sys.kind == WALSH:
        if idx.min() < 1 or idx.max() > C:
            raise SpaceError("index beyond grid resolution")
        return allc[idx - 1]
    k = sys.frequency(idx)
    if np.any(np.abs(k) >= C // 2):
        raise SpaceError("index beyond grid resolution")
    return allc[np.mod(k, C)]


def _check_blocks(blocks: Sequence[CoefficientBlock]) -> None:
    last = 0
    for b in blocks:
        if b.start <= last:
            raise SeriesError("inconsistent series")
        last = b.end


def synthesize(sys: SystemSpec, indices, coefs) -> GridFunction:
    """Grid samples of sum coefs[j] * phi_{indices[j]}."""
    idx = np.asarray(indices, dtype=np.int64)
    cf = np.asarray(coefs, dtype=np.complex128)
    C = sys.cells
    if idx.size == 0:
        return GridFunction.zeros(sys.domain)
    if sys.kind == WALSH:
        if idx.min() < 1 or idx.max() > C:
            raise SpaceError("index beyond grid resolution")
        spec = np.zeros(C, dtype=np.complex128)
        np.add.at(spec, idx - 1, cf)
        return GridFunction(sys.domain, fwht(spec)[bitrev(sys.domain.log2_cells)])
    k = sys.frequency(idx)
    spec = np.zeros(C, dtype=np.complex128)
    # exact samples even when |k| >= C/2: the phase carries the true k
    np.add.at(spec, np.mod(k, C), cf * _trig_phase(sys, k))
    return GridFunction(sys.domain, np.fft.ifft(spec) * C)


def gather(blocks: Sequence[CoefficientBlock], upto: int | None = None,
           use_signs: bool = True):
    """Concatenate (indices, signed or unsigned coefficients) of blocks."""
    _check_blocks(blocks)
    ids, cfs = [], []
    for b in blocks:
        hi = b.end if upto is None else min(b.end, upto)
        if hi < b.start:
            continue
        m = hi - b.start + 1
        a = b.alphas[:m]
        nz = np.flatnonzero(a)
        ids.append(b.start + nz)
        cfs.append(a[nz] * b.signs[:m][nz] if use_signs else a[nz])
    if not ids:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.complex128)
    return np.concatenate(ids), np.concatenate(cfs)


def partial_sum(sys: SystemSpec, blocks: Sequence[CoefficientBlock],
                upto: int, use_signs: bool) -> GridFunction:
    """Sum over n <= upto of (delta_n if use_signs else 1) alpha_n phi_n."""
    if upto < 1:
        raise SeriesError("upto must be >= 1")
    idx, cf = gather(blocks, upto, use_signs)
    return synthesize(sys, idx, cf)


def fejer_kernel(sys: SystemSpec, M: int, modulation: int = 0) -> CoefficientBlock:
    """Fejer weights 1 - |j|/(M+1), j = -M..M, as one contiguous block.

    Positive enumeration: indices modulation+1 .. modulation+2M+1, i.e. the
    kernel times e^{i(modulation+M+1)x}. Symmetric enumeration: the centred
    kernel on indices 1..2M+1; a modulated kernel is not contiguous there.
    """
    if sys.kind != TRIG:
        raise SpaceError("Fejer kernels belong to the trigonometric system")
    if M < 1 or modulation < 0:
        raise SpaceError("need M >= 1 and modulation >= 0")
    j = np.arange(-M, M + 1)
    w = 1.0 - np.abs(j) / (M + 1.0)
    if sys.frequencies == "positive":
        start = modulation + 1
        end = modulation + 2 * M + 1
        alphas = w
    else:
        if modulation:
            raise SpaceError("modulated kernels need the positive enumeration")
        start, end = 1, 2 * M + 1
        alphas = w[M + sys.frequency(np.arange(start, end + 1))]
    if end > sys.max_index():
        raise SpaceError("aliasing risk")
    return CoefficientBlock(start, end, alphas)


def walsh_dirichlet(sys: SystemSpec, s: int) -> CoefficientBlock:
    """Indices 1..2^s with unit coefficients: 2^s on [0, 2^-s), 0 elsewhere."""
    if sys.kind != WALSH:
        raise SpaceError("Walsh kernels belong to the Walsh system")
    return CoefficientBlock(1, 1 << s, np.ones(1 << s))
