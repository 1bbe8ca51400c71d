"""Fixed target corpora and the CLI target-spec presets."""
from __future__ import annotations

import json

import numpy as np

from .space import Domain, GridFunction, SpaceError, enumerate_dense, index_from_json

CORPUS_SEED = 20240
CORPUS_VALUES = (1.0, -1.0, 0.5, -0.5, 0.5j, -0.5j)


def step_corpus(domain: Domain, count: int = 20, max_resolution: int = 5,
                seed: int = CORPUS_SEED) -> list:
    """Dyadic step functions with 2^s pieces, s <= max_resolution.

    Values are drawn from {+-1, +-1/2, +-i/2}; the cell pattern is fixed by
    the seed, so the Walsh and trig corpora share the same pieces.
    """
    if domain.log2_cells < max_resolution:
        raise SpaceError("grid too coarse")
    rng = np.random.default_rng(seed)
    out = []
    for j in range(count):
        s = j % (max_resolution + 1)
        vals = rng.choice(np.array(CORPUS_VALUES), size=1 << s)
        out.append(GridFunction(domain, np.repeat(vals, domain.cells >> s)))
    return out


def step_levels(domain: Domain, levels) -> GridFunction:
    """Equal-width pieces taking the given values from left to right."""
    levels = [complex(v) for v in levels]
    n = len(levels)
    if n == 0 or n & (n - 1) or n > domain.cells:
        raise SpaceError("step levels need a power-of-two count within the grid")
    return GridFunction(domain, np.repeat(np.array(levels), domain.cells // n))


def sawtooth(domain: Domain) -> GridFunction:
    x = domain.midpoints()
    return GridFunction(domain, (x - domain.lower) / domain.length - 0.5)


def parse_target(spec: str, domain: Domain, base_dir: str = ".") -> GridFunction:
    """Target presets: zero, step:<v1,v2,...>, sawtooth, dense:<m>, file:<path>."""
    kind, _, arg = spec.partition(":")
    if kind == "zero" and not arg:
        return GridFunction.zeros(domain)
    if kind == "sawtooth" and not arg:
        return sawtooth(domain)
    if kind == "step" and arg:
        return step_levels(domain, [complex(v.replace("i", "j")) for v in arg.split(",")])
    if kind == "dense" and arg:
        m = int(arg, 0) if not arg.startswith("0x") else index_from_json(arg)
        return enumerate_dense(m, domain)
    if kind == "file" and arg:
        import os
        path = arg if os.path.isabs(arg) else os.path.join(base_dir, arg)
        with open(path) as fh:
            f = GridFunction.from_json(json.load(fh))
        if f.domain != domain:
            raise SpaceError("incompatible domains")
        return f
    raise ValueError(f"unknown target spec {spec!r}")
