"""Command-line front end: build, approximate, modify, verify, report.

Exit codes: 0 success, 2 oracle failure, 3 insufficient depth or failed
checks, 64 usage error, 65 data error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

from . import __version__
from .builder import (ASYM, BuildConfig, BuildError, DepthExhausted,
                      InsufficientDepth, SeriesArtifact, approximate_with,
                      build_asym_universal, build_universal, checkpoints,
                      modify_to_universal)
from .corpus import parse_target, step_corpus
from .space import SpaceError, index_from_json, lp_distance
from .systems import SystemSpec
from .uap import Budget
from .verify import full_report, structural_report

EXIT_OK, EXIT_ORACLE, EXIT_DEPTH, EXIT_USAGE, EXIT_DATA = 0, 2, 3, 64, 65


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class RunConfig:
    system: str = "walsh"
    grid_log2: int = 12
    p: float = 0.5
    K: int = 1
    mode: str = "almost"
    seed: int = 0
    frequencies: str = "symmetric"
    targets: Optional[tuple] = None
    max_candidates: int = 5000
    second_target: str = "consistent"
    out_dir: str = "."
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.system not in ("walsh", "trig"):
            raise UsageError("system must be walsh or trig")
        if self.grid_log2 < 4:
            raise UsageError("grid_log2 must be >= 4")
        if not 0.0 < self.p < 1.0:
            raise UsageError("p must lie in (0, 1)")
        if self.K < 1:
            raise UsageError("K must be >= 1")
        if self.mode not in ("almost", "asym"):
            raise UsageError("mode must be almost or asym")
        if self.max_candidates < 1:
            raise UsageError("max_candidates must be >= 1")

    def system_spec(self) -> SystemSpec:
        if self.system == "walsh":
            return SystemSpec.walsh(self.grid_log2)
        return SystemSpec.trig(self.grid_log2, self.frequencies)

    def build_config(self) -> BuildConfig:
        return BuildConfig(seed=self.seed, targets=self.targets,
                           budget=Budget(max_candidates=self.max_candidates),
                           second_target=self.second_target)

    def echo(self) -> dict:
        return {"system": self.system, "grid_log2": self.grid_log2, "p": self.p,
                "K": self.K, "mode": self.mode, "seed": self.seed,
                "frequencies": self.frequencies,
                "targets": None if self.targets is None else [hex(t) for t in self.targets],
                "max_candidates": self.max_candidates,
                "second_target": self.second_target, **self.extra}


def _seed(arg: int) -> int:
    env = os.environ.get("USERIAL_SEED")
    if env is None:
        return arg
    try:
        return int(env)
    except ValueError:
        raise UsageError("USERIAL_SEED must be an integer")


def _path(out_dir: str, name: str) -> str:
    return name if os.path.isabs(name) else os.path.join(out_dir, name)


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _load_artifact(path: str) -> SeriesArtifact:
    try:
        with open(path) as fh:
            return SeriesArtifact.loads(fh.read())
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read artifact {path}: {exc}")


def _header(artifact: SeriesArtifact, echo: dict) -> dict:
    return {"artifact_digest": artifact.digest(), "tool_version": __version__,
            "config": echo}


def _plot(path: str, rows, header: dict) -> None:
    lines = ["# " + json.dumps(header, sort_keys=True)]
    lines += [f"{n} {e!r}" for n, e in rows]
    _write(path, "\n".join(lines) + "\n")


def _write_report(rep, base: str, header: dict) -> None:
    rep.provenance.update(header)
    _write(base + ".csv", rep.to_csv())
    _write(base + ".json", rep.dumps() + "\n")


# --- commands -----------------------------------------------------------------

def cmd_build(cfg: RunConfig, out: str) -> int:
    sys_spec = cfg.system_spec()
    path = _path(cfg.out_dir, out)
    try:
        if cfg.mode == "almost":
            art = build_universal(sys_spec, cfg.K, cfg.p, cfg.build_config())
        else:
            art = build_asym_universal(sys_spec, cfg.K, cfg.build_config())
    except BuildError as exc:
        part = exc.partial
        _write(path + ".partial", part.dumps() + "\n")
        rep = structural_report(part)
        rep.add("oracle step", 0, exc.step, False, exc.step, note=str(exc))
        _write_report(rep, path + ".partial.report", _header(part, cfg.echo()))
        print(f"oracle failure at step {exc.step}: {exc.cause}", file=sys.stderr)
        return EXIT_ORACLE
    _write(path, art.dumps() + "\n")
    rep = structural_report(art)
    _write_report(rep, path + ".report", _header(art, cfg.echo()))
    print(rep.summary())
    return EXIT_OK if rep.overall else EXIT_DEPTH


def cmd_approximate(cfg: RunConfig, artifact: str, target: str, tol: float,
                    m: int, out: str) -> int:
    art = _load_artifact(_path(cfg.out_dir, artifact))
    try:
        f = parse_target(target, art.system.domain, cfg.out_dir)
    except (ValueError, SpaceError, OSError) as exc:
        raise DataError(str(exc))
    header = _header(art, cfg.echo())
    base = _path(cfg.out_dir, out)
    code = EXIT_OK
    try:
        run = approximate_with(art, f, tol, m)
    except InsufficientDepth as exc:
        run, code = exc.run, EXIT_DEPTH
        best = exc.best
    else:
        best = run.achieved
    rows = [] if run is None else [(N, e) for _, N, e in run.checkpoints]
    csv = "step,checkpoint,error\n" + "".join(
        f"{k},{N},{e!r}\n" for k, N, e in (run.checkpoints if run else ()))
    _write(base + ".csv", csv)
    summary = {**header, "target": target, "tol": tol, "achieved": best,
               "pass": code == EXIT_OK,
               "run": None if run is None else run.to_json()}
    _write(base + ".json", _dump(summary))
    _plot(base + ".dat", rows, header)
    print(f"achieved {best!r} against tol {tol!r}")
    return code


def cmd_modify(cfg: RunConfig, artifact: str, g: str, m: int, q_max: int,
               out: str) -> int:
    art = _load_artifact(_path(cfg.out_dir, artifact))
    if art.mode != ASYM or any(st.ghat is None for st in art.steps):
        raise DataError("artifact lacks asym intermediates")
    try:
        gf = parse_target(g, art.system.domain, cfg.out_dir)
    except (ValueError, SpaceError, OSError) as exc:
        raise DataError(str(exc))
    header = _header(art, cfg.echo())
    path = _path(cfg.out_dir, out)
    try:
        mf = modify_to_universal(art, gf, m, q_max)
    except DepthExhausted as exc:
        _write(path + ".partial", _dump({**header, "achieved_q": exc.q - 1,
                                         "chain": list(exc.partial)}))
        print(str(exc), file=sys.stderr)
        return EXIT_DEPTH
    _write(path, _dump({**header, "g": g, "q_max": q_max, **mf.to_json()}))
    print(f"modified with {len(mf.chain)} selections, certified measure "
          f"{mf.certified.measure()!r}")
    return EXIT_OK


def _verify_like(cfg: RunConfig, artifact: str, targets, tol: float, out: str) -> int:
    art = _load_artifact(_path(cfg.out_dir, artifact))
    rep = full_report(art, targets(art), tol) if targets else structural_report(art)
    header = _header(art, cfg.echo())
    base = _path(cfg.out_dir, out)
    _write_report(rep, base, header)
    if art.mode != ASYM and art.steps:
        rows = [(N, lp_distance(art.unsigned_sum(N), art.U, art.metric_p))
                for _, N in checkpoints(art)]
        _plot(base + ".kolmogorov.dat", rows, header)
    print(rep.summary())
    return EXIT_OK if rep.overall else EXIT_DEPTH


def cmd_verify(cfg: RunConfig, artifact: str, out: str) -> int:
    return _verify_like(cfg, artifact, None, 0.5, out)


def cmd_report(cfg: RunConfig, artifact: str, corpus: str, extra_targets,
               tol: float, out: str) -> int:
    def targets(art):
        dom = art.system.domain
        fs = step_corpus(dom, count=10) if corpus == "standard" else []
        try:
            fs += [parse_target(t, dom, cfg.out_dir) for t in extra_targets]
        except (ValueError, SpaceError, OSError) as exc:
            raise DataError(str(exc))
        return fs
    return _verify_like(cfg, artifact, targets, tol, out)


# --- argument parsing -------------------------------------------------------------

def _targets(text: Optional[str]):
    if not text:
        return None
    try:
        return tuple(index_from_json(t) if t.startswith("0x") else int(t)
                     for t in text.split(","))
    except ValueError:
        raise UsageError("targets must be comma-separated dense indices")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="userial", description="Conditionally universal series "
                 "for Walsh and trigonometric systems.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--out-dir", default=".", help="base directory for all paths")
    ap.add_argument("--seed", type=int, default=0, help="overridden by USERIAL_SEED")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    b = sub.add_parser("build", help="build a series artifact")
    b.add_argument("--system", choices=("walsh", "trig"), default="walsh")
    b.add_argument("--mode", choices=("almost", "asym"), default="almost")
    b.add_argument("--k", type=int, required=True)
    b.add_argument("--grid-log2", type=int, default=12)
    b.add_argument("--p", type=float, default=0.5)
    b.add_argument("--frequencies", choices=("symmetric", "positive"), default="symmetric")
    b.add_argument("--targets", help="comma-separated dense indices f_1..f_K")
    b.add_argument("--max-candidates", type=int, default=5000)
    b.add_argument("--second-target", choices=("consistent", "literal"), default="consistent")
    b.add_argument("--out", default="artifact.json")

    a = sub.add_parser("approximate", help="approximate a target with an artifact")
    a.add_argument("--artifact", required=True)
    a.add_argument("--target", required=True,
                   help="zero, step:<v1,...>, sawtooth, dense:<m>, file:<path>")
    a.add_argument("--tol", type=float, default=0.5)
    a.add_argument("--m", type=int, default=1)
    a.add_argument("--out", default="approximation")

    mo = sub.add_parser("modify", help="modify a function into a sign-equivalent of U")
    mo.add_argument("--artifact", required=True)
    mo.add_argument("--g", required=True)
    mo.add_argument("--m", type=int, default=1)
    mo.add_argument("--q-max", type=int, default=1)
    mo.add_argument("--out", default="modified.json")

    v = sub.add_parser("verify", help="run the structural verifier")
    v.add_argument("--artifact", required=True)
    v.add_argument("--out", default="verify")

    r = sub.add_parser("report", help="verifier plus approximation runs")
    r.add_argument("--artifact", required=True)
    r.add_argument("--corpus", choices=("standard", "none"), default="standard")
    r.add_argument("--target", action="append", default=[])
    r.add_argument("--tol", type=float, default=0.5)
    r.add_argument("--out", default="report")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        seed = _seed(args.seed)
        if args.cmd == "build":
            cfg = RunConfig(args.system, args.grid_log2, args.p, args.k, args.mode,
                            seed, args.frequencies, _targets(args.targets),
                            args.max_candidates, args.second_target, args.out_dir)
            return cmd_build(cfg, args.out)
        cfg = RunConfig(seed=seed, out_dir=args.out_dir,
                        extra={"command": args.cmd, "artifact": args.artifact})
        if args.cmd == "approximate":
            if not args.tol > 0 or args.m < 1:
                raise UsageError("need tol > 0 and m >= 1")
            return cmd_approximate(cfg, args.artifact, args.target, args.tol, args.m, args.out)
        if args.cmd == "modify":
            if args.m < 1 or args.q_max < 1:
                raise UsageError("need m >= 1 and q_max >= 1")
            return cmd_modify(cfg, args.artifact, args.g, args.m, args.q_max, args.out)
        if args.cmd == "verify":
            return cmd_verify(cfg, args.artifact, args.out)
        return cmd_report(cfg, args.artifact, args.corpus, args.target, args.tol, args.out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
