"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 malformed or inconsistent input,
3 numerical failure. Numeric results print as ``key,value`` CSV lines with
17 significant digits; curves print a header row then one CSV row per grid
time. ``--emit PATH`` redirects the output into a file and writes a
``PATH.manifest`` JSON sidecar recording the command line, the SHA-256 of
the input file, the seed, the package version, and the wall time, which
together determine the output bit for bit.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shlex
import sys
import time

import numpy as np

from . import __version__
from .classify import (
    RECURRENT,
    GeneratorSpec,
    classify_finite,
    classify_generator,
    kary_tree,
)
from .errors import DendriteError, SolverError
from .measure import SpeedMeasure
from .potential import (
    capacity,
    expected_occupation,
    green_general,
    hitting_probability,
)
from .selftest import run as run_selftest
from .simulate import (
    CENSORED,
    HORIZON,
    KILLED,
    HitSet,
    TimeHorizon,
    WalkConfig,
    build_chain,
    estimate_hitting_time,
    run_walks,
)
from .spectral import (
    auto_mesh_width,
    eigenvalue_bounds,
    mixing_bound,
    mixing_diagnostic_bound,
    principal_eigenvalue,
    spectral_gap,
    tv_distance_curve,
)
from .treefile import generator_comment, parse_tree_file, read_generator, serialize


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def _times(spec: str) -> np.ndarray:
    try:
        if ":" in spec:
            lo, hi, n = spec.split(":")
            return np.linspace(float(lo), float(hi), int(n))
        return np.array([float(s) for s in spec.split(",")])
    except ValueError:
        raise _Usage(f"cannot parse time grid {spec!r}: use lo:hi:n or t1,t2,...") from None


def _point_label(t, p) -> str:
    if p.vertex is not None:
        return p.vertex
    return f"edge{p.edge}@{_g17(p.offset)}"


def _deliver(ns, argv: list[str], text: str, input_path: str | None, seed: int | None, t0: float) -> None:
    emit = getattr(ns, "emit", None)
    if not emit:
        sys.stdout.write(text)
        return
    with open(emit, "w", encoding="utf-8") as fh:
        fh.write(text)
    digest = None
    if input_path is not None:
        with open(input_path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
    manifest = {
        "command": "dendrite " + " ".join(shlex.quote(a) for a in argv),
        "input_sha256": digest,
        "seed": seed,
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - t0, 6),
    }
    with open(emit + ".manifest", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=2) + "\n")


def _cmd_gen(ns, argv, t0):
    g = GeneratorSpec(ns.k, ns.c, ns.first)
    t = kary_tree(g, ns.depth, closed=ns.closed)
    nu = SpeedMeasure.length_measure(t)
    text = serialize(t, nu, comments=(generator_comment(g, ns.depth),))
    _deliver(ns, argv, text, None, None, t0)
    return 0


_COMPUTE_FLAGS = {
    "cap": ("a", "b"),
    "green": ("x", "b", "y"),
    "hit": ("x", "a", "b"),
    "mean-hitting": ("x", "b"),
    "distance": ("a", "b"),
}


def _cmd_compute(ns, argv, t0):
    missing = [f"--{n}" for n in _COMPUTE_FLAGS[ns.what] if getattr(ns, n) is None]
    if missing:
        raise _Usage(f"compute {ns.what} requires {', '.join(missing)}")
    t, nu = parse_tree_file(ns.file)
    if ns.what == "cap":
        val = capacity(t, nu, [t.point(ns.a)], [t.point(ns.b)])
        out = f"capacity,{_g17(val)}\n"
    elif ns.what == "green":
        g = green_general(t, nu, [t.point(ns.b)], [(t.point(ns.x), 1.0)])
        val = g.fn.evaluate(g.mesh.map_point(t.point(ns.y)))
        out = f"green,{_g17(val)}\n"
    elif ns.what == "hit":
        val = hitting_probability(t, t.point(ns.x), t.point(ns.a), t.point(ns.b))
        out = f"hitting_probability,{_g17(val)}\n"
    elif ns.what == "mean-hitting":
        val = expected_occupation(t, nu, t.point(ns.x), t.point(ns.b))
        out = f"mean_hitting_time,{_g17(val)}\n"
    else:
        val = t.distance(t.point(ns.a), t.point(ns.b))
        out = f"distance,{_g17(val)}\n"
    _deliver(ns, argv, out, ns.file, None, t0)
    return 0


def _cmd_spectrum(ns, argv, t0):
    t, nu = parse_tree_file(ns.file)
    h = ns.h if ns.h is not None else auto_mesh_width(t)
    lines = []
    if ns.pin:
        res = principal_eigenvalue(t, nu, [t.point(v) for v in ns.pin], h)
        lines.append(f"eigenvalue,{_g17(res.eigenvalue)}")
    else:
        res = spectral_gap(t, nu, h)
        lines.append(f"spectral_gap,{_g17(res.eigenvalue)}")
    lines.append(f"mesh_h,{_g17(res.mesh_size)}")
    if ns.bounds:
        lo, hi = eigenvalue_bounds(t, nu, t.point(ns.bounds))
        lines.append(f"lower,{_g17(lo)}")
        lines.append(f"upper,{_g17(hi)}")
    _deliver(ns, argv, "\n".join(lines) + "\n", ns.file, None, t0)
    return 0


def _start_law(t, nu, ns) -> SpeedMeasure:
    if ns.uniform:
        total = nu.total_mass()
        return SpeedMeasure(t, nu.edge_density / total, nu.vertex_atom / total)
    return SpeedMeasure.atoms(t, {ns.start: 1.0})


def _cmd_mixing(ns, argv, t0):
    t, nu = parse_tree_file(ns.file)
    nup = _start_law(t, nu, ns)
    times = _times(ns.times)
    tv = tv_distance_curve(t, nu, nup, times, h=ns.h, max_vertices=ns.max_vertices)
    bound = mixing_bound(t, nu, nup, times)
    cols = ["t", "tv", "bound"]
    series = [times, tv, bound]
    if ns.diagnostic:
        diag = mixing_diagnostic_bound(t, nu, nup, times, h=ns.h)
        cols.append("diagnostic")
        series.append(diag)
    lines = [",".join(cols)]
    for i in range(len(times)):
        lines.append(",".join(_g17(s[i]) for s in series))
    _deliver(ns, argv, "\n".join(lines) + "\n", ns.file, None, t0)
    return 0


def _verdict_lines(cls) -> str:
    shown = "recurrent" if cls.verdict == RECURRENT else cls.verdict
    lines = [f"verdict={shown}"]
    for key, val in cls.evidence().items():
        if isinstance(val, bool):
            lines.append(f"{key}={'true' if val else 'false'}")
        elif isinstance(val, float):
            lines.append(f"{key}={'inf' if np.isinf(val) else _g17(val)}")
        else:
            lines.append(f"{key}={val}")
    if cls.note:
        lines.append(f"note={cls.note}")
    return "\n".join(lines) + "\n"


def _cmd_classify(ns, argv, t0):
    if ns.kary:
        try:
            k, c = int(ns.kary[0]), float(ns.kary[1])
        except ValueError:
            raise _Usage(f"--kary takes an integer K and a float C, got {ns.kary}") from None
        cls = classify_generator(GeneratorSpec(k, c))
        _deliver(ns, argv, _verdict_lines(cls), None, None, t0)
        return 0
    t, nu = parse_tree_file(ns.file)
    with open(ns.file, encoding="utf-8") as fh:
        stamped = read_generator(fh.read())
    if stamped is not None:
        cls = classify_generator(stamped[0])
    else:
        cls = classify_finite(t, nu)
    _deliver(ns, argv, _verdict_lines(cls), ns.file, None, t0)
    return 0


def _cmd_simulate(ns, argv, t0):
    t, nu = parse_tree_file(ns.file)
    start = t.point(ns.start)
    if ns.stop:
        stops = [t.point(v) for v in ns.stop.split(",")]
        stop = HitSet(tuple(stops))
        pins = [start, *stops]
    else:
        stop = TimeHorizon(ns.horizon)
        pins = [start]
    cfg = WalkConfig(mesh_h=ns.mesh_h, n_walks=ns.walks, seed=ns.seed, stop=stop,
                     clock=ns.clock, max_steps=ns.max_steps)
    chain = build_chain(t, nu, ns.mesh_h, pins=pins)
    if ns.estimate == "hitting-time":
        target = t.point(ns.target) if ns.target else stops[0] if ns.stop else None
        if target is None:
            raise _Usage("--estimate hitting-time needs --target or --stop")
        est = estimate_hitting_time(chain, cfg, start, target)
        out = (f"mean,{_g17(est.value)}\nstd_error,{_g17(est.std_error)}\n"
               f"n_used,{est.n_used}\nn_killed,{est.n_killed}\n")
        _deliver(ns, argv, out, ns.file, ns.seed, t0)
        return 0
    stats = run_walks(chain, cfg, start)
    lines = ["walk_id,exit,elapsed,killed"]
    mesh = chain.mesh
    mt = chain.tree
    for w in range(stats.n_walks):
        status = stats.statuses[w]
        if status in (CENSORED, HORIZON):
            exit_label = ""
        else:
            exit_label = _point_label(t, mesh.base_point(mt.point(mt.vertices[stats.exit_idx[w]])))
        killed = 1 if status == KILLED else 0
        lines.append(f"{w},{exit_label},{_g17(stats.elapsed[w])},{killed}")
    _deliver(ns, argv, "\n".join(lines) + "\n", ns.file, ns.seed, t0)
    return 0


def _cmd_selftest(ns, argv, t0):
    numbers = None
    if ns.only:
        try:
            numbers = [int(s) for s in ns.only.split(",")]
        except ValueError:
            raise _Usage(f"cannot parse criterion list {ns.only!r}") from None
        if any(not 1 <= n <= 10 for n in numbers):
            raise _Usage("criteria are numbered 1 through 10")
    results = run_selftest(numbers, report=print)
    if all(r.ok for r in results):
        print(f"selftest: {len(results)} criteria passed")
        return 0
    failed = [str(r.number) for r in results if not r.ok]
    print(f"selftest: FAILED criteria {', '.join(failed)}")
    return 3


def build_parser() -> _Parser:
    p = _Parser(prog="dendrite",
                description="Potential theory and simulated diffusion on finite real trees.")
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser, required=True)

    g = sub.add_parser("gen", help="generate a self-similar truncation")
    gsub = g.add_subparsers(dest="shape", parser_class=_Parser, required=True)
    gk = gsub.add_parser("kary", help="k-ary tree with geometric edge lengths")
    gk.add_argument("--k", type=int, required=True)
    gk.add_argument("--c", type=float, required=True)
    gk.add_argument("--depth", type=int, required=True)
    gk.add_argument("--first", type=float, default=1.0)
    gk.add_argument("--closed", action="store_true",
                    help="close the frontier leaves (compact truncation)")
    gk.add_argument("--emit", metavar="PATH")
    gk.set_defaults(func=_cmd_gen)

    c = sub.add_parser("compute", help="exact potential-theoretic quantities")
    c.add_argument("what", choices=["cap", "green", "hit", "mean-hitting", "distance"])
    c.add_argument("--file", required=True)
    c.add_argument("--a")
    c.add_argument("--b")
    c.add_argument("--x")
    c.add_argument("--y")
    c.add_argument("--emit", metavar="PATH")
    c.set_defaults(func=_cmd_compute)

    s = sub.add_parser("spectrum", help="principal eigenvalue or spectral gap")
    s.add_argument("--file", required=True)
    s.add_argument("--pin", action="append", default=[],
                   help="vertex held at zero (repeatable); no pins: spectral gap")
    s.add_argument("--h", type=float, default=None, help="mesh width (default: automatic)")
    s.add_argument("--bounds", metavar="VERTEX",
                   help="also print the closed-form eigenvalue bounds for this pinned vertex")
    s.add_argument("--emit", metavar="PATH")
    s.set_defaults(func=_cmd_spectrum)

    m = sub.add_parser("mixing", help="total-variation decay and its certified bound")
    m.add_argument("--file", required=True)
    grp = m.add_mutually_exclusive_group(required=True)
    grp.add_argument("--start", metavar="VERTEX", help="initial law: unit atom at this vertex")
    grp.add_argument("--uniform", action="store_true", help="initial law: normalized speed measure")
    m.add_argument("--times", required=True, help="lo:hi:n or comma-separated")
    m.add_argument("--h", type=float, default=None)
    m.add_argument("--max-vertices", type=int, default=500)
    m.add_argument("--diagnostic", action="store_true",
                   help="add the sharper spectral-gap column (not certified)")
    m.add_argument("--emit", metavar="PATH")
    m.set_defaults(func=_cmd_mixing)

    k = sub.add_parser("classify", help="recurrence/transience verdict")
    kg = k.add_mutually_exclusive_group(required=True)
    kg.add_argument("--kary", nargs=2, metavar=("K", "C"))
    kg.add_argument("--file")
    k.add_argument("--emit", metavar="PATH")
    k.set_defaults(func=_cmd_classify)

    r = sub.add_parser("simulate", help="Monte Carlo walks of the embedded chain")
    r.add_argument("--file", required=True)
    r.add_argument("--mesh-h", type=float, required=True)
    r.add_argument("--walks", type=int, required=True)
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--start", required=True, metavar="VERTEX")
    rgrp = r.add_mutually_exclusive_group(required=True)
    rgrp.add_argument("--stop", metavar="V1[,V2...]")
    rgrp.add_argument("--horizon", type=float)
    r.add_argument("--clock", choices=["exponential", "jump_count_only"], default="exponential")
    r.add_argument("--max-steps", type=int, default=10**9)
    r.add_argument("--estimate", choices=["hitting-time"], default=None)
    r.add_argument("--target", metavar="VERTEX")
    r.add_argument("--emit", metavar="PATH")
    r.set_defaults(func=_cmd_simulate)

    st = sub.add_parser("selftest", help="run the acceptance battery")
    st.add_argument("--only", metavar="N1[,N2...]", help="run a subset of criteria")
    st.set_defaults(func=_cmd_selftest)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        return ns.func(ns, argv, time.perf_counter())
    except _Usage as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except DendriteError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
