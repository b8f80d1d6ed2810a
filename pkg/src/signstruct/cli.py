"""Command-line front end: ground | sweep | search | transform | entropy | overlap."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .analysis import (
    PARTITION_KINDS,
    SweepSpec,
    bipartition_masks,
    energy_jumps,
    entanglement_entropy,
    reference_overlap_curves,
    run_sweep,
    sign_curve_minimum,
    solve_ground,
)
from .eigensolver import ConvergenceError, canonicalize_real
from .hamiltonian import (
    conjugate_by_protocol,
    dense_matrix,
    even_odd_transformed,
    heisenberg_terms,
    ir_difference,
    mpr_cz_transformed,
    to_listing,
)
from .io import write_entropy_csv, write_meta, write_overlap_csv, write_search_json, write_states, write_svg, write_sweep_csv
from .lattice import Boundary, build_chain, enumerate_sector
from .protocols import apply_protocol, level_report, named_protocol, sign_average
from .search import (
    CandidateLimitError,
    SearchConfig,
    brute_force_search,
    search_mpr_plus_cz,
    template_search,
)

VERIFY_MAX_SITES = 10
SPECTRUM_TOL = 1e-9
FORMATS = ("csv", "json", "svg")
DEFAULTS = {
    "j1": 1.0,
    "j2": 0.0,
    "j2_grid": "0:2:0.1",
    "seed": 1,
    "threads": 1,
    "out_dir": ".",
    "format": "csv",
    "tol": 1e-9,
    "max_iterations": None,
    "k": 6,
    "boundary": "obc",
    "metric": "sign_avg",
    "mode": "exhaustive",
    "period": 4,
    "top_k": 10,
    "max_candidates": 5 ** 12,
    "cz_max_distance": 1,
    "free_first_site": False,
    "partitions": ["contiguous_half", "abba_sublattice"],
}

# re-checked after config merging, since argparse only validates flags
CHOICES = {
    "boundary": ("obc", "pbc"),
    "metric": ("sign_avg", "neg_frac"),
    "mode": ("exhaustive", "template", "mpr-cz"),
    "period": (1, 2, 4, 8),
}


class UsageError(ValueError):
    pass


def parse_grid(text) -> list:
    """``start:stop:step`` (inclusive) or a comma list."""
    if isinstance(text, (list, tuple)):
        vals = [float(x) for x in text]
    elif ":" in str(text):
        a, b, s = (float(x) for x in str(text).split(":"))
        if s <= 0:
            raise UsageError("grid step must be positive")
        vals = [round(a + i * s, 10) for i in range(int(round((b - a) / s)) + 1)]
    else:
        vals = [float(x) for x in str(text).split(",") if x.strip()]
    if not vals:
        raise UsageError("empty J2 grid")
    return vals


def _formats(args):
    fmts = [f.strip() for f in str(args.format).split(",") if f.strip()]
    bad = set(fmts) - set(FORMATS)
    if bad:
        raise UsageError(f"unknown output format(s) {sorted(bad)}")
    return fmts


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _effective(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["kernel_backend"] = _kernels.BACKEND
    return cfg


def _solver(args) -> dict:
    return {"tol": args.tol, "max_iterations": args.max_iterations, "threads": args.threads}


def _n_list(args):
    return args.n if isinstance(args.n, list) else [args.n]


def _one_n(args):
    ns = _n_list(args)
    if len(ns) != 1:
        raise UsageError("this command takes a single -n")
    return ns[0]


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_ground(args) -> int:
    n = _one_n(args)
    model = build_chain(n, args.boundary, args.j1, args.j2)
    n_up = n // 2 if args.n_up is None else args.n_up
    basis = enumerate_sector(n, n_up)
    from .eigensolver import lowest_eigenpairs

    res = lowest_eigenpairs(heisenberg_terms(model), basis, k=min(args.k, basis.dim), seed=args.seed, **_solver(args))
    print(f"n={n} boundary={model.boundary.short} j1={model.j1:g} j2={model.j2:g} n_up={n_up} dim={basis.dim}")
    for g in res.degeneracy_groups:
        vals = " ".join(f"{res.eigenvalues[i]:.12f}" for i in g)
        print(f"level x{len(g)}: {vals}")
    ground = res.degeneracy_groups[0]
    if len(ground) == len(res) and len(res) < basis.dim:
        print("note: ground level may extend beyond k; increase -k")
    v, _ = canonicalize_real(res.eigenvectors[:, 0])
    raw = sign_average(v)
    print(f"raw sign_avg {round(raw.sign_average, 10) + 0.0:.10f} neg_frac {raw.negative_fraction:.6f}")
    for name in args.protocol or []:
        _, rep = level_report(named_protocol(name, n), basis, res.eigenvectors[:, ground], seed=args.seed)
        print(f"{name} sign_avg {rep.sign_average:.10f} neg_frac {rep.negative_fraction:.6f}")
    out = _out_dir(args) / f"ground_n{n}_{model.boundary.short}_j2_{model.j2:g}.sgnc"
    write_states(out, res.eigenvectors[:, ground], n, n_up)
    write_meta(out, {"command": "ground", "config": _effective(args),
                     "eigenvalues": res.eigenvalues.tolist(), "residuals": res.residual_norms.tolist()})
    print(f"wrote {out}")
    return 0


def cmd_sweep(args) -> int:
    grid = parse_grid(args.j2_grid)
    spec = SweepSpec(n_sites=_n_list(args), boundary=args.boundary, j2_grid=grid,
                     protocols=args.protocol or ["mpr"], j1=args.j1, n_up=args.n_up, seed=args.seed,
                     threads=args.threads, solver={"tol": args.tol, "max_iterations": args.max_iterations})
    table = run_sweep(spec)
    fmts = _formats(args)
    out = _out_dir(args)
    failures = [r for r in table.rows if not r.ok]
    minima, jumps = {}, {}
    for n in spec.n_sites:
        for p in spec.protocols:
            xs, ys = table.series(n, str(p))
            if xs.size >= 3 and np.all(np.isfinite(ys)):
                minima[f"{n}/{p}"] = sign_curve_minimum(xs, ys)
        e = [r.energy for r in table.select(n=n, protocol=str(spec.protocols[0]))]
        if len(e) >= 4:
            jumps[n] = [grid[i] for i in energy_jumps(grid, e)]
    meta = {"command": "sweep", "config": _effective(args), "metric_convention": "sign average of the "
            "positivized vector; degenerate levels use the in-level vector with maximal sign",
            "failures": [{"n": r.n, "j2": r.j2, "protocol": r.protocol, "error": r.error} for r in failures],
            "curve_minima": minima, "energy_jumps": jumps}
    path = out / "sweep.csv"
    write_sweep_csv(path, table, meta)
    print(f"wrote {path} ({len(table.rows)} rows, {len(failures)} failed)")
    if "svg" in fmts:
        metric = args.metric
        for p in spec.protocols:
            series = {}
            for n in spec.n_sites:
                rows = table.select(n=n, protocol=str(p))
                series[f"N={n}"] = ([r.j2 for r in rows], [getattr(r, metric) for r in rows])
            svg = out / f"sweep_{p}_{metric}.svg"
            write_svg(svg, series, ylabel=metric, title=f"{p}, {Boundary.parse(spec.boundary).short}")
            print(f"wrote {svg}")
    for r in failures:
        print(f"failed: n={r.n} j2={r.j2:g} {r.protocol}: {r.error}", file=sys.stderr)
    return 1 if failures else 0


def cmd_search(args) -> int:
    n = _one_n(args)
    config = SearchConfig(top_k=args.top_k, seed=args.seed, threads=args.threads,
                          shard_start=args.shard_start, shard_end=args.shard_end,
                          max_candidates=args.max_candidates, cz_max_distance=args.cz_max_distance or None,
                          fix_first_site=not args.free_first_site)
    _, basis, level = solve_ground(n, args.boundary, args.j1, args.j2, args.n_up, seed=args.seed,
                                   tol=args.tol, max_iterations=args.max_iterations)
    state = level.vectors if level.degeneracy > 1 else level.vectors[:, 0]
    if args.mode == "exhaustive":
        result = brute_force_search(state, basis, config)
    elif args.mode == "template":
        result = template_search(state, basis, args.period, config)
    else:
        result = search_mpr_plus_cz(state, basis, config, boundary=args.boundary)
    for rank, (p, rep) in enumerate(result.ranked, 1):
        print(f"{rank:2d} sign_avg {rep.sign_average:.10f} gates {p.n_gates:2d} "
              f"angles {list(p.angles_half_pi)} cz {list(map(list, p.cz_pairs))}")
    print(f"evaluated {result.n_evaluated}, skipped {result.n_skipped_nonreal} non-real, "
          f"{result.wall_time:.2f}s, energy {level.energy:.12f} (x{level.degeneracy})")
    path = _out_dir(args) / f"search_{args.mode}_n{n}_j2_{args.j2:g}.json"
    write_search_json(path, result, _effective(args))
    print(f"wrote {path}")
    return 0


def _transformed(name, model):
    """Closed-form transformed Hamiltonian and the generic conjugation for comparison."""
    n = model.n_sites
    H = heisenberg_terms(model)
    prot = named_protocol(name, n)
    generic = conjugate_by_protocol(H, prot)
    if name == "mpr-cz":
        return mpr_cz_transformed(model), generic, prot
    if name == "odd-even" and model.boundary is Boundary.OPEN:
        return even_odd_transformed(model), generic, prot
    return generic, generic, prot


def cmd_transform(args) -> int:
    n = _one_n(args)
    model = build_chain(n, args.boundary, args.j1, args.j2)
    name = (args.protocol or ["odd-even"])[0]
    Ht, generic, _ = _transformed(name, model)
    listing = to_listing(Ht)
    if args.output:
        Path(args.output).write_text(listing)
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(listing)
    status = 0
    if args.verify:
        if n > VERIFY_MAX_SITES:
            raise UsageError(f"--verify is limited to n <= {VERIFY_MAX_SITES}")
        diff = ir_difference(Ht, generic, 1e-12)
        dev = 0.0
        for n_up in range(n + 1):
            basis = enumerate_sector(n, n_up)
            a = np.linalg.eigvalsh(dense_matrix(heisenberg_terms(model), basis))
            b = np.linalg.eigvalsh(dense_matrix(Ht, basis))
            dev = max(dev, float(np.max(np.abs(a - b))))
        ok = dev < SPECTRUM_TOL and not diff
        print(f"verify: max spectral deviation {dev:.3e}; closed form vs conjugation "
              f"{'identical' if not diff else f'differs in {len(diff)} terms'}", file=sys.stderr)
        status = 0 if ok else 1
    return status


def cmd_entropy(args) -> int:
    n = _one_n(args)
    grid = parse_grid(args.j2_grid)
    kinds = args.protocol or ["mpr-cz"]
    rows = []
    degenerate = []
    for j2 in grid:
        _, basis, level = solve_ground(n, args.boundary, args.j1, j2, args.n_up, seed=args.seed,
                                       tol=args.tol, max_iterations=args.max_iterations)
        if level.degeneracy > 1:
            degenerate.append(j2)
        v, _ = canonicalize_real(level.vectors[:, 0])
        states = {"raw": v}
        for name in kinds:
            states[name] = apply_protocol(named_protocol(name, n), basis, v)
        for part in args.partitions:
            mask = bipartition_masks(n, part)
            for kind, psi in states.items():
                rows.append((n, Boundary.parse(args.boundary).short, j2, part, kind,
                             entanglement_entropy(psi, basis, mask)))
    path = _out_dir(args) / f"entropy_n{n}_{Boundary.parse(args.boundary).short}.csv"
    write_entropy_csv(path, rows, {"command": "entropy", "config": _effective(args), "units": "bits",
                                   "degenerate_points_first_vector_used": degenerate})
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


def cmd_overlap(args) -> int:
    n = _one_n(args)
    grid = parse_grid(args.j2_grid)
    rows = reference_overlap_curves(n, args.boundary, grid, j1=args.j1, seed=args.seed,
                                    tol=args.tol, max_iterations=args.max_iterations)
    path = _out_dir(args) / f"overlap_n{n}_{Boundary.parse(args.boundary).short}.csv"
    write_overlap_csv(path, rows, {"command": "overlap", "config": _effective(args),
                                   "convention": "|<a|b>| (not squared); degenerate levels use the largest "
                                   "overlap between unit vectors of the two levels"})
    print(f"wrote {path} ({len(rows)} rows)")
    if "svg" in _formats(args):
        series = {}
        for ref in ("i", "ii", "iii"):
            pts = [(r[2], r[4]) for r in rows if r[3] == ref]
            series[f"({ref})"] = ([p[0] for p in pts], [p[1] for p in pts])
        write_svg(path.with_suffix(".svg"), series, ylabel="overlap")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="signstruct", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-n", type=int, nargs="+", required=False, help="number of sites")
    common.add_argument("-b", "--boundary", choices=("obc", "pbc"))
    common.add_argument("--j1", type=float)
    common.add_argument("--j2", type=float)
    common.add_argument("--j2-grid", dest="j2_grid", help="start:stop:step or comma list")
    common.add_argument("--protocol", action="append",
                        help="mpr, odd-even, torlai, mpr-cz, identity or file:<path> (repeatable)")
    common.add_argument("--n-up", dest="n_up", type=int, help="number of up spins (default n/2)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=_positive_int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--format", help="comma list from csv,json,svg")
    common.add_argument("--tol", type=float)
    common.add_argument("--max-iterations", dest="max_iterations", type=_positive_int)
    common.add_argument("--config", help="JSON file with default values for any flag")

    p = sub.add_parser("ground", parents=[common], help="lowest eigenpairs and state file")
    p.add_argument("-k", type=_positive_int)
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("sweep", parents=[common], help="sign metrics over a J2 grid")
    p.add_argument("--metric", choices=("sign_avg", "neg_frac"), help="metric for SVG")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("search", parents=[common], help="protocol search")
    p.add_argument("--mode", choices=("exhaustive", "template", "mpr-cz"))
    p.add_argument("--period", type=int, choices=(1, 2, 4, 8))
    p.add_argument("--top-k", dest="top_k", type=_positive_int)
    p.add_argument("--shard-start", dest="shard_start", type=int)
    p.add_argument("--shard-end", dest="shard_end", type=int)
    p.add_argument("--max-candidates", dest="max_candidates", type=_positive_int)
    p.add_argument("--cz-max-distance", dest="cz_max_distance", type=int, help="0 means no limit")
    p.add_argument("--free-first-site", dest="free_first_site", action="store_true", default=None,
                   help="also vary the angle on site 0")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("transform", parents=[common], help="transformed Hamiltonian listing")
    p.add_argument("--verify", action="store_true", help="check spectra against the original (n <= 10)")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("entropy", parents=[common], help="entanglement entropy over a J2 grid")
    p.add_argument("--partitions", nargs="+", choices=PARTITION_KINDS)
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("overlap", parents=[common], help="overlaps with reference ground states")
    p.set_defaults(func=cmd_overlap)
    return parser


def parse_args(argv=None):
    """Flags override the --config file, which overrides built-in defaults."""
    parser = build_parser()
    args = parser.parse_args(argv)
    config = {}
    if args.config:
        config = json.loads(Path(args.config).read_text())
        if not isinstance(config, dict):
            parser.error("--config must hold a JSON object")
        unknown = set(config) - set(vars(args))
        if unknown:
            parser.error(f"unknown config keys {sorted(unknown)}")
    for key, default in DEFAULTS.items():
        if getattr(args, key, None) is None and key in vars(args):
            value = config.get(key, default)
            setattr(args, key, list(value) if isinstance(value, list) else value)
    for key, allowed in CHOICES.items():
        if key in vars(args) and getattr(args, key) not in allowed:
            parser.error(f"{key} must be one of {list(allowed)}, got {getattr(args, key)!r}")
    for key, value in config.items():
        if key not in DEFAULTS and getattr(args, key, None) is None:
            setattr(args, key, value)
    if args.n is None:
        parser.error("-n is required (flag or config)")
    if isinstance(args.protocol, str):
        args.protocol = [args.protocol]
    for key in ("tol", "j1"):
        if getattr(args, key) is not None and getattr(args, key) < 0:
            parser.error(f"--{key} must be non-negative")
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CandidateLimitError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        res = exc.residuals
        detail = "" if res is None else f" (max residual {np.max(res):.3e})"
        print(f"solver failure: {exc}{detail}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
