"""Command-line driver: ``hsflow flow | analyze | render | verify``.

Exit codes: 0 on success, 1 when a computation fails (no convergence,
failed checks, analysis errors), 2 for usage or input problems.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("hsflow")

EXIT_OK, EXIT_NUMERIC, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad arguments or unreadable input; maps to exit code 2."""


def _jobs(args) -> int:
    if args.jobs is not None:
        if args.jobs < 1:
            raise InputError("--jobs must be at least 1")
        return args.jobs
    env = os.environ.get("HSFLOW_JOBS")
    if env:
        try:
            val = int(env)
        except ValueError:
            raise InputError(f"HSFLOW_JOBS must be an integer, got {env!r}") from None
        if val < 1:
            raise InputError("HSFLOW_JOBS must be at least 1")
        return val
    return 1


# ----------------------------------------------------------------------------
# commands


def cmd_flow(args) -> int:
    from .envelope import compute_flow, default_t_grid
    from .geometry import Atlas
    from .io import save_flow
    from .potentials import PotentialSpec, make_potential

    if args.n < 2 or args.nt < 1:
        raise InputError("need n >= 2 and nt >= 1")
    try:
        text = Path(args.spec).read_text()
    except OSError as exc:
        raise InputError(f"cannot read potential spec {args.spec}: {exc.strerror}") from exc
    spec = PotentialSpec.from_json(text)
    n = spec.n or args.n
    extent = spec.extent or args.extent
    atlas = Atlas(n, extent)
    if atlas.n != n:
        log.info("grid size %d rounded up to %d so that 0 and infinity are nodes", n, atlas.n)
    phi = make_potential(spec, atlas)
    jobs = _jobs(args)
    print(f"{'t':>8} {'area':>10} {'|area-t|':>10} {'cycles':>6}")

    def show(s):
        print(f"{s.t:8.4f} {s.area:10.6f} {abs(s.area - s.t):10.2e} {s.cycles:6d}", flush=True)

    fam = compute_flow(phi, default_t_grid(args.nt), warm_start=not args.independent, jobs=jobs, progress=show)
    save_flow(fam, args.out, spec.to_json())
    print(f"wrote {args.out} (n={atlas.n}, nt={args.nt})")
    return EXIT_OK


def _load_flow(path):
    from .io import load_flow

    return load_flow(path)


def cmd_analyze(args) -> int:
    from .analysis import analyze_family
    from .io import write_report

    fam = _load_flow(args.flow)
    smax = args.smax
    if smax != "auto":
        try:
            smax = float(smax)
        except ValueError:
            raise InputError(f"--smax must be a number or 'auto', got {smax!r}") from None
        if smax <= 0:
            raise InputError("--smax must be positive")
    if (args.t1 is None) != (args.t2 is None):
        raise InputError("give both --t1 and --t2 or neither")
    if args.t1 is not None and not 0 <= args.t1 <= args.t2 <= 1:
        raise InputError("need 0 <= t1 <= t2 <= 1")
    if args.ns is not None and args.ns < 2:
        raise InputError("--ns must be at least 2")
    times = None
    if args.times:
        try:
            times = [float(x) for x in args.times.split(",")]
        except ValueError:
            raise InputError(f"--times must be comma separated numbers, got {args.times!r}") from None
    _jobs(args)
    res = analyze_family(fam, s_max=smax, ns=args.ns, t1=args.t1, t2=args.t2, disc_times=times)
    doc = write_report(res.report, args.out)
    print(f"window: {doc['window']}")
    for d in doc["discs"]:
        r = d["residual"]
        if r:
            print(f"disc {d['kind']:>17} t={d['t']}: max residual {r.get('max', 0):.2e}, "
                  f"H std {r.get('H_std', 0):.2e} (max deviation {r.get('H_max_dev', 0):.2e})")
        else:
            print(f"disc {d['kind']:>17} t={d['t']}: {d.get('note', '')}")
    hc = doc["H_checks"]
    print(f"H range {hc['range']}, exit-time deviation {hc['exit_time_max_dev']:.2e}")
    if doc.get("no_disc_region"):
        u = doc["no_disc_region"]
        print(f"no-disc region ({u['t1']:.3f}, {u['t2']:.3f}): volume fraction {u['volume_fraction']:.3e}, "
              f"meets s=0: {u['meets_boundary']}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_render(args) -> int:
    from . import render

    fam = _load_flow(args.flow)
    prefix = args.out
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    styles = {"fronts", "hamiltonian", "discs", "profile"} if args.style == "all" else {args.style}
    written = []
    if "fronts" in styles:
        render.render_fronts(fam, f"{prefix}_fronts.ppm", size=args.size)
        written.append(f"{prefix}_fronts.ppm")
    if "hamiltonian" in styles or "discs" in styles:
        from .analysis import analyze_family

        smax = 8.0
        if args.report:
            from .io import read_report

            rep = read_report(args.report)
            smax = rep.get("meta", {}).get("s_max", smax)
        res = analyze_family(fam, s_max=smax, exit_samples=20)
        if "hamiltonian" in styles:
            render.render_hamiltonian(res.H, f"{prefix}_H.ppm", size=args.size)
            written.append(f"{prefix}_H.ppm")
        if "discs" in styles:
            render.render_discs(res.discs, f"{prefix}_discs.ppm", size=args.size)
            written.append(f"{prefix}_discs.ppm")
    if "profile" in styles:
        from .potentials import PotentialSpec, radial_flow_oracle, radial_profile
        from .io import read_grid

        pot = read_grid(args.flow).meta.get("potential")
        oracle = None
        if pot and pot.get("variant") in ("zero", "radial") and not pot.get("perturb_amplitude"):
            prof = radial_profile(PotentialSpec(**pot))
            oracle = lambda t: radial_flow_oracle(prof, t)  # noqa: E731
        elif not args.force_profile:
            raise InputError("CSV profiles are written for radial potentials only (use --force-profile)")
        render.write_profiles(fam, f"{prefix}_profile.csv", oracle)
        render.write_radius_table(fam, f"{prefix}_radius.csv",
                                  (lambda t: oracle(t).radius) if oracle else None)
        written += [f"{prefix}_profile.csv", f"{prefix}_radius.csv"]
    for w in written:
        print(f"wrote {w}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .suites import SUITES

    _jobs(args)
    kwargs = {}
    if args.n is not None:
        kwargs["n"] = args.n
    if args.nt is not None:
        kwargs["nt"] = args.nt
    if args.area_n is not None:
        if args.suite != "dumbbell":
            raise InputError("--area-n applies to the dumbbell suite only")
        kwargs["area_n"] = args.area_n
    checks = SUITES[args.suite](**kwargs)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


# ----------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INPUT)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hsflow", description="Hele-Shaw flow on the sphere, its Legendre-dual HMAE "
                                           "solution and harmonic discs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def jobs(sp):
        sp.add_argument("--jobs", type=int, default=None,
                        help="worker cap (default: HSFLOW_JOBS or 1)")

    f = sub.add_parser("flow", help="compute a flow family and write a grid file")
    f.add_argument("spec", help="potential spec (JSON)")
    f.add_argument("--n", type=int, default=257, help="nodes per chart side (odd; even is rounded up)")
    f.add_argument("--nt", type=int, default=51, help="number of equally spaced times in [0, 1]")
    f.add_argument("--extent", type=float, default=1.5, help="chart half-width")
    f.add_argument("--independent", action="store_true",
                   help="solve times independently (parallel with --jobs) instead of warm-starting")
    f.add_argument("--out", required=True, help="output grid file")
    jobs(f)
    f.set_defaults(func=cmd_flow)

    a = sub.add_parser("analyze", help="Legendre transform, H, topology and discs of a flow")
    a.add_argument("flow", help="flow grid file")
    a.add_argument("--smax", default="8", help="largest s = -log|tau|^2 stored, or 'auto'")
    a.add_argument("--ns", type=int, default=None, help="number of s samples (default: spacing 0.01)")
    a.add_argument("--t1", type=float, default=None, help="lower time of the no-disc region")
    a.add_argument("--t2", type=float, default=None, help="upper time of the no-disc region")
    a.add_argument("--times", default=None, help="comma separated times for Riemann discs")
    a.add_argument("--out", required=True, help="output report (JSON)")
    jobs(a)
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("render", help="PPM pictures and CSV profiles")
    r.add_argument("flow", help="flow grid file")
    r.add_argument("--report", default=None, help="report from 'analyze' (reuses its s range)")
    r.add_argument("--style", choices=["fronts", "hamiltonian", "discs", "profile", "all"], default="fronts")
    r.add_argument("--size", type=int, default=600, help="image side in pixels")
    r.add_argument("--force-profile", action="store_true", help="write CSV profiles for any potential")
    r.add_argument("--out", required=True, help="output prefix")
    r.set_defaults(func=cmd_render)

    v = sub.add_parser("verify", help="run a self-check suite")
    v.add_argument("--suite", choices=["radial", "dumbbell", "duality"], required=True)
    v.add_argument("--n", type=int, default=None, help="override the suite's grid size")
    v.add_argument("--nt", type=int, default=None, help="override the suite's number of times")
    v.add_argument("--area-n", type=int, default=None,
                   help="grid size of the separate area-law flow in the dumbbell suite (default 513)")
    jobs(v)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    from .analysis import AnalysisError
    from .envelope import KahlerError
    from .geometry import ChartError, ConvergenceError
    from .io import GridFormatError
    from .potentials import SpecError

    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, SpecError, GridFormatError, KahlerError) as exc:
        print(f"hsflow: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as exc:
        print(f"hsflow: solver failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AnalysisError as exc:
        print(f"hsflow: analysis failed in stage {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ChartError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"hsflow: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"hsflow: I/O error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
