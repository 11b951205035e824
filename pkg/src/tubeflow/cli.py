"""Command-line front end.

Exit codes: 0 success, 2 bad input, 3 numerical pipeline failure,
4 embedding oracle failure.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import OracleFailure, PipelineError, SpecError, TubeflowError
from .families import load_spec
from .flow import (NormalField, StepRule, gradient_descent_flow, linear_normal_flow, path_oracle,
                   unit_normal_field)
from .normal_bundle import FrameField
from .penalty import (ConstantPenalty, DistancePenalty, PhaseShift, PinnedCoordinate, VolumePenalty,
                      Warp, l2_gradient, load_cloud, normality_defect, reparametrization_invariance)
from .qift import ImplicitProblem, TubeAnalysis, qift_constants, qift_solve

EXIT_OK, EXIT_SPEC, EXIT_PIPELINE, EXIT_ORACLE = 0, 2, 3, 4


def _grid(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("grid counts must be positive")
    return vals


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser():
    p = argparse.ArgumentParser(prog="tubeflow", description="Safe normal-flow times and penalty-gradient checks for parametrized submanifolds.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, spec=True):
        if spec:
            sp.add_argument("--spec", required=True, type=Path, help="manifold spec JSON")
            sp.add_argument("--grid", type=_grid, help="grid override, e.g. 128,64")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("analyze", help="curvature bound K, safe radius delta and t*")
    common(a)
    a.add_argument("--normal-dirs", type=_positive_int, default=64)
    a.add_argument("--fiber-radii", type=_positive_int, default=8)
    a.add_argument("--no-refine", action="store_true", help="grid extrema only")
    a.add_argument("--export-frames", action="store_true", help="also write frames.csv")

    f = sub.add_parser("flow", help="linear normal flow or penalty gradient descent")
    common(f)
    f.add_argument("--field", default=None, help="inward, outward or a CSV of field vectors")
    f.add_argument("--t", type=float, default=None, help="flow time for a linear flow")
    f.add_argument("--penalty", choices=["volume", "distance", "pinned", "zero"], default=None)
    f.add_argument("--cloud", type=Path)
    f.add_argument("--steps", type=_positive_int, default=50)
    f.add_argument("--step-rule", default="tstar_capped:0.5")
    f.add_argument("--normal-dirs", type=_positive_int, default=64)
    f.add_argument("--fiber-radii", type=_positive_int, default=8)
    f.add_argument("--separation-ratio", type=float, default=0.1)
    f.add_argument("--export-frames", action="store_true", help="also write frames.csv")

    c = sub.add_parser("check-normality", help="gradient normality defect and reparametrization gaps")
    common(c)
    c.add_argument("--penalty", choices=["volume", "distance", "pinned", "zero"], default="volume")
    c.add_argument("--cloud", type=Path)
    c.add_argument("--warp", type=float, default=0.5, help="warp amplitude, |a| < 1")

    q = sub.add_parser("qift", help="quantitative implicit function theorem on a scalar problem")
    common(q, spec=False)
    q.add_argument("--problem", choices=["quadratic", "linear", "poly"], default="quadratic")
    q.add_argument("--coeffs", type=_floats, help="poly: c0,c1,... for F = sum c_i x^i - lam")
    q.add_argument("--base", type=_floats, default=None, help="x0,lam0")
    q.add_argument("--lam", type=_floats, default=[], help="comma-separated parameter values")
    q.add_argument("--density", type=_positive_int, default=9)
    return p


def _penalty(name, cloud_path, manifold):
    if name == "volume":
        return VolumePenalty()
    if name == "distance":
        if cloud_path is None:
            raise SpecError("the distance penalty needs --cloud")
        return DistancePenalty(load_cloud(cloud_path, manifold.N))
    if name == "pinned":
        return PinnedCoordinate()
    return ConstantPenalty(0.0)


def _load(args):
    return load_spec(args.spec, grid=args.grid)


def _out(args, default):
    return args.out if args.out is not None else Path(default)


def _frames(out, manifold):
    ff = FrameField(manifold)
    c = ff.codim
    header = io.param_names(manifold.k) + [f"w{j}_{i}" for i in range(manifold.N) for j in range(c)]
    io.write_csv(out / "frames.csv", header, ff.to_rows())
    return ff


def cmd_analyze(args):
    m = _load(args)
    out = _out(args, "tubeflow-analyze")
    ff = _frames(out, m) if args.export_frames else None
    an = TubeAnalysis(m, ff, n_dirs=args.normal_dirs, n_radii=args.fiber_radii,
                      refine=not args.no_refine)
    tc = an.safe_flow_time()
    pp = tc.per_point
    header = io.param_names(m.k) + [f"r{i}" for i in range(m.N - m.k)] + [
        "delta0", "delta1", "delta3", "delta_point", "det_DE"]
    rows = np.column_stack([pp["u"], pp["r"], pp["delta0"], pp["delta1"], pp["delta3"],
                            pp["delta_point"], pp["det_DE"]])
    io.write_csv(out / "per_point.csv", header, rows)
    report = {
        "command": "analyze", "manifold": m.describe(), "grid": list(m.grid),
        "K": tc.K, "K_inv": tc.K_inv, "delta": tc.delta, "epsilon": tc.epsilon, "t_star": tc.t_star,
        "tube_radius": tc.tube_radius, "argmin_u": tc.argmin_u, "G": tc.G, "Gp": tc.Gp,
        "normal_dirs": args.normal_dirs, "fiber_radii": args.fiber_radii, "refined": not args.no_refine,
        "seed": args.seed, "per_point": "per_point.csv",
    }
    io.write_json(out / "report.json", report)
    print(f"K={io.fmt_float(tc.K)} delta={io.fmt_float(tc.delta)} epsilon={io.fmt_float(tc.epsilon)} "
          f"t_star={io.fmt_float(tc.t_star)} grid={'x'.join(map(str, m.grid))}")
    return EXIT_OK


def _write_trace(out, manifold, times, snapshots, verdicts, penalties=None, extra=None):
    U = manifold.flat_params()
    header = io.param_names(manifold.k) + io.ambient_names(manifold.N)
    files = []
    for i, X in enumerate(snapshots):
        name = f"snapshot_{i:04d}.csv"
        io.write_csv(out / name, header, np.column_stack([U, np.asarray(X).reshape(len(U), -1)]))
        files.append(name)
    manifest = {"command": "flow", "manifold": manifold.describe(), "grid": list(manifold.grid),
                "t": list(times), "snapshots": files, "verdicts": [v.as_dict() for v in verdicts]}
    if penalties is not None:
        manifest["penalty"] = list(penalties)
    manifest.update(extra or {})
    io.write_json(out / "manifest.json", manifest)


def _field(args, m):
    spec = args.field or "inward"
    if spec in ("inward", "outward"):
        return unit_normal_field(m, spec)
    try:
        data = np.loadtxt(spec, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise SpecError(f"cannot read field CSV {spec}: {exc}") from exc
    V = data[:, -m.N:].reshape(m.grid + (m.N,)) if data.shape[0] == m.n_points else None
    if V is None:
        from .errors import FieldGridMismatch

        raise FieldGridMismatch(f"field CSV has {data.shape[0]} rows, grid has {m.n_points} nodes")
    return NormalField(V).validate(m)


def cmd_flow(args):
    m = _load(args)
    out = _out(args, "tubeflow-flow")
    if args.penalty is None and args.t is None:
        raise SpecError("flow needs either --t (linear flow) or --penalty (gradient descent)")
    if args.export_frames:
        _frames(out, m)
    if args.penalty is None:
        if args.t < 0:
            raise SpecError("--t must be nonnegative")
        V = _field(args, m)
        snap = linear_normal_flow(m, V, args.t)
        verdict = path_oracle(m, V, args.t, args.separation_ratio)
        _write_trace(out, m, [0.0, args.t], [m.samples(), snap.samples()],
                     [path_oracle(m, V, 0.0), verdict], extra={"field": args.field or "inward"})
        if not verdict:
            print(f"oracle failure at t={io.fmt_float(args.t)}: {verdict.witness}", file=sys.stderr)
            return EXIT_ORACLE
        print(f"t={io.fmt_float(args.t)} steps=1 verdict=pass")
        return EXIT_OK
    pen = _penalty(args.penalty, args.cloud, m)
    rule = StepRule.parse(args.step_rule)
    tube_kw = {"n_dirs": args.normal_dirs, "n_radii": args.fiber_radii}
    try:
        tr = gradient_descent_flow(m, pen, args.steps, rule, separation_ratio=args.separation_ratio,
                                   tube_kw=tube_kw)
        code = EXIT_OK
    except OracleFailure as exc:
        tr = exc.trace
        print(f"oracle failure at step {exc.step}: {exc.witness}", file=sys.stderr)
        code = EXIT_ORACLE
    _write_trace(out, m, tr.times, tr.snapshots, tr.verdicts, tr.penalty_values,
                 extra={"penalty_spec": pen.describe(), "step_rule": args.step_rule,
                        "step_sizes": tr.step_sizes, "stop_reason": tr.stop_reason,
                        "t_star": [{"step": s, "t_star": t} for s, t in tr.t_star]})
    verdict = "pass" if all(tr.verdicts) else "fail"
    print(f"final_penalty={io.fmt_float(tr.penalty_values[-1])} steps={tr.steps} verdict={verdict}")
    return code


def cmd_check_normality(args):
    m = _load(args)
    pen = _penalty(args.penalty, args.cloud, m)
    field = l2_gradient(pen, m)
    defect = normality_defect(field)
    gaps = {}
    periodic_axes = np.flatnonzero(m.periodic)
    if len(periodic_axes):
        shift = np.zeros(m.k)
        shift[periodic_axes[0]] = 0.5 * m.spacing[periodic_axes[0]]
        gaps["phase_shift"] = reparametrization_invariance(pen, m, PhaseShift(shift))
    gaps["warp"] = reparametrization_invariance(pen, m, Warp(args.warp, axis=0))
    report = {"command": "check-normality", "manifold": m.describe(), "grid": list(m.grid),
              "penalty": pen.describe(), "value": pen(m), "normality_defect": defect,
              "invariance_gaps": gaps, "grid_spacing": m.spacing, "seed": args.seed}
    if isinstance(pen, DistancePenalty):
        res = pen.evaluate(m)
        report["ties"] = res.tie_points
    out = args.out
    if out is not None:
        io.write_json(out / "normality.json", report)
        header = io.param_names(m.k) + io.ambient_names(m.N, "Z") + ["tangential_norm", "normal_norm"]
        io.write_csv(out / "gradient.csv", header, field.to_rows(m))
    gap_txt = " ".join(f"{k}_gap={io.fmt_float(v)}" for k, v in gaps.items())
    ties = f" ties={len(report['ties'])}" if "ties" in report else ""
    print(f"normality_defect={io.fmt_float(defect)} {gap_txt}{ties}")
    return EXIT_OK


def _scalar_problem(args):
    kind = args.problem
    if kind == "quadratic":
        coeffs = [0.0, 0.0, 1.0]
        base = args.base or [1.0, 1.0]
    elif kind == "linear":
        coeffs = [0.0, 1.0]
        base = args.base or [0.0, 0.0]
    else:
        if not args.coeffs:
            raise SpecError("--problem poly needs --coeffs")
        coeffs = args.coeffs
        if args.base is None:
            raise SpecError("--problem poly needs --base x0,lam0")
        base = args.base
    if len(base) != 2:
        raise SpecError("--base takes exactly x0,lam0")
    c = np.asarray(coeffs, dtype=float)
    dc = np.polynomial.polynomial.polyder(c) if len(c) > 1 else np.zeros(1)

    def F(x, lam):
        x = np.asarray(x, dtype=float)
        return np.polynomial.polynomial.polyval(x, c) - lam

    def dFx(x, lam):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), dc)[..., None]

    def dFl(x, lam):
        return -np.ones(np.shape(lam) + (1,))

    return ImplicitProblem(F, [base[0]], [base[1]], dF_x=dFx, dF_lam=dFl), coeffs, base


def cmd_qift(args):
    prob, coeffs, base = _scalar_problem(args)
    const = qift_constants(prob, density=args.density, seed=args.seed)
    print(f"delta={io.fmt_float(const.delta)} B_delta={io.fmt_float(const.B_delta)} "
          f"M={io.fmt_float(const.M_norm)} delta1={io.fmt_float(const.delta1)}")
    roots = []
    for lam in args.lam:
        x = qift_solve(prob, const, [lam])
        res = float(np.abs(prob.F(x, [lam])).max())
        roots.append({"lambda": lam, "x": float(x[0]), "residual": res})
        print(f"lambda={io.fmt_float(lam)} x={io.fmt_float(x[0])} residual={io.fmt_float(res)}")
    if args.out is not None:
        io.write_json(args.out / "qift.json", {
            "command": "qift", "problem": args.problem, "coeffs": coeffs, "base": base, "grid": None,
            "delta": const.delta, "B_delta": const.B_delta, "M": const.M_norm, "delta1": const.delta1,
            "sup_value": const.sup_value, "density": args.density, "seed": args.seed, "roots": roots})
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "flow": cmd_flow, "check-normality": cmd_check_normality,
            "qift": cmd_qift}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except OracleFailure as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except TubeflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
