"""Command-line pipeline: certify -> compose -> simulate -> verify.

Usage::

    smallgain certify|compose|simulate|verify|run SPEC [--out DIR] [--mode literal|symmetric]
              [--dt X] [--T X] [--grid N] [--s-l X] [--s-max X] [--c-grid a,b,...]
              [--rho3 F] [--r31 F] [--backend cython|python] [--scenario NAME]

``SPEC`` is a JSON path or the name of a bundled scenario.  Outputs go to
``--out`` or to ``$SMALLGAIN_OUT/<spec name>`` (``./smallgain_out`` when the
variable is unset).  Exit status is 0 iff every requested verification passes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from smallgain import calculus as cc
from smallgain import sim
from smallgain.certifier import InfeasibleError, SmallGainProblem, certify
from smallgain.composer import CertificateError, assemble_certificate
from smallgain.grammar import parse_function
from smallgain.problem import ProblemSpec, SpecError, bundled_names, parse_spec

STAGES = {
    "certify": ("certify",),
    "compose": ("certify", "compose"),
    "simulate": ("simulate",),
    "verify": ("certify", "compose", "simulate", "verify"),
    "run": ("certify", "compose", "simulate", "verify"),
}


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _coef_text(fn) -> str:
    k = fn.linear_coefficient()
    return f"{k!r}*s" if k is not None else f"nonlinear ({float(fn(1.0)):.6g} at s = 1)"


@dataclass
class PipelineResult:
    status: int = 0
    witness: object = None
    infeasible: object = None
    certificate: object = None
    records: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)    # scenario -> list of reports
    lines: list = field(default_factory=list)


def run_pipeline(spec: ProblemSpec, stages, out: Path, backend: str | None = None,
                 dt: float | None = None, T: float | None = None,
                 scenario: str | None = None) -> PipelineResult:
    """Run the requested stages and write their artifacts into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    res = PipelineResult()
    k = spec.knobs
    c1, c2 = spec.contracts
    res.lines.append(f"spec: {spec.name}")
    res.lines.append(f"mode: {k.mode.value}")
    scenarios = [s for s in spec.scenarios if scenario is None or s.name == scenario]
    if scenario is not None and not scenarios:
        raise SpecError([("--scenario", f"no scenario named {scenario!r}")])
    scenarios = [replace(s, dt=dt if dt is not None else s.dt, T=T if T is not None else s.T)
                 for s in scenarios]

    if "certify" in stages:
        problem = SmallGainProblem(c1.gamma_y, c2.gamma_y, k.s_l, k.s_max, k.grid)
        try:
            w = certify(problem, k.c_grid)
        except InfeasibleError as exc:
            rep = exc.report
            res.infeasible = rep
            res.status = 1
            (out / "margin.csv").write_text(rep.margin_csv(), encoding="utf-8")
            _dump(out / "witness.json", {"feasible": False, "margin": rep.margin,
                                         "worst_point": rep.worst_point,
                                         "worst_order": rep.worst_order,
                                         "grid_size": rep.grid_size, "s_l": k.s_l})
            res.lines.append(f"small-gain: INFEASIBLE, worst margin {rep.margin:.6g} "
                             f"at s = {rep.worst_point:.6g} ({rep.worst_order} loop)")
        else:
            res.witness = w
            (out / "margin.csv").write_text(w.report.margin_csv(), encoding="utf-8")
            (out / "witness.json").write_text(w.to_json(), encoding="utf-8")
            res.lines.append(f"small-gain: feasible with rho1 = {_coef_text(w.rho1)}, "
                             f"rho2 = {_coef_text(w.rho2)}, relative margin {w.score:.6g}, "
                             f"worst s = {w.report.worst_point:.6g}")
            res.lines.append(f"d3: {w.d3!r}")

    if "compose" in stages and res.witness is not None:
        rho3 = parse_function(k.rho3, k.s_max)
        r31 = parse_function(k.r31, k.s_max)
        pts = [s.x0_norm for s in spec.scenarios]
        try:
            cert = assemble_certificate(c1, c2, res.witness, rho3=rho3, r31=r31, mode=k.mode,
                                        s_points=pts)
        except (CertificateError, cc.CalculusError) as exc:
            res.status = 1
            res.lines.append(f"certificate: REFUSED ({exc})")
        else:
            res.certificate = cert
            (out / "certificate.json").write_text(cert.to_json(), encoding="utf-8")
            for which in (1, 2):
                (out / f"beta_prime_{which}.csv").write_text(cert.beta_csv(which), encoding="utf-8")
            res.lines.append(f"gains: y1 {_coef_text(cert.gain_y1)}, y2 {_coef_text(cert.gain_y2)}, "
                             f"total {_coef_text(cert.gain_total)}")
            if cert.ios:
                res.lines.append("offsets: d' = 0 (IOS)")
            else:
                res.lines.append(f"offsets: d1' = {cert.d1p!r}, d2' = {cert.d2p!r}, "
                                 f"total {cert.offset_total!r}")
            if not cert.alpha.passed:
                res.lines.append(f"alpha check: FAILED at s = {cert.alpha.worst_point:.6g}")

    if "simulate" in stages:
        sim_info = {}
        for sc in scenarios:
            rec = sim.integrate(spec.dynamics[0], spec.dynamics[1], sc.x0, sc.inputs, sc.T, sc.dt,
                                backend=backend)
            res.records[sc.name] = rec
            (out / f"traj_{sc.name}.csv").write_text(rec.to_csv(), encoding="utf-8")
            sim_info[sc.name] = rec.diagnosis()
            line = f"scenario {sc.name}: {rec.status}"
            if rec.escaped:
                line += (f" (finite escape at t = {rec.escape_time:.6g}, "
                         f"growth rate {rec.growth_rate:.4g})")
            res.lines.append(line)
        _dump(out / "simulation.json", sim_info)

    if "verify" in stages:
        cert = res.certificate
        if cert is None:
            res.status = 1
            res.lines.append("verify: skipped, no certificate")
        else:
            merged: dict = {}
            for sc in scenarios:
                rec = res.records[sc.name]
                reps = list(sim.verify_certificate(rec, cert))
                reps += list(sim.verify_step1(rec, cert))
                for which, con in ((1, c1), (2, c2)):
                    reps.append(sim.verify_iops_subsystem(rec, con, which))
                    reps.append(sim.verify_uo(rec, con.alpha0, con.D0, which))
                if spec.state_contracts is not None:
                    reps += sim.verify_iss_remark(rec, spec.state_contracts, cert)
                res.reports[sc.name] = reps
                for r in reps:
                    merged.setdefault(r.bound_name, {})[sc.name] = r
            for bound, per in merged.items():
                worst = min(per.values(), key=lambda r: r.min_slack)
                _dump(out / f"verify_{bound}.json", {
                    "bound": bound, "pass": all(r.passed for r in per.values()),
                    "min_slack": worst.min_slack, "worst_time": worst.worst_time,
                    "worst_scenario": next(n for n, r in per.items() if r is worst),
                    "scenarios": {n: r.to_dict() for n, r in per.items()},
                })
            for name, reps in res.reports.items():
                res.lines.append(f"verify {name}:")
                for r in reps:
                    flag = "pass" if r.passed else "FAIL"
                    res.lines.append(f"  {r.bound_name}: {flag}, min slack {r.min_slack:.6g} "
                                     f"at t = {r.worst_time:.6g}")
                if any(not r.passed for r in reps):
                    res.status = 1

    res.lines.append(f"result: {'PASS' if res.status == 0 else 'FAIL'}")
    (out / "summary.txt").write_text("\n".join(res.lines) + "\n", encoding="utf-8")
    return res


def emit_report(out: Path) -> str:
    path = Path(out) / "summary.txt"
    if not path.is_file():
        raise FileNotFoundError(f"missing artifact {path}")
    return path.read_text(encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smallgain", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=sorted(STAGES))
    ap.add_argument("spec", help=f"JSON file or bundled name ({', '.join(bundled_names())})")
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--mode", choices=["literal", "symmetric"], default=None)
    ap.add_argument("--dt", type=float, default=None)
    ap.add_argument("--T", type=float, default=None)
    ap.add_argument("--grid", type=int, default=None, help="small-gain grid size")
    ap.add_argument("--s-l", type=float, default=None)
    ap.add_argument("--s-max", type=float, default=None)
    ap.add_argument("--c-grid", default=None, help="comma-separated multiplier coefficients")
    ap.add_argument("--rho3", default=None)
    ap.add_argument("--r31", default=None)
    ap.add_argument("--backend", choices=["cython", "python"], default=None)
    ap.add_argument("--scenario", default=None, help="run a single scenario")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"mode": args.mode, "grid": args.grid, "s_l": args.s_l, "s_max": args.s_max,
                 "rho3": args.rho3, "r31": args.r31,
                 "c_grid": [float(v) for v in args.c_grid.split(",")] if args.c_grid else None}
    try:
        spec = parse_spec(args.spec, overrides)
    except (SpecError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.out
    if out is None:
        out = Path(os.environ.get("SMALLGAIN_OUT", "smallgain_out")) / spec.name
    try:
        res = run_pipeline(spec, STAGES[args.command], out, backend=args.backend,
                           dt=args.dt, T=args.T, scenario=args.scenario)
    except (SpecError, sim.GridExtentError, ImportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print("\n".join(res.lines))
    return res.status


if __name__ == "__main__":
    sys.exit(main())
