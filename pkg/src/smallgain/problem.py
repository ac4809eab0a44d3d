"""Problem files: two parametric subsystems, their contracts, certification
knobs and a list of simulation scenarios, stored as JSON.

Errors are collected with dotted field paths and raised as one of
:class:`ParseError`, :class:`DimensionError` or :class:`ClassCheckError`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from smallgain import calculus as cc
from smallgain.calculus import FnClass
from smallgain.composer import FormulaMode, StateContract, SubsystemContract
from smallgain.grammar import GrammarError, parse_annotated
from smallgain.sim import InputSignal, LinearSubsystem


class SpecError(ValueError):
    kind = "spec error"

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{p}: {m}" for p, m in self.errors)
        super().__init__(f"{self.kind}: {lines}")


class ParseError(SpecError):
    kind = "parse error"


class DimensionError(SpecError):
    kind = "dimension mismatch"


class ClassCheckError(SpecError):
    kind = "class-check failure"


@dataclass(frozen=True)
class CertifyKnobs:
    s_l: float = 0.0
    s_max: float = cc.DEFAULT_CAP
    c_grid: tuple = (0.25, 0.5, 1.0)
    rho3: str = "s"
    r31: str = "0.1*s"
    mode: FormulaMode = FormulaMode.SYMMETRIC
    grid: int = 2048


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    x0: tuple                      # (x1(0), x2(0)) as arrays
    inputs: tuple                  # (InputSignal, InputSignal)
    T: float = 20.0
    dt: float = 1e-3

    @property
    def x0_norm(self) -> float:
        return float(max(np.max(np.abs(self.x0[0])), np.max(np.abs(self.x0[1]))))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    name: str
    dynamics: tuple
    contracts: tuple
    knobs: CertifyKnobs
    scenarios: tuple = ()
    state_contracts: tuple | None = None
    source: dict = field(default_factory=dict, repr=False)


def bundled_names() -> list[str]:
    root = resources.files("smallgain") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_spec_text(ref: str) -> tuple[str, str]:
    """Text of a spec given a path or a bundled scenario name."""
    path = Path(ref)
    if path.is_file():
        return path.read_text(encoding="utf-8"), path.stem
    res = resources.files("smallgain") / "scenarios" / f"{ref}.json"
    if res.is_file():
        return res.read_text(encoding="utf-8"), ref
    raise FileNotFoundError(f"no spec file or bundled scenario named {ref!r}")


def parse_spec(ref: str, overrides: dict | None = None) -> ProblemSpec:
    text, stem = load_spec_text(ref)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError([("<file>", f"invalid JSON: {exc}")]) from None
    return build_spec(raw, stem, overrides)


class _Collector:
    def __init__(self):
        self.parse, self.dims, self.classes = [], [], []

    def need(self, obj, key, path, kind=None):
        if not isinstance(obj, dict) or key not in obj:
            self.parse.append((f"{path}.{key}" if path else key, "missing"))
            return None
        val = obj[key]
        if kind is not None and not isinstance(val, kind):
            self.parse.append((f"{path}.{key}", f"expected {kind.__name__ if isinstance(kind, type) else 'number'}"))
            return None
        return val


def _matrix(c: _Collector, val, path):
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        c.parse.append((path, "not a numeric matrix"))
        return None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        c.parse.append((path, f"expected a 2-D matrix, got {arr.ndim}-D"))
        return None
    return arr


def _fn(c: _Collector, text, path, cap, allow_zero=False, required=FnClass.K):
    if not isinstance(text, str):
        c.parse.append((path, "expected a function string"))
        return None
    try:
        fn, claim = parse_annotated(text, cap)
    except GrammarError as exc:
        c.parse.append((path, str(exc)))
        return None
    if allow_zero and fn.is_zero:
        return fn
    rep = cc.classify(fn)
    for msg in rep.failures(required):
        c.classes.append((path, msg))
    if claim is not None and claim != required:
        for msg in rep.failures(claim):
            c.classes.append((path, f"claimed {claim.value}: {msg}"))
    return fn


def _kl(c: _Collector, val, path, cap):
    if not isinstance(val, dict) or "family" not in val:
        c.parse.append((path, "expected an object with a 'family'"))
        return None
    fam = val["family"]
    try:
        if fam == "exp_decay":
            return cc.exp_decay(float(val.get("M", 1.0)), float(val.get("lam", 1.0)), cap)
        if fam == "scaled":
            f = _fn(c, val.get("f"), f"{path}.f", cap)
            return None if f is None else cc.scaled_decay(f, float(val.get("lam", 1.0)))
    except (cc.CalculusError, TypeError, ValueError) as exc:
        c.classes.append((path, str(exc)))
        return None
    c.parse.append((f"{path}.family", f"unknown KL family {fam!r}"))
    return None


def _dynamics(c: _Collector, raw, path):
    if not isinstance(raw, dict):
        c.parse.append((path, "expected an object"))
        return None
    mats = {}
    for key in ("A", "E", "B", "C"):
        v = c.need(raw, key, path)
        mats[key] = None if v is None else _matrix(c, v, f"{path}.{key}")
    for key in ("F", "G"):
        mats[key] = _matrix(c, raw[key], f"{path}.{key}") if key in raw else None
    if any(mats[k] is None for k in ("A", "E", "B", "C")):
        return None
    A, E, B, C = mats["A"], mats["E"], mats["B"], mats["C"]
    n = A.shape[0]
    ok = True
    checks = [("A", A.shape, (n, n)), ("E", E.shape[:1], (n,)), ("B", B.shape[:1], (n,)),
              ("C", C.shape[1:], (n,))]
    p = C.shape[0]
    if mats["F"] is not None:
        checks.append(("F", mats["F"].shape, (p, E.shape[1])))
    if mats["G"] is not None:
        checks.append(("G", mats["G"].shape, (p, B.shape[1])))
    for key, got, want in checks:
        if tuple(got) != tuple(want):
            c.dims.append((f"{path}.{key}", f"shape {tuple(got)} does not match expected {tuple(want)}"))
            ok = False
    poly = raw.get("poly", {}) or {}
    if not isinstance(poly, dict):
        c.parse.append((f"{path}.poly", "expected a degree -> matrix object"))
        return None
    phi = raw.get("phi", "linear")
    if not ok:
        return None
    try:
        return LinearSubsystem(A=A, E=E, B=B, C=C, F=mats["F"], G=mats["G"],
                               poly={int(k): v for k, v in poly.items()}, phi=phi)
    except ValueError as exc:
        c.parse.append((path, str(exc)))
        return None


def _contract(c: _Collector, raw, path, cap):
    if not isinstance(raw, dict):
        c.parse.append((path, "expected an object"))
        return None, None
    beta = _kl(c, c.need(raw, "beta", path), f"{path}.beta", cap)
    gy = _fn(c, c.need(raw, "gamma_y", path, str), f"{path}.gamma_y", cap)
    gu = _fn(c, raw.get("gamma_u", "0"), f"{path}.gamma_u", cap, allow_zero=True)
    a0 = _fn(c, raw.get("alpha0", "s"), f"{path}.alpha0", cap, allow_zero=True)
    d = float(raw.get("d", 0.0))
    D0 = float(raw.get("D0", 0.0))
    for key, v in (("d", d), ("D0", D0)):
        if v < 0:
            c.classes.append((f"{path}.{key}", "must be nonnegative"))
    dims = raw.get("dims", {}) or {}
    if None in (beta, gy, gu, a0):
        return None, dims
    return SubsystemContract(beta=beta, gamma_y=gy, gamma_u=gu, d=d, alpha0=a0, D0=D0,
                             state_dim=int(dims.get("state", 1)),
                             input_dim=int(dims.get("input", 1)),
                             output_dim=int(dims.get("output", 1))), dims


def _input(c: _Collector, raw, path, dim):
    if not isinstance(raw, dict):
        c.parse.append((path, "expected an input object"))
        return None
    kw = {k: raw[k] for k in ("kind", "amplitude", "t0", "omega", "phase") if k in raw}
    if "amplitude" in kw and isinstance(kw["amplitude"], list):
        if len(kw["amplitude"]) != dim:
            c.dims.append((f"{path}.amplitude", f"length {len(kw['amplitude'])} does not match input dim {dim}"))
            return None
        kw["amplitude"] = tuple(float(a) for a in kw["amplitude"])
    if "times" in raw:
        kw["times"] = tuple(float(v) for v in raw["times"])
        kw["values"] = tuple(float(v) for v in raw.get("values", ()))
    try:
        return InputSignal(dim=dim, **kw)
    except (TypeError, ValueError) as exc:
        c.parse.append((path, str(exc)))
        return None


def build_spec(raw: dict, stem: str = "spec", overrides: dict | None = None) -> ProblemSpec:
    """Validate a decoded problem object; ``overrides`` replace certification knobs."""
    c = _Collector()
    if not isinstance(raw, dict):
        raise ParseError([("<root>", "expected a JSON object")])
    kraw = dict(raw.get("certify", {}) or {})
    kraw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        knobs = CertifyKnobs(
            s_l=float(kraw.get("s_l", 0.0)),
            s_max=float(kraw.get("s_max", cc.DEFAULT_CAP)),
            c_grid=tuple(float(v) for v in kraw.get("c_grid", (0.25, 0.5, 1.0))),
            rho3=str(kraw.get("rho3", "s")),
            r31=str(kraw.get("r31", "0.1*s")),
            mode=FormulaMode(kraw.get("mode", "symmetric")),
            grid=int(kraw.get("grid", 2048)),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError([("certify", str(exc))]) from None
    cap = knobs.s_max
    for key in ("rho3", "r31"):
        _fn(c, getattr(knobs, key), f"certify.{key}", cap, required=FnClass.KINF)

    subs = raw.get("subsystems")
    if not isinstance(subs, list) or len(subs) != 2:
        raise ParseError([("subsystems", "expected a list of exactly two subsystems")])
    dyns, contracts, states, cdims = [], [], [], []
    for i, sub in enumerate(subs):
        path = f"subsystems[{i}]"
        dyns.append(_dynamics(c, c.need(sub, "dynamics", path), f"{path}.dynamics"))
        con, dims = _contract(c, c.need(sub, "contract", path), f"{path}.contract", cap)
        contracts.append(con)
        cdims.append(dims)
        if isinstance(sub, dict) and "state_contract" in sub:
            sraw = sub["state_contract"]
            sp = f"{path}.state_contract"
            beta = _kl(c, c.need(sraw, "beta", sp), f"{sp}.beta", cap)
            gy = _fn(c, sraw.get("gamma_y", "0"), f"{sp}.gamma_y", cap, allow_zero=True)
            gu = _fn(c, sraw.get("gamma_u", "0"), f"{sp}.gamma_u", cap, allow_zero=True)
            states.append(None if None in (beta, gy, gu) else StateContract(beta, gy, gu))

    for i, (dyn, dims) in enumerate(zip(dyns, cdims)):
        if dyn is None:
            continue
        for key, actual, label in (("state", dyn.n, "dynamics.A"), ("input", dyn.m, "dynamics.B"),
                                   ("output", dyn.p, "dynamics.C")):
            if key in dims and int(dims[key]) != actual:
                c.dims.append((f"subsystems[{i}].contract.dims.{key}",
                               f"{dims[key]} does not match subsystems[{i}].{label} ({actual})"))
    if dyns[0] is not None and dyns[1] is not None:
        for i, j in ((0, 1), (1, 0)):
            if dyns[i].q != dyns[j].p:
                c.dims.append((f"subsystems[{i}].dynamics.E",
                               f"coupling width {dyns[i].q} does not match subsystems[{j}] output dim {dyns[j].p}"))

    scenarios = []
    for k, sc in enumerate(raw.get("scenarios", []) or []):
        path = f"scenarios[{k}]"
        x0 = c.need(sc, "x0", path, list)
        ins = sc.get("inputs", [{"kind": "constant", "amplitude": 0.0}] * 2) if isinstance(sc, dict) else None
        if x0 is None or not isinstance(ins, list) or len(x0) != 2 or len(ins) != 2:
            c.parse.append((path, "x0 and inputs must be two-element lists"))
            continue
        x0a = [np.atleast_1d(np.asarray(v, dtype=float)) for v in x0]
        good = True
        for i in range(2):
            if dyns[i] is not None and x0a[i].size != dyns[i].n:
                c.dims.append((f"{path}.x0[{i}]", f"length {x0a[i].size} does not match state dim {dyns[i].n}"))
                good = False
        sigs = [_input(c, ins[i], f"{path}.inputs[{i}]", dyns[i].m if dyns[i] is not None else 1)
                for i in range(2)]
        if good and None not in sigs:
            scenarios.append(Scenario(str(sc.get("name", f"s{k}")), tuple(x0a), tuple(sigs),
                                      float(sc.get("T", 20.0)), float(sc.get("dt", 1e-3))))

    if c.parse:
        raise ParseError(c.parse)
    if c.dims:
        raise DimensionError(c.dims)
    if c.classes:
        raise ClassCheckError(c.classes)
    return ProblemSpec(
        name=str(raw.get("name", stem)), dynamics=tuple(dyns), contracts=tuple(contracts),
        knobs=knobs, scenarios=tuple(scenarios),
        state_contracts=tuple(states) if len(states) == 2 else None, source=raw,
    )
