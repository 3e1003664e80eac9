"""Command line runner: ``onelap run|validate|list``.

Configs are flat ``key = value`` files with dotted keys at most two levels
deep, for example::

    experiment = cc_sweep
    seed = 0
    output_dir = out/cc
    grid.cells = 32
    problem.gamma = 1.0

Each run writes CSV tables, binary field files and ``manifest.txt`` (same
flat format) into ``output_dir``.  Nothing is written when the config is
invalid.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cheeger import eigen_certificate, estimate_lambda1, lambda1_ball, superlevel_table
from .concave_convex import (
    CcProblem,
    certify_nonexistence,
    fix_constants,
    power_majorant,
    solve_cc,
    splitting,
    supersolution_margin,
)
from .grid import Grid, ScalarField, encode_field, encode_mask, lebesgue_norm, sobolev_constants
from .nonlin import Constant, Generic, Linear
from .plap import DEFAULT_SCHEDULE, AbsorptionSpec, ContractError, PlapConfig, identity_absorption, radial_load, solve
from .sattinger import NonlinearSpec, OrderedPair, certificate_sweep, iterate, linf_threshold, validate_pair
from .vfield import PenalizedProblem, penalized_minimize

EXPERIMENTS = ("radial_oracle", "cheeger", "sattinger_demo", "cc_sweep", "density_appendixA")


class ConfigError(ValueError):
    """A config problem; ``key`` names the offending field."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


# -- schema -------------------------------------------------------------------


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


# key -> (parser, default); ``None`` marks a required key
COMMON = {
    "experiment": (str, None),
    "seed": (int, 0),
    "output_dir": (str, None),
    "grid.kind": (str, "ball"),
    "grid.dim": (int, 2),
    "grid.cells": (int, 32),
    "grid.radius": (float, 1.0),
    "grid.side": (float, 1.0),
    "solver.p": (float, 1.05),
    "solver.delta": (float, 1e-6),
    "solver.tol_grad": (float, 1e-8),
    "solver.max_iters": (int, 500),
    "solver.continuation": (_floats, DEFAULT_SCHEDULE),
}

PROBLEM = {
    "radial_oracle": {
        "problem.mass": (float, 4.0),
        "problem.shell_inner": (float, 0.2),
        "problem.shell_outer": (float, 0.9),
        "problem.bins": (int, 20),
    },
    "cheeger": {"problem.thresholds": (int, 64)},
    "sattinger_demo": {
        "problem.load": (float, 4.0),
        "problem.noise": (float, 0.1),
        "problem.growth": (float, 1.0),
        "problem.damping": (float, 1.0),
        "problem.max_outer": (int, 200),
    },
    "cc_sweep": {
        "problem.gamma": (float, 1.0),
        "problem.kappa_exponent": (float, 2.0),
        "problem.f": (float, 1.0),
        "problem.ball_radius": (float, 0.5),
        "problem.lambda_count": (int, 16),
        "problem.cap": (float, 1e6),
    },
    "density_appendixA": {
        "problem.mass": (float, 4.0),
        "problem.eps_list": (_floats, (0.5, 0.2, 0.1, 0.05)),
        "problem.q_list": (_floats, (2.0, 4.0, 8.0, 16.0)),
    },
}


@dataclass
class RunConfig:
    experiment: str
    seed: int
    output_dir: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def solver(self):
        return PlapConfig(
            self["solver.p"], self["solver.delta"], self["solver.tol_grad"],
            self["solver.max_iters"], self["solver.continuation"],
        )

    def grid(self):
        if self["grid.kind"] == "ball":
            return Grid.ball(self["grid.dim"], self["grid.radius"], self["grid.cells"])
        n = self["grid.cells"]
        return Grid.box((n + 2,) * self["grid.dim"], self["grid.side"] / n)


def parse_text(text):
    """Raw ``{key: string}`` pairs; raises ``ConfigError`` on malformed lines."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or key.count(".") > 1:
            raise ConfigError(f"line {lineno}", f"bad key {key!r}")
        if key in raw:
            raise ConfigError(key, "given twice")
        raw[key] = value
    return raw


def build_config(raw):
    """Typed ``RunConfig`` from raw pairs; raises ``ConfigError`` naming the field."""
    exp = raw.get("experiment")
    if exp is None:
        raise ConfigError("experiment", "missing")
    if exp not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown tag {exp!r}; choose from {', '.join(EXPERIMENTS)}")
    schema = {**COMMON, **PROBLEM[exp]}
    for key in raw:
        if key not in schema:
            raise ConfigError(key, f"not a {exp} setting")
    values = {}
    for key, (parse, default) in schema.items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError:
                raise ConfigError(key, f"cannot read {raw[key]!r} as {parse.__name__.strip('_')}") from None
        elif default is None and key != "output_dir":
            raise ConfigError(key, "missing")
        else:
            values[key] = default
    return RunConfig(exp, values["seed"], values["output_dir"], values)


def load_config(path):
    """Read a config file; a relative ``output_dir`` is taken relative to the file."""
    path = Path(path)
    config = build_config(parse_text(path.read_text()))
    if config.output_dir and not Path(config.output_dir).is_absolute():
        config.output_dir = str(path.parent / config.output_dir)
        config.values["output_dir"] = config.output_dir
    return config


def validate(config):
    """Issues that would stop a run, one string per problem; empty when valid.  Never solves."""
    issues = []
    v = config.values

    def need(cond, key, msg):
        if not cond:
            issues.append(f"{key}: {msg}")

    need(bool(config.output_dir), "output_dir", "missing")
    need(v["grid.kind"] in ("ball", "box"), "grid.kind", "must be 'ball' or 'box'")
    need(v["grid.dim"] >= 2, "grid.dim", "must be at least 2")
    need(v["grid.cells"] >= 4, "grid.cells", "must be at least 4")
    need(v["grid.radius"] > 0, "grid.radius", "must be positive")
    need(v["grid.side"] > 0, "grid.side", "must be positive")
    need(v["solver.p"] > 1, "solver.p", "must exceed 1")
    need(v["solver.delta"] >= 0, "solver.delta", "must be non-negative")
    need(v["solver.tol_grad"] > 0, "solver.tol_grad", "must be positive")
    need(v["solver.max_iters"] > 0, "solver.max_iters", "must be positive")
    sched = v["solver.continuation"]
    need(all(q > 1 for q in sched) and all(b < a for a, b in zip(sched, sched[1:])),
         "solver.continuation", "must be strictly decreasing and above 1")
    exp = config.experiment
    if exp in ("radial_oracle", "density_appendixA", "sattinger_demo", "cc_sweep"):
        need(v["grid.kind"] == "ball", "grid.kind", f"{exp} runs on a ball")
    if exp == "radial_oracle":
        need(v["problem.mass"] > 0, "problem.mass", "must be positive")
        need(0 <= v["problem.shell_inner"] < v["problem.shell_outer"] <= 1,
             "problem.shell_inner", "need 0 <= shell_inner < shell_outer <= 1 (fractions of the radius)")
        need(v["problem.bins"] >= 1, "problem.bins", "must be positive")
    elif exp == "cheeger":
        need(v["problem.thresholds"] >= 1, "problem.thresholds", "must be positive")
    elif exp == "sattinger_demo":
        need(v["problem.load"] >= 0, "problem.load", "must be non-negative")
        need(0 <= v["problem.noise"] < 1, "problem.noise", "must lie in [0, 1)")
        need(v["problem.growth"] >= 0, "problem.growth", "must be non-negative")
        need(v["problem.damping"] > 0, "problem.damping", "must be positive")
        need(v["problem.max_outer"] >= 1, "problem.max_outer", "must be positive")
    elif exp == "cc_sweep":
        need(v["problem.gamma"] > 0, "problem.gamma",
             "must be positive: the singular term needs h(s) <= s^-gamma with gamma > 0")
        need(v["problem.kappa_exponent"] > 0, "problem.kappa_exponent",
             "must be positive so that kappa(0) = 0 and kappa is increasing")
        need(v["problem.f"] > 0, "problem.f", "must be positive")
        need(0 < v["problem.ball_radius"] < v["grid.radius"], "problem.ball_radius",
             "must be positive and smaller than grid.radius")
        need(v["problem.lambda_count"] >= 2, "problem.lambda_count", "must be at least 2")
        need(v["problem.cap"] > 0, "problem.cap", "must be positive")
    elif exp == "density_appendixA":
        need(v["problem.mass"] > 0, "problem.mass", "must be positive")
        need(all(0 < e <= 1 for e in v["problem.eps_list"]) and v["problem.eps_list"],
             "problem.eps_list", "entries must lie in (0, 1]")
        need(all(q >= 1 for q in v["problem.q_list"]), "problem.q_list", "entries must be >= 1")
    return issues


def list_experiments():
    return list(EXPERIMENTS)


# -- output helpers -------------------------------------------------------------


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def manifest_text(pairs):
    return "".join(f"{k} = {_cell(v)}\n" for k, v in pairs)


def read_manifest(path):
    return parse_text(Path(path).read_text())


def _threads():
    try:
        return max(1, int(os.environ.get("ONELAP_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class RunResult:
    """Artifacts of one run before they are written; ``extras`` keeps in-memory objects."""

    files: dict = field(default_factory=dict)
    manifest: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def table(self, name, header, rows):
        self.files[name] = csv_text(header, rows).encode()

    def field_file(self, name, f):
        self.files[name] = encode_field(f)

    def mask_file(self, name, grid, mask):
        self.files[name] = encode_mask(grid, mask)


# -- experiments -----------------------------------------------------------------


def exact_radial(grid, mass, r):
    """``max(M - N + 1, 0) / |x|``."""
    return max(mass - grid.dim + 1, 0.0) / r


def run_radial_oracle(config, res):
    grid, cfg = config.grid(), config.solver()
    mass, radius = config["problem.mass"], config["grid.radius"]
    rep = solve(cfg, identity_absorption(), radial_load(grid, mass))
    r = grid.radius_from()[grid.interior]
    u = rep.u.interior_values
    exact = exact_radial(grid, mass, np.maximum(r, grid.spacing / 2))
    lo, hi = config["problem.shell_inner"] * radius, config["problem.shell_outer"] * radius
    shell = (r >= lo) & (r <= hi)
    err = lebesgue_norm(u[shell] - exact[shell], grid.cell_volume, 2)
    ref = lebesgue_norm(exact[shell], grid.cell_volume, 2)
    rel = err / ref if ref > 0 else math.nan
    edges = np.linspace(0.0, radius, config["problem.bins"] + 1)
    rows = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (r >= a) & (r < b)
        if not sel.any():
            continue
        mu, me = float(u[sel].mean()), float(exact[sel].mean())
        rows.append((0.5 * (a + b), int(sel.sum()), mu, me, abs(mu - me), abs(mu - me) / me if me > 0 else math.nan))
    res.table("radial.csv", ["r_mid", "cells", "mean_u", "mean_exact", "abs_error", "rel_error"], rows)
    res.field_file("u.field", rep.u)
    res.extras.update(report=rep, rel_l2=rel)
    res.manifest += [
        ("radial.rel_l2_shell", rel),
        ("radial.abs_l2_shell", err),
        ("radial.linf_u", float(np.max(np.abs(u)))),
        ("radial.exact_coefficient", exact_radial(grid, mass, 1.0)),
        ("solver.converged", rep.converged),
        ("solver.usable", rep.usable),
        ("solver.iterations", rep.iterations),
        ("solver.grad_norm", rep.grad_norm),
    ]


def run_cheeger(config, res):
    grid, cfg = config.grid(), config.solver()
    nt = config["problem.thresholds"]
    est = estimate_lambda1(grid, cfg, n_thresholds=nt)
    cert = eigen_certificate(grid, est, cfg)
    rows = [(t, cells, ratio) for t, cells, ratio, _ in superlevel_table(est.eigenfunction, nt)]
    res.table("superlevel.csv", ["threshold", "cells", "ratio"], rows)
    res.field_file("eigenfunction.field", est.eigenfunction)
    res.mask_file("candidate.mask", grid, est.candidate_set)
    res.extras.update(estimate=est, certificate=cert)
    exact = lambda1_ball(grid.dim, config["grid.radius"]) if config["grid.kind"] == "ball" else math.nan
    res.manifest += [
        ("lambda1", est.lambda1),
        ("lambda1.method", est.method),
        ("lambda1.rayleigh", est.rayleigh_value),
        ("lambda1.superlevel", est.superlevel_value),
        ("lambda1.exact_ball", exact),
        ("lambda1.load", est.load),
        ("lambda1.converged", est.converged),
        ("certificate.residual", cert.residual),
        ("certificate.pairing", cert.pairing),
        ("certificate.boundary", cert.boundary),
        ("certificate.z_sup", cert.z_sup),
    ]


def sattinger_problem(config):
    """``-Delta_1 u + damping u = f + growth s/(1+|s|)`` with ``f = load (1 + noise xi)``.

    ``xi`` is uniform on ``[0, 1)`` from the seeded generator.  The splitting
    is ``l = damping s``; ``w = 0`` and ``v`` solving
    ``-Delta_p v + damping v = f + growth`` form the ordered pair.
    """
    grid, cfg = config.grid(), config.solver()
    rng = np.random.default_rng(config.seed)
    xi = rng.random(grid.n_interior)
    f = config["problem.load"] * (1.0 + config["problem.noise"] * xi)
    growth, damping = config["problem.growth"], config["problem.damping"]
    F = Constant(f) + Generic(lambda s: growth * s / (1.0 + np.abs(s)), "saturating") - Linear(damping)
    spec = NonlinearSpec(F, Linear(damping))
    top = ScalarField.from_interior(grid, f + growth)
    v = solve(cfg, AbsorptionSpec(Linear(damping), "increasing"), top).u
    return grid, cfg, spec, OrderedPair(ScalarField.zeros(grid), v)


def run_sattinger_demo(config, res):
    grid, cfg, spec, pair = sattinger_problem(config)
    diag = validate_pair(pair, spec, cfg.p, cfg.delta)
    u, trace = iterate(pair, spec, cfg, max_outer=config["problem.max_outer"])
    k_star = linf_threshold(spec, pair, sobolev_constants(grid.dim))
    _, cert_rows = certificate_sweep(u, spec, cfg)
    res.files["trace.csv"] = trace.to_csv().encode()
    keys = ["p", "usable", "residual_l1", "z_sup", "pairing", "boundary"]
    res.table("certificate.csv", keys, [[r[k] for k in keys] for r in cert_rows])
    res.field_file("u.field", u)
    res.extras.update(traces=[(trace, k_star)], k_star=k_star, pair=pair, u=u)
    res.manifest += [
        ("k_star", k_star),
        ("trace.steps", trace.n_steps),
        ("trace.max_sup", trace.max_sup),
        ("trace.monotone_defect", trace.monotone_defect),
        ("trace.sandwich_defect", trace.sandwich_defect),
        ("trace.converged", trace.converged),
        ("pair.sub_residual", diag.sub_residual),
        ("pair.super_residual", diag.super_residual),
        ("pair.ordering_gap", diag.ordering_gap),
    ]


def cc_problem(config):
    grid = config.grid()
    f = ScalarField(grid, np.where(grid.interior, config["problem.f"], 0.0))
    center = tuple(0.0 for _ in range(grid.dim))
    return CcProblem(
        config["problem.gamma"], f, power_majorant(config["problem.kappa_exponent"]),
        (center, config["problem.ball_radius"]),
    )


def sweep_lambdas(lambda_bar, lambda_tilde, count):
    """Half the points evenly in ``(0, lambda_bar]``, the rest geometric up to ``2 lambda_tilde``."""
    n_exist = count // 2
    low = [lambda_bar * (i + 1) / n_exist for i in range(n_exist)]
    top = 2 * lambda_tilde if math.isfinite(lambda_tilde) else 100 * lambda_bar
    m = count - n_exist
    high = [lambda_bar * (top / lambda_bar) ** ((j + 1) / m) for j in range(m)]
    return low + high


def run_cc_sweep(config, res):
    prob, cfg = cc_problem(config), config.solver()
    k = fix_constants(prob, cap=config["problem.cap"])
    consts = sobolev_constants(prob.grid.dim)
    lams = sweep_lambdas(k.lambda_bar, k.lambda_tilde, config["problem.lambda_count"])
    exist = [lam for lam in lams if lam <= k.lambda_bar]
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        reports = list(pool.map(lambda lam: solve_cc(prob, lam, cfg, k), exist))
    solved = dict(zip(exist, reports))
    candidate = reports[-1].u
    rows, trace_rows, traces, k_stars = [], [], [], []
    for i, lam in enumerate(lams):
        cert = certify_nonexistence(prob, lam, candidate)
        if lam in solved:
            rep = solved[lam]
            verdict = "exists"
            for j, st in enumerate(rep.stages):
                spec = splitting(prob, st["eps"], lam)
                k_stars.append(linf_threshold(spec, OrderedPair(st["w"], st["v"]), consts))
                traces.append((st["trace"], k_stars[-1]))
                for r in st["trace"].rows:
                    trace_rows.append((i, st["eps"], r["n"], r["min_u"], r["max_u"], r["L1_increment"], r["inner_iters"]))
            stats = (rep.max_u, rep.min_interior, min(s["sandwich_defect"] for s in rep.stages),
                     min(s["monotone_defect"] for s in rep.stages), rep.pairing)
        else:
            verdict = cert.verdict if cert.verdict == "nonexistent" else "unknown"
            stats = (math.nan,) * 5
        rows.append((i, lam, verdict) + stats + (k.lambda_bar, k.lambda_tilde, cert.lhs, cert.rhs, cert.certificate_violated))
    res.table(
        "sweep.csv",
        ["index", "lambda", "verdict", "max_u", "min_u", "sandwich_defect", "monotone_defect", "pairing",
         "lambda_bar", "lambda_tilde", "cert_lhs", "cert_rhs", "cert_violated"],
        rows,
    )
    res.table("traces.csv", ["index", "eps", "n", "min_u", "max_u", "L1_increment", "inner_iters"], trace_rows)
    res.field_file("u_lambda_bar.field", candidate)
    # supersolution checks at eps0, eps0/2, eps0/4
    sup_rows = []
    for st in reports[-1].stages:
        margin = supersolution_margin(prob, st["eps"], k, st["v"], k.lambda_bar)
        sup_rows.append((st["eps"], float(st["v"].interior_values.max()), k.linf_bound,
                         float(margin.min()), float(np.mean(margin >= 0))))
    res.table("supersolution.csv", ["eps", "v_max", "linf_bound", "margin_min", "margin_ok_fraction"], sup_rows)
    res.extras.update(traces=traces, k_star=max(k_stars), constants=k, problem=prob, candidate=candidate)
    res.manifest += [(f"constants.{name}", getattr(k, name)) for name in (
        "Lambda", "lambda_bar", "eps0", "linf_bound", "lambda_tilde", "C_sobolev", "C1", "phi_max",
        "lambda1_B", "s0", "c0", "c", "lorentz_norm", "capped")]
    res.manifest.append(("k_star", max(k_stars)))
    for tag, lam in (("nonexistence_twice", 2 * k.lambda_tilde), ("nonexistence_half", k.lambda_tilde / 2)):
        cert = certify_nonexistence(prob, lam, candidate)
        res.manifest += [
            (f"{tag}.lambda", lam),
            (f"{tag}.verdict", cert.verdict),
            (f"{tag}.lhs", cert.lhs),
            (f"{tag}.rhs", cert.rhs),
            (f"{tag}.low_measure", cert.low_measure),
            (f"{tag}.high_measure", cert.high_measure),
            (f"{tag}.violated", cert.certificate_violated),
        ]


def density_data(config):
    """Radial benchmark: ``u = (M-N+1)/|x|`` with ``z = -x/|x|``, so ``f = -div z = (N-1)/|x|``."""
    grid = config.grid()
    target = radial_load(grid, max(config["problem.mass"] - grid.dim + 1, 0.0))
    f = radial_load(grid, grid.dim - 1.0)
    return grid, target, f


def run_density(config, res):
    grid, target, f = density_data(config)
    cfg = config.solver()
    qs = config["problem.q_list"]
    rows = []
    reports = []
    for eps in config["problem.eps_list"]:
        rep = penalized_minimize(PenalizedProblem(target, f, eps), cfg, qs=qs)
        reports.append((eps, rep))
        zq = dict(rep.zq_norms)
        rows.append([eps, rep.fidelity_error, rep.divergence_error, rep.mu_eps, rep.tv_gap, rep.converged]
                    + [zq[q] for q in qs])
    res.table(
        "density.csv",
        ["eps", "fidelity_error", "divergence_error", "mu_eps", "tv_gap", "converged"] + [f"zq_{q:g}" for q in qs],
        rows,
    )
    res.extras.update(reports=reports)
    res.manifest += [("domain_volume", grid.volume)]


RUNNERS = {
    "radial_oracle": run_radial_oracle,
    "cheeger": run_cheeger,
    "sattinger_demo": run_sattinger_demo,
    "cc_sweep": run_cc_sweep,
    "density_appendixA": run_density,
}


def execute(config):
    """Run in memory; returns a ``RunResult`` without touching the disk."""
    issues = validate(config)
    if issues:
        raise ConfigError(issues[0].split(":", 1)[0], issues[0].split(":", 1)[1].strip())
    res = RunResult()
    res.manifest += [
        ("tool", "onelap"),
        ("version", __version__),
        ("experiment", config.experiment),
        ("seed", config.seed),
    ]
    echo = sorted(k for k in config.values if "." in k)
    res.manifest += [(k, _config_value(config.values[k])) for k in echo]
    RUNNERS[config.experiment](config, res)
    return res


def _config_value(v):
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    return v


def run(config):
    """Execute and write every artifact; output appears only once the run has succeeded."""
    res = execute(config)
    out = Path(config.output_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".onelap-", dir=out.parent))
    try:
        for name, data in sorted(res.files.items()):
            (stage / name).write_bytes(data)
        (stage / "manifest.txt").write_bytes(manifest_text(res.manifest).encode())
        out.mkdir(exist_ok=True)
        for item in sorted(stage.iterdir()):
            os.replace(item, out / item.name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return res


# -- entry point ------------------------------------------------------------------


def main(argv=None):
    parser = argparse.ArgumentParser(prog="onelap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="print the experiment tags")
    for name, text in (("run", "run an experiment"), ("validate", "check a config without solving")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
    args = parser.parse_args(argv)

    if args.command == "list":
        print("\n".join(list_experiments()))
        return 0
    try:
        config = load_config(args.config)
    except OSError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "validate":
        issues = validate(config)
        for issue in issues:
            print(issue)
        if not issues:
            print("ok")
        return 1 if issues else 0
    try:
        res = run(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, RuntimeError) as exc:
        print(f"error: run failed: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {len(res.files) + 1} files to {config.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
