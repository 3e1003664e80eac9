"""Monotone sub/supersolution iteration for ``-Delta_1 u = F(x, u)``.

The source is split as ``F + l`` with ``l`` increasing and ``F + l``
non-decreasing.  Starting from a subsolution ``w`` each step solves

    -Delta_p u_n + l(x, u_n) = F(x, u_{n-1}) + l(x, u_{n-1})

at a fixed small ``p``.  Discrete comparison then keeps ``w <= u_n <= v``
and makes the sequence non-decreasing.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .grid import ScalarField, divergence, lebesgue_norm
from .nonlin import as_term
from .plap import AbsorptionSpec, ContractError, PlapConfig, solve
from .vfield import boundary_defect, flux_field, pairing_defect, project_unit

MONOTONE_TOL = 1e-8
ABORT_TOL = 1e-6


class OrderingError(ValueError):
    """The proposed subsolution exceeds the supersolution somewhere."""

    def __init__(self, message, worst_cells):
        super().__init__(message)
        self.worst_cells = worst_cells


class MonotonicityError(RuntimeError):
    """An iterate decreased by more than the abort tolerance."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class InnerSolveError(RuntimeError):
    """An inner p-Laplacian solve did not converge."""

    def __init__(self, message, report, trace):
        super().__init__(message)
        self.report = report
        self.trace = trace


@dataclass
class NonlinearSpec:
    F: object
    l: object
    sum_monotone: bool = True
    sample: tuple = (-4.0, 4.0)

    def __post_init__(self):
        self.F = as_term(self.F)
        self.l = as_term(self.l)

    def source(self, s):
        """``F(x, s) + l(x, s)``, the load of one iteration step."""
        return self.F.value(s) + self.l.value(s)

    def check(self, n_cells, n_samples=41):
        """Verify the splitting hypotheses on a lattice of constant states.

        Samples outside the domain of ``F`` or ``l`` (non-finite values) are
        skipped.  Raises ``ContractError`` naming the violated property.
        """
        s = np.linspace(*self.sample, n_samples)
        lv, fl = [], []
        for si in s:
            state = np.full(n_cells, si)
            lv.append(np.broadcast_to(self.l.value(state), (n_cells,)))
            fl.append(np.broadcast_to(self.source(state), (n_cells,)))
        lv, fl = np.array(lv), np.array(fl)
        ok = np.all(np.isfinite(lv), axis=1) & np.all(np.isfinite(fl), axis=1)
        lv, fl, s = lv[ok], fl[ok], s[ok]
        if np.any(np.diff(lv, axis=0) <= 0):
            raise ContractError("l is not increasing in s on the sample lattice")
        if self.sum_monotone and np.any(np.diff(fl, axis=0) < -1e-12 * (1 + np.abs(fl[:-1]))):
            raise ContractError("F + l is decreasing in s somewhere on the sample lattice")
        if np.any(lv * s[:, None] < 0):
            raise ContractError("l(x, s) s < 0 somewhere on the sample lattice")
        # |l| -> infinity along both rays: it must keep growing between 2^10 and 2^20
        for sign in (1.0, -1.0):
            mid = np.abs(self.l.value(np.full(n_cells, sign * 2.0**10)))
            far = np.abs(self.l.value(np.full(n_cells, sign * 2.0**20)))
            if np.all(np.isfinite(mid)) and np.all(np.isfinite(far)) and np.any(far < 1.5 * mid):
                raise ContractError("|l(x, s)| does not grow along the sampled rays")


@dataclass
class OrderedPair:
    w: ScalarField
    v: ScalarField
    sub_residual: float = float("nan")
    super_residual: float = float("nan")

    def __post_init__(self):
        if not self.w.grid.same_as(self.v.grid):
            raise ContractError("w and v live on different grids")

    @property
    def grid(self):
        return self.w.grid


@dataclass
class PairDiagnostics:
    sub_residual: float
    super_residual: float
    z_sup: float
    z_sup_raw: dict
    pairing: dict
    boundary: dict
    ordering_gap: float

    def to_text(self):
        lines = [
            f"sub_residual: {self.sub_residual!r}",
            f"super_residual: {self.super_residual!r}",
            f"z_sup: {self.z_sup!r}",
            f"ordering_gap: {self.ordering_gap!r}",
        ]
        for name in ("w", "v"):
            lines.append(f"z_sup_raw.{name}: {self.z_sup_raw[name]!r}")
            lines.append(f"pairing.{name}: {self.pairing[name]!r}")
            lines.append(f"boundary.{name}: {self.boundary[name]!r}")
        return "\n".join(lines) + "\n"


def check_order(w, v, slack=1e-12, n_report=5):
    """Raise ``OrderingError`` unless ``w <= v + slack`` on every cell."""
    gap = w.values - v.values
    bad = gap > slack
    if np.any(bad):
        flat = np.argsort(gap, axis=None)[::-1][: min(n_report, int(bad.sum()))]
        cells = [(tuple(int(i) for i in np.unravel_index(k, gap.shape)), float(gap.flat[k])) for k in flat]
        raise OrderingError(f"w exceeds v on {int(bad.sum())} cells; worst: {cells}", cells)
    return float(gap.max())


def _source_residual(u, spec, p, delta):
    z = flux_field(u, p, delta)
    div = -divergence(z).interior_values
    return div - spec.F.value(u.interior_values), z


def validate_pair(pair, spec, p_cert, delta=1e-6):
    """Signed residuals of ``-div z <= F(x, w)`` and ``-div z >= F(x, v)``.

    ``z`` is the regularized flux at ``p_cert``.  ``sub_residual`` is the
    largest value of ``-div z_w - F(x, w)`` (a subsolution has it <= 0) and
    ``super_residual`` the smallest value of ``-div z_v - F(x, v)``.  Pairing
    and boundary defects use the flux projected onto the unit ball, with the
    boundary value read from the interior side of each collar face and each
    face weighted by its share of the discrete gradient.
    """
    gap = check_order(pair.w, pair.v)
    out = {}
    for name, u in (("w", pair.w), ("v", pair.v)):
        res, z = _source_residual(u, spec, p_cert, delta)
        zp = project_unit(z)
        bnd = boundary_defect(zp, u, "inner", "flux", delta)
        out[name] = (res, z.sup_norm(), zp.sup_norm(), pairing_defect(zp, u, delta), bnd)
    sub = float(out["w"][0].max()) if out["w"][0].size else 0.0
    sup = float(out["v"][0].min()) if out["v"][0].size else 0.0
    pair.sub_residual, pair.super_residual = sub, sup
    return PairDiagnostics(
        sub_residual=sub,
        super_residual=sup,
        z_sup=max(out["w"][2], out["v"][2]),
        z_sup_raw={k: out[k][1] for k in out},
        pairing={k: out[k][3] for k in out},
        boundary={k: out[k][4] for k in out},
        ordering_gap=gap,
    )


# -- iteration ----------------------------------------------------------------


@dataclass
class IterationTrace:
    rows: list = field(default_factory=list)
    monotone_defect: float = 0.0
    sandwich_defect: float = 0.0
    max_sup: float = 0.0
    converged: bool = False

    @property
    def n_steps(self):
        return max(0, len(self.rows) - 1)

    def record(self, n, u, increment, inner_iters, w, v, direction):
        x = u.values[u.grid.interior]
        vol = u.grid.cell_volume
        inc = increment[u.grid.interior]
        if n > 0:
            step_defect = float((direction * inc).min()) if inc.size else 0.0
            self.monotone_defect = min(self.monotone_defect, step_defect)
        below = float((u.values - w.values)[u.grid.closure].min())
        above = float((v.values - u.values)[u.grid.closure].min())
        self.sandwich_defect = min(self.sandwich_defect, below, above)
        self.max_sup = max(self.max_sup, float(np.abs(x).max(initial=0.0)))
        self.rows.append(
            {
                "n": n,
                "min_u": float(x.min()) if x.size else 0.0,
                "max_u": float(x.max()) if x.size else 0.0,
                "L1_increment": float(np.abs(inc).sum() * vol),
                "inner_iters": int(inner_iters),
            }
        )

    def to_csv(self, path=None):
        buf = io.StringIO()
        cols = ["n", "min_u", "max_u", "L1_increment", "inner_iters"]
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(cols)
        for r in self.rows:
            wr.writerow([r["n"], repr(r["min_u"]), repr(r["max_u"]), repr(r["L1_increment"]), r["inner_iters"]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def step(u_prev, spec, cfg):
    """One iteration: solve with absorption ``l`` and load ``(F + l)(u_prev)``."""
    grid = u_prev.grid
    load = ScalarField.from_interior(grid, spec.source(u_prev.interior_values))
    return solve(cfg, AbsorptionSpec(spec.l, "increasing"), load, u_prev.with_zero_trace())


def iterate(pair, spec, cfg, stop_tol=None, max_outer=200, start="sub"):
    """Run the monotone iteration from ``w`` (or from ``v`` with ``start='super'``).

    The first step walks down ``cfg``'s continuation schedule; later steps are
    warm-started at ``cfg.p`` directly.  Stops once the L1 increment drops to
    ``stop_tol`` (default ``1e-8 |Omega|``).  Returns ``(u, trace)``.
    """
    if start not in ("sub", "super"):
        raise ValueError("start must be 'sub' or 'super'")
    grid = pair.grid
    check_order(pair.w, pair.v)
    if stop_tol is None:
        stop_tol = 1e-8 * grid.volume
    direction = 1.0 if start == "sub" else -1.0
    u = pair.w if start == "sub" else pair.v
    trace = IterationTrace()
    trace.record(0, u, np.zeros(grid.interior.shape), 0, pair.w, pair.v, direction)
    warm_cfg = cfg.at(cfg.p)
    for n in range(1, max_outer + 1):
        rep = step(u, spec, cfg if n == 1 else warm_cfg)
        if not rep.usable:
            raise InnerSolveError(f"inner solve {n} stopped at residual {rep.grad_norm:.3g}", rep, trace)
        increment = rep.u.values - u.values
        u = rep.u
        trace.record(n, u, increment, rep.iterations, pair.w, pair.v, direction)
        if trace.monotone_defect < -ABORT_TOL:
            raise MonotonicityError(f"step {n} decreased by {-trace.monotone_defect:.3g}", trace)
        if trace.rows[-1]["L1_increment"] <= stop_tol:
            trace.converged = True
            break
    return u, trace


def certificate_sweep(u, spec, cfg, schedule=None):
    """Continuation on the final iterate: certificate diagnostics per ``p``.

    Re-solves the last step with the load frozen at ``u`` for each ``p`` in
    ``schedule`` (default: ``cfg.p`` followed by the smaller entries of the
    default continuation) and reports the source residual, the sup of the
    projected flux and the pairing and boundary defects.
    """
    if schedule is None:
        schedule = (cfg.p,) + tuple(q for q in (1.02, 1.01) if q < cfg.p)
    load = ScalarField.from_interior(u.grid, spec.source(u.interior_values))
    absorb = AbsorptionSpec(spec.l, "increasing")
    cur = u.with_zero_trace()
    out = []
    for p in schedule:
        rep = solve(PlapConfig(p, cfg.delta, cfg.tol_grad, cfg.max_iters), absorb, load, cur)
        cur = rep.u
        res, z = _source_residual(cur, spec, p, cfg.delta)
        zp = project_unit(z)
        out.append(
            {
                "p": float(p),
                "usable": rep.usable,
                "residual_l1": lebesgue_norm(res, cur.grid.cell_volume, 1),
                "z_sup": zp.sup_norm(),
                "pairing": pairing_defect(zp, cur, cfg.delta),
                "boundary": boundary_defect(zp, cur, "inner", "flux", cfg.delta),
            }
        )
    return cur, out


def linf_threshold(spec, pair, consts):
    """Predicted uniform bound ``k*`` on every iterate.

    With ``Ft = max(|F + l|(w), |F + l|(v))`` pick the smallest level ``h`` for
    which ``||Ft 1{Ft > h}||_N S_1 < 1`` and return the smallest ``k`` with
    ``|l(x, s)| >= h`` for all ``|s| >= k`` (states outside the domain of ``l``
    count as satisfying the bound).
    """
    grid = pair.grid
    ft = np.maximum(np.abs(spec.source(pair.w.interior_values)), np.abs(spec.source(pair.v.interior_values)))
    ft = np.broadcast_to(ft, (grid.n_interior,))
    if not np.all(np.isfinite(ft)):
        raise ContractError("F + l is not finite on the ordered pair; no level h makes the tail small")
    n = consts.n
    vol = grid.cell_volume
    srt = np.sort(ft)
    # tail[i] = sum of ft^n over the entries strictly above srt[i]
    powers = srt**n
    suffix = np.concatenate([np.cumsum(powers[::-1])[::-1], [0.0]])
    candidates = np.concatenate([[0.0], srt])
    level = None
    for h in candidates:
        above = np.searchsorted(srt, h, side="right")
        if (suffix[above] * vol) ** (1.0 / n) * consts.s1 < 1.0:
            level = float(h)
            break
    if level is None:
        raise ContractError("no finite level h makes the tail norm small")
    if level == 0.0:
        return 0.0

    def reaches(k):
        lo = spec.l.value(np.full(grid.n_interior, k))
        hi = -spec.l.value(np.full(grid.n_interior, -k))
        lo = np.where(np.isfinite(lo), lo, np.inf)
        hi = np.where(np.isfinite(hi), hi, np.inf)
        return float(min(np.min(lo), np.min(hi))) >= level

    top = 1.0
    while not reaches(top):
        top *= 2.0
        if top > 1e300:
            raise ContractError("l does not reach the level h")
    bottom = 0.0
    for _ in range(200):
        mid = 0.5 * (bottom + top)
        if mid in (bottom, top):
            break
        if reaches(mid):
            top = mid
        else:
            bottom = mid
    return top
