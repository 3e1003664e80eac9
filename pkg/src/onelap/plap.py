"""
Regularized p-Laplacian solver for ``-div(|grad u|_d^(p-2) grad u) + l(x, u) = f``
with homogeneous Dirichlet data, where ``|g|_d = sqrt(|g|^2 + d^2)``.

The discrete problem is the minimization of

    E(u) = h^N [ (1/p) sum (|grad u|_d^p - d^p) + sum L(x, u) - sum f u ]

over interior values, with ``L`` the primitive of ``l``.  ``E`` is convex for
``p > 1`` and non-decreasing ``l``; we run damped Newton with Armijo
backtracking and fall back to a Jacobi-scaled gradient step when the Newton
direction is rejected.  The Euler-Lagrange residual is ``grad E / h^N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import ScalarField
from .nonlin import Linear, as_term

DEFAULT_SCHEDULE = (2.0, 1.5, 1.2, 1.1, 1.05, 1.02, 1.01)


class ContractError(ValueError):
    """Input violates a documented precondition."""


class SolverBreakdown(RuntimeError):
    """Iterates became non-finite."""


@dataclass(frozen=True)
class PlapConfig:
    p: float = 1.05
    delta: float = 1e-6
    tol_grad: float = 1e-10
    max_iters: int = 500
    continuation: tuple | None = None
    # residual target for the intermediate continuation stages
    stage_tol: float = 1e-6

    def __post_init__(self):
        if not self.p > 1:
            raise ContractError(f"p must exceed 1, got {self.p}")
        if not self.delta >= 0:
            raise ContractError("delta must be non-negative")
        if not self.tol_grad > 0:
            raise ContractError("tol_grad must be positive")
        if self.continuation is not None:
            sched = tuple(float(q) for q in self.continuation)
            if any(q <= 1 for q in sched) or any(b >= a for a, b in zip(sched, sched[1:])):
                raise ContractError("continuation must be strictly decreasing and > 1")
            object.__setattr__(self, "continuation", sched)

    def schedule(self):
        """p values to visit, ending at ``self.p``."""
        if self.continuation is None:
            return (self.p,)
        head = tuple(q for q in self.continuation if q > self.p)
        return head + (self.p,)

    def at(self, p, tol=None):
        return PlapConfig(p, self.delta, self.tol_grad if tol is None else tol, self.max_iters, None, self.stage_tol)


@dataclass
class AbsorptionSpec:
    """Absorption ``l(x, s)`` with the monotonicity flags the solver relies on."""

    l: object = None
    l_monotone: str = "non-decreasing"
    l_coercive: bool = False
    sample: tuple = (-4.0, 4.0)

    def __post_init__(self):
        self.l = as_term(self.l)
        if self.l_monotone not in ("non-decreasing", "increasing"):
            raise ContractError("l_monotone must be 'non-decreasing' or 'increasing'")

    def check(self, n_cells):
        """Sample ``l`` on a lattice of s values and verify the declared flags."""
        s = np.linspace(*self.sample, 41)
        vals = np.array([np.broadcast_to(self.l.value(np.full(n_cells, si)), (n_cells,)) for si in s])
        ok = np.all(np.isfinite(vals), axis=1)
        vals, s = vals[ok], s[ok]
        diff = np.diff(vals, axis=0)
        if self.l_monotone == "increasing" and np.any(diff <= 0):
            raise ContractError("l is not increasing on the sample lattice")
        if np.any(diff < -1e-12 * (1 + np.abs(vals[:-1]))):
            raise ContractError("l is decreasing somewhere on the sample lattice")
        if self.l_coercive and np.any(vals * s[:, None] < 0):
            raise ContractError("l(x, s) s < 0 somewhere on the sample lattice")


@dataclass
class SolveReport:
    u: ScalarField
    energy_trace: list
    grad_norm: float
    iterations: int
    converged: bool
    p: float = float("nan")
    stages: list = field(default_factory=list)
    fallback_steps: int = 0
    # stopped above tol_grad because steps fell to roundoff size in u
    roundoff_limited: bool = False

    @property
    def usable(self):
        return self.converged or self.roundoff_limited

    def to_text(self):
        lines = [
            f"p: {self.p!r}",
            f"converged: {str(self.converged).lower()}",
            f"iterations: {self.iterations}",
            f"grad_norm: {self.grad_norm!r}",
            f"fallback_steps: {self.fallback_steps}",
            f"roundoff_limited: {str(self.roundoff_limited).lower()}",
            f"final_energy: {self.energy_trace[-1]!r}" if self.energy_trace else "final_energy: nan",
            f"stages: {len(self.stages)}",
        ]
        for st in self.stages:
            lines.append(
                f"stage.{st['p']!r}: iterations={st['iterations']} grad_norm={st['grad_norm']!r} "
                f"converged={str(st['converged']).lower()}"
            )
        return "\n".join(lines) + "\n"


# -- discrete energy --------------------------------------------------------


class _Problem:
    """Everything a solve needs on interior-cell vectors."""

    def __init__(self, grid, p, delta, l, f_vec):
        self.grid = grid
        self.p = float(p)
        self.delta = float(delta)
        self.l = l
        self.f = f_vec
        self.G = grid.gradient_matrix
        self.GT = self.G.T.tocsr()
        self.dim = grid.dim
        self.vol = grid.cell_volume

    def grads(self, x):
        return (self.G @ x).reshape(self.dim, -1)

    def energy(self, x):
        g = self.grads(x)
        r2 = np.sum(g * g, axis=0) + self.delta**2
        p = self.p
        tv = np.sum(r2 ** (p / 2) - self.delta**p) / p
        lower = np.sum(self.l.primitive(x))
        return float((tv + lower - np.dot(self.f, x)) * self.vol)

    def flux(self, x):
        """``|grad u|_d^(p-2) grad u`` per gradient cell."""
        g = self.grads(x)
        r2 = np.sum(g * g, axis=0) + self.delta**2
        with np.errstate(divide="ignore"):
            a = np.where(r2 > 0, r2 ** ((self.p - 2) / 2), 0.0)
        return a * g

    def residual(self, x):
        """Euler-Lagrange residual ``-div(flux) + l(u) - f`` on interior cells."""
        return self.GT @ self.flux(x).ravel() + self.l.value(x) - self.f

    def unit_flux(self, x):
        g = self.grads(x)
        r = np.sqrt(np.sum(g * g, axis=0) + self.delta**2)
        return g / np.maximum(r, 1e-300)

    def hessian(self, x, dual=None):
        """Newton matrix ``G^T B G + diag(l')``.

        With ``dual = grad u / |grad u|_d`` this is the exact Hessian.  A
        separately tracked dual (kept in the unit ball) gives the symmetrized
        primal-dual metric, which tames the zig-zag of plain Newton where the
        gradient is nearly flat.
        """
        g = self.grads(x)
        r2 = np.sum(g * g, axis=0) + self.delta**2
        # the metric blows up where the gradient and delta both vanish
        r2 = np.maximum(r2, 1e-24)
        r = np.sqrt(r2)
        a = r2 ** ((self.p - 2) / 2)
        gh = g / r
        wh = gh if dual is None else dual
        c = 2 - self.p
        d = self.dim
        blocks = [[None] * d for _ in range(d)]
        for i in range(d):
            for j in range(d):
                w = -0.5 * c * a * (wh[i] * gh[j] + gh[i] * wh[j])
                if i == j:
                    w = w + a
                blocks[i][j] = sp.diags(w)
        W = sp.bmat(blocks, format="csr")
        H = self.GT @ W @ self.G
        H = H + sp.diags(self.l.curvature(x))
        return H.tocsr()

    def dual_update(self, x_old, dual, dx):
        """Linearized update of the unit flux, projected cellwise onto the unit ball."""
        g = self.grads(x_old)
        r = np.sqrt(np.maximum(np.sum(g * g, axis=0) + self.delta**2, 1e-24))
        dg = (self.G @ dx).reshape(self.dim, -1)
        new = dual + (dg - dual * np.sum(g * dg, axis=0) / r - (dual * r - g)) / r
        return new / np.maximum(1.0, np.sqrt(np.sum(new * new, axis=0)))


def _direct_threshold(dim):
    return 250_000 if dim == 2 else 12_000


def _newton_direction(H, rhs, dim, gnorm):
    n = H.shape[0]
    if n <= _direct_threshold(dim):
        return spla.spsolve(H.tocsc(), rhs)
    import pyamg

    # 'local' weighting avoids pyamg's randomly started spectral radius estimate, keeping runs reproducible
    ml = pyamg.smoothed_aggregation_solver(
        H, symmetry="symmetric", max_coarse=500, smooth=("jacobi", {"omega": 4.0 / 3.0, "weighting": "local"})
    )
    # loose forcing terms stall the damped phase at p near 1; AMG makes tight ones cheap
    rtol = min(1e-6, max(1e-12, gnorm))
    d, _ = spla.cg(H, rhs, rtol=rtol, maxiter=400, M=ml.aspreconditioner())
    return d


def _minimize(prob, x0, tol, max_iters, trace):
    """Damped primal-dual Newton on ``prob.energy``.

    Appends accepted energies to ``trace``.  Stops at ``tol``, at
    ``max_iters``, when no direction is accepted, or when the residual has
    hit its roundoff floor (no progress for several steps at constant energy).
    """
    x = x0.copy()
    E = prob.energy(x)
    if not math.isfinite(E):
        raise ContractError("initial guess has infinite energy")
    trace.append(E)
    res = prob.residual(x)
    if not np.all(np.isfinite(res)):
        raise ContractError("initial guess is outside the domain of l")
    gnorm = float(np.max(np.abs(res))) if res.size else 0.0
    dual = prob.unit_flux(x)
    it = fallbacks = stalled = 0
    best = gnorm
    last_step = newton_size = np.inf
    vol = prob.vol
    while gnorm > tol and it < max_iters:
        it += 1
        accepted = False
        for kind in ("newton", "gradient"):
            H = prob.hessian(x, dual)
            if kind == "newton":
                try:
                    d = _newton_direction(H, -res, prob.dim, gnorm)
                except Exception:
                    continue
                if not np.all(np.isfinite(d)):
                    continue
                newton_size = float(np.max(np.abs(d), initial=0.0))
            else:
                diag = H.diagonal()
                d = -res / np.where(diag > 0, diag, 1.0)
                fallbacks += 1
            slope = float(np.dot(res, d)) * vol
            if not slope < 0:
                continue
            t = 1.0
            slack = 1e-13 * max(1.0, abs(E))
            while t > 1e-12:
                xn = x + t * d
                En = prob.energy(xn)
                if math.isfinite(En):
                    if En <= E + 1e-4 * t * slope:
                        accepted = True
                    elif En <= E + slack:
                        # below energy resolution: accept only if the residual improves
                        rn = prob.residual(xn)
                        if np.all(np.isfinite(rn)) and np.max(np.abs(rn)) < gnorm:
                            accepted = True
                if accepted:
                    break
                t *= 0.5
            if accepted:
                break
        if not accepted:
            # a rejected but roundoff-sized Newton step means we are at the floor
            last_step = min(last_step, newton_size)
            break
        if not np.all(np.isfinite(xn)):
            raise SolverBreakdown("NaN or Inf in iterate")
        if kind == "newton" and t >= 1e-2:
            dual = prob.dual_update(x, dual, t * d)
        else:
            dual = prob.unit_flux(xn)
        dE = E - En
        last_step = float(np.max(np.abs(xn - x)))
        x, E = xn, En
        trace.append(E)
        res = prob.residual(x)
        if not np.all(np.isfinite(res)):
            raise SolverBreakdown("NaN or Inf in residual")
        gnorm = float(np.max(np.abs(res)))
        if gnorm < 0.5 * best:
            best, stalled = gnorm, 0
        elif dE <= 1e-14 * max(1.0, abs(E)):
            stalled += 1
            if stalled >= 6:
                break
    floor = gnorm > tol and it < max_iters and last_step <= 1e-9 * max(1.0, float(np.max(np.abs(x), initial=0.0)))
    return x, gnorm, it, fallbacks, floor


def _interior(field, grid, name):
    if not field.grid.same_as(grid):
        raise ContractError(f"{name} lives on a different grid")
    return field.interior_values


def _check_trace(u, name="u"):
    if not u.has_zero_trace():
        raise ContractError(f"{name} must vanish on the boundary collar")


def energy(u, cfg, spec, f):
    """Discrete regularized energy of ``u`` (which must have zero trace)."""
    _check_trace(u)
    grid = u.grid
    prob = _Problem(grid, cfg.p, cfg.delta, spec.l, _interior(f, grid, "f"))
    return prob.energy(u.interior_values)


def residual(u, cfg, spec, f):
    """Euler-Lagrange residual as a field (zero on the collar)."""
    grid = u.grid
    prob = _Problem(grid, cfg.p, cfg.delta, spec.l, _interior(f, grid, "f"))
    return ScalarField.from_interior(grid, prob.residual(u.interior_values))


def solve(cfg, spec, f, u0=None):
    """Minimize the energy, walking down ``cfg.schedule()`` with warm starts.

    Intermediate stages stop at ``max(cfg.stage_tol, cfg.tol_grad)``; the final
    stage at ``cfg.tol_grad``.  Hitting ``max_iters`` gives a report with
    ``converged = False`` rather than an exception.
    """
    grid = f.grid
    fv = f.interior_values
    if not np.all(np.isfinite(fv)):
        raise ContractError("load f must be finite")
    if u0 is None:
        x = np.zeros(grid.n_interior)
    else:
        _check_trace(u0, "u0")
        x = _interior(u0, grid, "u0").copy()
    sched = cfg.schedule()
    stages = []
    trace = []
    total_it = total_fb = 0
    for i, p in enumerate(sched):
        last = i == len(sched) - 1
        tol = cfg.tol_grad if last else max(cfg.stage_tol, cfg.tol_grad)
        prob = _Problem(grid, p, cfg.delta, spec.l, fv)
        stage_trace = []
        x, gnorm, it, fb, floor = _minimize(prob, x, tol, cfg.max_iters, stage_trace)
        stages.append({"p": p, "iterations": it, "grad_norm": gnorm, "converged": gnorm <= tol})
        total_it += it
        total_fb += fb
        if last:
            trace = stage_trace
    u = ScalarField.from_interior(grid, x)
    return SolveReport(
        u=u,
        energy_trace=trace,
        grad_norm=gnorm,
        iterations=total_it,
        converged=gnorm <= cfg.tol_grad,
        p=sched[-1],
        stages=stages,
        fallback_steps=total_fb,
        roundoff_limited=bool(floor),
    )


def stampacchia_levels(u, f=None, cfg=None, levels=None, n_levels=32):
    """Measures of the superlevel sets ``{|u| > k}`` and the empirical bound.

    ``f`` and ``cfg`` are accepted for symmetry with the solver calls and are
    unused.  Returns ``(pairs, k_bound)`` where ``k_bound`` is the smallest
    listed level whose superlevel set is empty.
    """
    a = np.abs(u.interior_values)
    top = float(a.max()) if a.size else 0.0
    if levels is None:
        levels = np.linspace(0.0, top, n_levels + 1)[1:] if top > 0 else np.array([1.0])
    levels = np.sort(np.asarray(levels, dtype=float))
    srt = np.sort(a)
    counts = a.size - np.searchsorted(srt, levels, side="right")
    vol = u.grid.cell_volume
    pairs = [(float(k), float(c * vol)) for k, c in zip(levels, counts)]
    empty = [k for k, m in pairs if m == 0.0]
    return pairs, (empty[0] if empty else float("inf"))


def gradient_check(cfg, spec, f, u, n_dirs=20, step=1e-5, seed=0):
    """Compare the analytic energy gradient with central differences.

    Returns ``(error, applicable)``.  The error is the largest
    ``|fd - <grad E, d>| / (|grad E| |d|)`` over ``n_dirs`` random unit
    directions.  With ``delta = 0`` and a (near) vanishing discrete gradient
    somewhere the energy is not differentiable there and ``applicable`` is
    False.
    """
    _check_trace(u)
    grid = u.grid
    prob = _Problem(grid, cfg.p, cfg.delta, spec.l, _interior(f, grid, "f"))
    x = u.interior_values
    applicable = True
    if cfg.delta == 0:
        mag = np.sqrt(np.sum(prob.grads(x) ** 2, axis=0))
        if np.any(mag <= 1e-8 * max(1.0, mag.max(initial=0.0))):
            applicable = False
    grad = prob.residual(x) * prob.vol
    rng = np.random.default_rng(seed)
    worst = 0.0
    gn = np.linalg.norm(grad)
    for _ in range(n_dirs):
        d = rng.standard_normal(x.size)
        d /= np.linalg.norm(d)
        fd = (prob.energy(x + step * d) - prob.energy(x - step * d)) / (2 * step)
        an = float(np.dot(grad, d))
        worst = max(worst, abs(fd - an) / max(gn, 1e-300))
    return worst, applicable


def radial_load(grid, mass, center=None):
    """``mass / |x - center|`` at cell centers, with radius clamped at ``h/2``."""
    r = grid.radius_from(center)
    return ScalarField(grid, np.where(grid.interior, mass / np.maximum(r, grid.spacing / 2), 0.0))


def identity_absorption():
    """``l(x, s) = s``: increasing and coercive."""
    return AbsorptionSpec(Linear(1.0), "increasing", True)
