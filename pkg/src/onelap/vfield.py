"""Certificate vector fields and the penalized approximation of a 1-harmonic candidate.

A certificate for ``-div(Du/|Du|) = f`` is a bounded field ``z`` with
``|z| <= 1``, ``-div z = f``, ``z . grad u = |grad u|`` and the weak boundary
condition ``|u| + u [z, nu] = 0``.  The discrete surrogates below measure how
far a grid field is from each of these.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import ScalarField, VectorField, divergence, gradient, lebesgue_norm
from .nonlin import ShiftedPower
from .plap import AbsorptionSpec, ContractError, PlapConfig, solve


class InvalidCertificate(ValueError):
    """The candidate field exceeds the unit ball by more than the allowed slack."""


def flux_field(u, p, delta):
    """``|grad u|_delta^(p-2) grad u`` on the faces of ``u``'s grid."""
    g = gradient(u)
    r = np.sqrt(np.sum(g.components**2, axis=0) + delta**2)
    with np.errstate(divide="ignore"):
        a = np.where(r > 0, r ** (p - 2.0), 0.0)
    return VectorField(u.grid, a * g.components)


def project_unit(z):
    """Cellwise radial projection onto the closed unit ball."""
    mag = z.magnitude()
    return VectorField(z.grid, z.components / np.maximum(1.0, mag))


def certificate_field(u, p, delta):
    """Projected flux: the bounded stand-in for ``Du/|Du|`` built from a p-solution."""
    return project_unit(flux_field(u, p, delta))


def _gradient_cell_values(grid, arr):
    return arr.ravel()[grid.gradient_cells]


def pairing_defect(z, u, delta=0.0):
    """``sum (|grad u|_delta - z . grad u) h^N``; zero iff ``z`` is aligned with ``grad u``."""
    if not z.grid.same_as(u.grid):
        raise ContractError("z and u live on different grids")
    if z.sup_norm() > 1.0 + 10.0 * delta + 1e-12:
        raise InvalidCertificate(f"|z| reaches {z.sup_norm():.6g} > 1 + 10 delta")
    g = gradient(u).components
    r = np.sqrt(np.sum(g * g, axis=0) + delta**2)
    dens = r - np.sum(z.components * g, axis=0)
    return float(np.sum(_gradient_cell_values(u.grid, dens)) * u.grid.cell_volume)


def _collar_faces(grid):
    """Yield ``(k, lower_cell_mask, inner_is_lower)`` for faces joining interior and collar."""
    interior, boundary = grid.interior, grid.boundary
    for k in range(grid.dim):
        up = np.roll(interior, -1, axis=k)
        upb = np.roll(boundary, -1, axis=k)
        # interior below, collar above: outward normal +e_k
        yield k, interior & upb, True
        # collar below, interior above: outward normal -e_k
        yield k, boundary & up, False


def boundary_flux(z):
    """Per collar face: outward normal component of ``z`` (the discrete ``[z, nu]``)."""
    out = []
    for k, mask, inner_low in _collar_faces(z.grid):
        zk = z.components[k][mask]
        out.append(zk if inner_low else -zk)
    return np.concatenate(out) if out else np.zeros(0)


def boundary_defect(z, u, trace="collar", weight="face", delta=0.0):
    """``sum over collar faces of (w |u| + u [z, nu]) h^(N-1)``.

    ``trace='collar'`` reads ``u`` on the collar cell (a pure mask filter).
    Dirichlet solutions vanish there and carry their boundary value as a jump
    across the face, so ``trace='inner'`` reads the interior cell instead.

    ``weight='face'`` uses ``w = 1``.  On a staircase boundary the jump of an
    oblique interface is shared between several faces of one cell, and the
    isotropic discrete TV charges each face only ``w = |g_k| / |g|_delta``
    where ``g`` is the discrete gradient of ``u`` at the cell owning the face.
    ``weight='flux'`` uses that share, so the defect of ``z = g / |g|_delta``
    vanishes up to ``O(delta)``.
    """
    if trace not in ("collar", "inner"):
        raise ValueError("trace must be 'collar' or 'inner'")
    if weight not in ("face", "flux"):
        raise ValueError("weight must be 'face' or 'flux'")
    grid = z.grid
    v = u.values
    if weight == "flux":
        g = gradient(u).components
        r = np.sqrt(np.sum(g * g, axis=0) + delta**2)
    total = 0.0
    for k, mask, inner_low in _collar_faces(grid):
        zk = z.components[k][mask]
        zn = zk if inner_low else -zk
        shifted = np.roll(v, -1, axis=k)[mask]
        lower = v[mask]
        inner_val, collar_val = (lower, shifted) if inner_low else (shifted, lower)
        t = collar_val if trace == "collar" else inner_val
        if weight == "flux":
            share = np.divide(np.abs(g[k][mask]), r[mask], out=np.ones_like(t), where=r[mask] > 0)
        else:
            share = 1.0
        total += float(np.sum(share * np.abs(t) + t * zn))
    return total * grid.spacing ** (grid.dim - 1)


# -- penalized minimization ---------------------------------------------------


@dataclass
class PenalizedProblem:
    u_target: ScalarField
    f: ScalarField
    eps: float
    n: int | None = None

    def __post_init__(self):
        if not 0 < self.eps <= 1:
            raise ContractError("eps must lie in (0, 1]")
        if not self.u_target.has_zero_trace():
            raise ContractError("u_target must vanish on the collar")
        if not np.all(np.isfinite(self.f.values)):
            raise ContractError("f must be finite")
        if self.n is None:
            self.n = self.u_target.grid.dim
        if self.n < 2:
            raise ContractError("dimension must be at least 2")

    @property
    def q(self):
        return self.n / (self.n - 1)


@dataclass
class DensityReport:
    u_eps: ScalarField
    z_eps: VectorField
    mu_eps: float
    tv_gap: float
    zq_norms: list
    fidelity_error: float
    divergence_error: float
    converged: bool
    grad_norm: float
    holder_bounds: list = field(default_factory=list)

    def to_text(self):
        lines = [
            f"mu_eps: {self.mu_eps!r}",
            f"tv_gap: {self.tv_gap!r}",
            f"fidelity_error: {self.fidelity_error!r}",
            f"divergence_error: {self.divergence_error!r}",
            f"converged: {str(self.converged).lower()}",
            f"grad_norm: {self.grad_norm!r}",
        ]
        lines += [f"zq_norm.{q:g}: {v!r}" for q, v in self.zq_norms]
        lines += [f"holder_bound.{q:g}: {v!r}" for q, v in self.holder_bounds]
        return "\n".join(lines) + "\n"


def total_variation(u, delta=0.0):
    """Isotropic discrete TV including the jump to the collar."""
    g = gradient(u).components
    r = np.sqrt(np.sum(g * g, axis=0) + delta**2) - delta
    return float(np.sum(_gradient_cell_values(u.grid, r)) * u.grid.cell_volume)


def penalized_minimize(prob, cfg, qs=(2, 4, 8, 16), u0=None):
    """Minimize ``1/(1+eps) sum |grad v|^(1+eps) + 1/q sum |v - u|^q - sum f v``.

    ``q = N/(N-1)``.  Uses ``cfg.delta``, ``cfg.tol_grad`` and
    ``cfg.continuation`` but overrides ``cfg.p`` with ``1 + eps``.
    """
    grid = prob.u_target.grid
    p = 1.0 + prob.eps
    sched = None
    if cfg.continuation:
        sched = tuple(s for s in cfg.continuation if s > p) or None
    run_cfg = PlapConfig(p, cfg.delta, cfg.tol_grad, cfg.max_iters, sched, cfg.stage_tol)
    target = prob.u_target.interior_values
    q = prob.q
    spec = AbsorptionSpec(ShiftedPower(target, q), "increasing")
    rep = solve(run_cfg, spec, prob.f, u0)
    u_eps = rep.u
    vol = grid.cell_volume
    mu = rep.energy_trace[-1] + float(np.sum(np.abs(target) ** q) / q * vol)
    z = flux_field(u_eps, p, cfg.delta)
    g = gradient(u_eps).components
    r = np.sqrt(np.sum(g * g, axis=0) + cfg.delta**2)
    grad_p = float(np.sum(_gradient_cell_values(grid, r**p)) * vol)
    tv_gap = grad_p - total_variation(prob.u_target)
    # the sums run over gradient cells, so Holder uses their measure
    measure = grid.gradient_cells.size * vol
    zq = [(float(qq), z.lq_norm(qq)) for qq in qs]
    # Holder bound of |z|^q = |grad|^(eps q) by the (1+eps)-energy, valid for eps q < 1 + eps
    holder = []
    for qq in qs:
        th = prob.eps * qq / p
        if th < 1:
            holder.append((float(qq), (grad_p**th * measure ** (1 - th)) ** (1 / qq)))
    fid = lebesgue_norm(u_eps.interior_values - target, vol, q)
    div_res = -divergence(z).values[grid.interior] - prob.f.interior_values
    div_err = lebesgue_norm(div_res, vol, prob.n)
    return DensityReport(
        u_eps=u_eps,
        z_eps=z,
        mu_eps=mu,
        tv_gap=tv_gap,
        zq_norms=zq,
        fidelity_error=fid,
        divergence_error=div_err,
        converged=rep.converged,
        grad_norm=rep.grad_norm,
        holder_bounds=holder,
    )
