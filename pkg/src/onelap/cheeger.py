"""Cheeger constant and first eigenvalue of the 1-Laplacian on grid domains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ScalarField, VectorField, divergence
from .plap import AbsorptionSpec, ContractError, solve
from .vfield import boundary_defect, flux_field, pairing_defect, project_unit, total_variation

N_THRESHOLDS = 64


def lambda1_ball(n, radius):
    """First 1-Laplace eigenvalue of a ball: ``n / radius``."""
    if int(n) != n or n < 2:
        raise ContractError("dimension must be an integer >= 2")
    if not radius > 0:
        raise ContractError("radius must be positive")
    return n / radius


def set_perimeter(grid, mask, perimeter="faces"):
    """Discrete perimeter of a cell set.

    ``'faces'`` counts faces between the set and its complement times
    ``h^(N-1)``.  ``'isotropic'`` is the discrete total variation of the
    indicator, consistent with the TV Rayleigh quotient.
    """
    mask = np.asarray(mask, dtype=bool)
    if perimeter == "faces":
        count = 0
        for k in range(grid.dim):
            pad = [(0, 0)] * grid.dim
            pad[k] = (1, 1)
            count += int(np.count_nonzero(np.diff(np.pad(mask, pad), axis=k)))
        return count * grid.spacing ** (grid.dim - 1)
    if perimeter == "isotropic":
        return total_variation(ScalarField(grid, mask.astype(float)))
    raise ValueError("perimeter must be 'faces' or 'isotropic'")


def cheeger_ratio(grid, set_mask, perimeter="faces"):
    """``P(E) / |E|`` for a cell set ``E`` inside the closed domain."""
    mask = np.asarray(set_mask, dtype=bool)
    if mask.shape != grid.shape:
        raise ContractError("mask shape does not match the grid")
    if not mask.any():
        raise ContractError("the set is empty")
    if np.any(mask & ~grid.closure):
        raise ContractError("the set leaves the closed domain")
    if perimeter == "isotropic" and np.any(mask & grid.boundary):
        raise ContractError("isotropic perimeter needs a set inside the open domain")
    return set_perimeter(grid, mask, perimeter) / (mask.sum() * grid.cell_volume)


@dataclass
class CheegerEstimate:
    lambda1: float
    method: str
    rayleigh_value: float
    superlevel_value: float = float("inf")
    candidate_set: np.ndarray | None = None
    eigenfunction: ScalarField | None = None
    p: float = float("nan")
    load: float = float("nan")
    converged: bool = False

    def to_text(self):
        return (
            f"lambda1: {self.lambda1!r}\n"
            f"method: {self.method}\n"
            f"rayleigh_value: {self.rayleigh_value!r}\n"
            f"superlevel_value: {self.superlevel_value!r}\n"
            f"p: {self.p!r}\n"
            f"load: {self.load!r}\n"
            f"converged: {str(self.converged).lower()}\n"
        )


def rayleigh_quotient(u):
    """``(TV(u) including the boundary jump) / sum |u| h^N``."""
    mass = float(np.sum(np.abs(u.interior_values)) * u.grid.cell_volume)
    if mass == 0:
        raise ContractError("Rayleigh quotient of the zero field")
    return total_variation(u) / mass


def superlevel_table(u, n_thresholds=N_THRESHOLDS, perimeter="faces"):
    """Rows ``(t, cells, ratio, mask)`` for ``{u > t}``, ``t`` uniform in ``[min u, max u)``.

    The lowest threshold takes the whole domain.
    """
    grid = u.grid
    x = np.where(grid.interior, u.values, -np.inf)
    lo, hi = float(u.interior_values.min()), float(u.interior_values.max())
    rows = []
    for t in np.linspace(lo, hi, n_thresholds, endpoint=False):
        mask = x > t if t > lo else grid.interior.copy()
        if mask.any():
            rows.append((float(t), int(mask.sum()), cheeger_ratio(grid, mask, perimeter), mask))
    return rows


def superlevel_sweep(u, n_thresholds=N_THRESHOLDS, perimeter="faces"):
    """Best ratio over the superlevel sets of ``u``; ties go to the larger set.

    Returns ``(ratio, mask)``.
    """
    best, best_mask = np.inf, None
    for _, cells, r, mask in superlevel_table(u, n_thresholds, perimeter):
        if r < best or (r == best and cells > best_mask.sum()):
            best, best_mask = r, mask
    return best, best_mask


def torsion(grid, load, cfg):
    """``-Delta_p u = load`` with zero boundary values."""
    f = ScalarField(grid, np.where(grid.interior, load, 0.0))
    return solve(cfg, AbsorptionSpec(None), f)


def estimate_lambda1(grid, cfg, perimeter="faces", n_thresholds=N_THRESHOLDS):
    """Estimate ``lambda_1`` from the p-torsion function at ``cfg.p``.

    The load starts at the isotropic ratio of the whole domain (an upper
    bound) and is reset once to the resulting Rayleigh quotient so that the
    torsion function is of unit order.  Then the superlevel sets of that
    function are swept.  ``lambda1`` is the smaller of the Rayleigh value
    and the best superlevel ratio.
    """
    load = cheeger_ratio(grid, grid.interior, "isotropic")
    rep = torsion(grid, load, cfg)
    if rep.u.interior_values.max() <= 0:
        raise ContractError("torsion function vanished; lower p or delta")
    ray = rayleigh_quotient(rep.u)
    load = ray
    rep = torsion(grid, load, cfg)
    ray = rayleigh_quotient(rep.u)
    sweep, mask = superlevel_sweep(rep.u, n_thresholds, perimeter)
    if sweep < ray:
        lam, method = sweep, "superlevel_sweep"
    else:
        lam, method = ray, "rayleigh_tv"
    return CheegerEstimate(
        lambda1=lam,
        method=method,
        rayleigh_value=ray,
        superlevel_value=sweep,
        candidate_set=mask,
        eigenfunction=rep.u,
        p=cfg.p,
        load=load,
        converged=rep.usable,
    )


def exact_ball_estimate(n, radius):
    lam = lambda1_ball(n, radius)
    return CheegerEstimate(lambda1=lam, method="exact_ball", rayleigh_value=lam, converged=True)


@dataclass
class EigenCertificate:
    residual: float
    pairing: float
    boundary: float
    z_sup: float

    def to_text(self):
        return (
            f"residual: {self.residual!r}\npairing: {self.pairing!r}\n"
            f"boundary: {self.boundary!r}\nz_sup: {self.z_sup!r}\n"
        )


def eigen_certificate(grid, estimate, cfg, z=None):
    """Defects of ``-div z = lambda_1``, ``(z, D phi) = |D phi|`` and the boundary condition.

    ``phi`` is the estimate's eigenfunction and ``z`` defaults to its
    projected flux at ``cfg.p``.  The residual is the mean of
    ``|div z + lambda_1|`` over the domain, so ``z = 0`` gives ``lambda_1``.
    """
    phi = estimate.eigenfunction
    if phi is None:
        phi = ScalarField(grid, grid.interior.astype(float))
    if z is None:
        z = project_unit(flux_field(phi, cfg.p, cfg.delta))
    elif not isinstance(z, VectorField):
        raise TypeError("z must be a VectorField")
    div = divergence(z).interior_values
    residual = float(np.sum(np.abs(div + estimate.lambda1)) * grid.cell_volume / grid.volume)
    return EigenCertificate(
        residual=residual,
        pairing=pairing_defect(z, phi, cfg.delta),
        boundary=boundary_defect(z, phi, "inner", "flux", cfg.delta),
        z_sup=z.sup_norm(),
    )
