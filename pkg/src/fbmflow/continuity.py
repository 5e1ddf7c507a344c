"""Measure transport by particles.

Positive measures ride the perturbed flow as weighted atoms: push-forward
is exact on atoms, weights never change, and comparisons against grid
densities happen only through integrals of smooth test functions.  The
finite-volume oracle is the one place a density appears.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .drifts import DriftField
from .fbm import FbmPath
from .flow import _euler_transformed
from .grids import TimeGrid
from .transport import GridFunction, SpaceGrid

__all__ = [
    "ParticleEnsemble",
    "push_forward",
    "test_integral",
    "from_density",
    "fv_reference",
    "pairwise_sum",
    "write_ensemble_csv",
    "read_ensemble_csv",
    "write_comparison_csv",
]


def pairwise_sum(values: np.ndarray) -> float:
    """Fixed-tree pairwise reduction; the summation order never depends on
    anything but the length, so reruns agree bitwise."""
    vals = np.asarray(values, dtype=float).ravel().copy()
    n = vals.size
    if n == 0:
        return 0.0
    while n > 1:
        half = n // 2
        vals[:half] += vals[n - half:n]
        n = n - half
    return float(vals[0])


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: np.ndarray       # (N, d)
    weights: np.ndarray         # (N,), nonnegative
    total_mass: float

    def __post_init__(self):
        if self.positions.ndim != 2 or self.weights.shape != (self.positions.shape[0],):
            raise ValueError("positions must be (N, d) with matching weights")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if self.total_mass != pairwise_sum(self.weights):
            raise ValueError("total_mass out of sync with the weights")

    @classmethod
    def create(cls, positions, weights) -> "ParticleEnsemble":
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        weights = np.asarray(weights, dtype=float)
        return cls(positions, weights, pairwise_sum(weights))

    @property
    def d(self) -> int:
        return self.positions.shape[1]


def push_forward(ens: ParticleEnsemble, b: DriftField, path: FbmPath,
                 t: float, n_steps: int) -> ParticleEnsemble:
    """Advance every atom along the perturbed flow up to time t.

    Positions move, weights are copied untouched, so the mass identity is
    bitwise.  The drift is evaluated in transformed coordinates inside the
    Euler sweep; the noise contributes its exact increments.
    """
    if not (path.grid.t0 <= t <= path.grid.horizon):
        raise ValueError(f"time {t} outside the path's span")
    if t == path.grid.t0:
        return ParticleEnsemble(ens.positions.copy(), ens.weights, ens.total_mass)
    tgrid = TimeGrid(path.grid.t0, t, n_steps)
    bvals = path.interp(tgrid.nodes)
    states = _euler_transformed(b, ens.positions, bvals, tgrid.nodes)
    return ParticleEnsemble(states[:, -1, :], ens.weights, ens.total_mass)


def test_integral(ens: ParticleEnsemble, phi) -> float:
    """Integral of phi against the atomic measure: sum of w_i phi(x_i)."""
    vals = np.asarray(phi(ens.positions), dtype=float)
    if vals.shape != (ens.positions.shape[0],):
        raise ValueError("phi must map (N, d) positions to N values")
    return pairwise_sum(ens.weights * vals)


test_integral.__test__ = False      # keep pytest from collecting the API name


def from_density(density, lo, hi, counts) -> ParticleEnsemble:
    """Deterministic stratified sampling: one atom per cell midpoint,
    weight = density(midpoint) * cell volume."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    counts = np.atleast_1d(np.asarray(counts, dtype=int))
    if not (lo.shape == hi.shape == counts.shape):
        raise ValueError("lo, hi, counts must share a shape")
    if np.any(hi <= lo) or np.any(counts < 1):
        raise ValueError("need hi > lo and counts >= 1")
    axes = [lo[k] + (hi[k] - lo[k]) * (np.arange(counts[k]) + 0.5) / counts[k]
            for k in range(lo.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    cell = float(np.prod((hi - lo) / counts))
    w = np.asarray(density(pts), dtype=float) * cell
    if np.any(w < 0):
        raise ValueError("density must be nonnegative")
    return ParticleEnsemble.create(pts, w)


def fv_reference(density0, b_star: DriftField, tgrid: TimeGrid,
                 xgrid: SpaceGrid) -> GridFunction:
    """Conservative upwind solve of d_t rho + d_x(b* rho) = 0, d=1.

    Interface fluxes use the upwind cell; whatever crosses the outermost
    interfaces is gone (outflow) and is tracked in meta["outflow"] so the
    discrete mass balance closes exactly.
    """
    if xgrid.dim != 1:
        raise ValueError("the finite-volume reference is one-dimensional")
    dt = tgrid.dt
    h = xgrid.spacing
    cfl = dt * b_star.sup_norm / h
    if cfl > 0.9:
        raise ValueError(f"CFL number {cfl:.3f} exceeds 0.9; refine the time grid")
    x = xgrid.points()
    nx = xgrid.shape[0]
    # interface coordinates, including the two outer edges
    xi = np.concatenate(([x[0, 0] - 0.5 * h], 0.5 * (x[1:, 0] + x[:-1, 0]),
                         [x[-1, 0] + 0.5 * h]))[:, None]
    values = np.empty((tgrid.n_steps + 1, nx))
    values[0] = np.asarray(density0(x), dtype=float)
    outflow = 0.0
    for k in range(tgrid.n_steps):
        rho = values[k]
        a = b_star.evaluate(tgrid.nodes[k], xi)[:, 0]
        left = np.concatenate(([0.0], rho))     # ghost cells hold vacuum
        right = np.concatenate((rho, [0.0]))
        flux = np.maximum(a, 0.0) * left + np.minimum(a, 0.0) * right
        values[k + 1] = rho - (dt / h) * (flux[1:] - flux[:-1])
        outflow += dt * (max(flux[-1], 0.0) - min(flux[0], 0.0))
    return GridFunction(tgrid, xgrid, values,
                        {"scheme": "fv-upwind", "cfl": cfl, "outflow": outflow})


def write_ensemble_csv(ens: ParticleEnsemble, filepath) -> None:
    d = ens.d
    header = ",".join(["w"] + [f"x{k+1}" for k in range(d)])
    with open(filepath, "w", encoding="utf-8") as fh:
        fh.write(f"# total_mass={ens.total_mass!r}\n")
        fh.write(header + "\n")
        for w, pos in zip(ens.weights, ens.positions):
            fh.write(",".join([repr(float(w))] + [repr(float(v)) for v in pos]) + "\n")


def read_ensemble_csv(filepath) -> ParticleEnsemble:
    with open(filepath, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    body = [ln for ln in lines if ln and not ln.startswith("#") and not ln.startswith("w")]
    data = np.array([[float(v) for v in ln.split(",")] for ln in body])
    return ParticleEnsemble.create(data[:, 1:], data[:, 0])


def write_comparison_csv(rows, filepath) -> None:
    """rows: iterable of (phi_id, pushforward, reference) triples."""
    with open(filepath, "w", encoding="utf-8") as fh:
        fh.write("phi_id,pushforward,reference,rel_err\n")
        for phi_id, pf, ref in rows:
            rel = abs(pf - ref) / max(abs(ref), 1e-300)
            fh.write(f"{phi_id},{pf!r},{ref!r},{rel!r}\n")
