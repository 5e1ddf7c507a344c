"""Transport equation along rough characteristics.

The solution operator is exact composition: u(t, x) = u0 applied to the
backward characteristic through (t, x).  Everything else here is checking
apparatus: a weak-form residual against smooth test functions and an upwind
finite-difference reference for mollified drifts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drifts import DriftField
from .fbm import FbmPath
from .grids import TimeGrid

__all__ = [
    "SpaceGrid",
    "GridFunction",
    "TestPair",
    "bump_profile",
    "transformed_drift",
    "solve_transport",
    "weak_residual",
    "upwind_reference",
    "write_gridfunction_csv",
    "read_gridfunction_csv",
]


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform lattice: node k is origin + spacing * k, per axis."""

    origin: tuple
    spacing: float
    shape: tuple

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if len(self.origin) != len(self.shape) or not self.shape:
            raise ValueError("origin and shape must agree on the dimension")

    @property
    def dim(self) -> int:
        return len(self.shape)

    def axis_nodes(self, k: int) -> np.ndarray:
        return self.origin[k] + self.spacing * np.arange(self.shape[k])

    def points(self) -> np.ndarray:
        """All lattice points, shape (*shape, dim)."""
        axes = [self.axis_nodes(k) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def upper(self, k: int) -> float:
        return self.origin[k] + self.spacing * (self.shape[k] - 1)


@dataclass(frozen=True)
class GridFunction:
    tgrid: TimeGrid
    xgrid: SpaceGrid
    values: np.ndarray          # (n_t+1, *xgrid.shape)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        want = (self.tgrid.n_steps + 1,) + tuple(self.xgrid.shape)
        if self.values.shape != want:
            raise ValueError(f"values shape {self.values.shape} != {want}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function contains non-finite values")


def _bump01(y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    m = np.abs(y) < 1.0
    out[m] = np.exp(-1.0 / (1.0 - y[m] ** 2))
    return out


def _bump01_prime(y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    m = np.abs(y) < 1.0
    out[m] = np.exp(-1.0 / (1.0 - y[m] ** 2)) * (-2.0 * y[m] / (1.0 - y[m] ** 2) ** 2)
    return out


def bump_profile(center, width, amp: float = 1.0):
    """Smooth compact profile peaking at `center` with value `amp`.

    Returns a callable mapping points of shape (..., d) to scalars (...):
    the product over axes of normalized bumps supported on
    (center_k - width_k, center_k + width_k).  Useful as initial datum for
    the transport and continuity solvers.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    width = np.broadcast_to(np.asarray(width, dtype=float), center.shape)
    if np.any(width <= 0):
        raise ValueError("width must be positive")

    def profile(x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != center.size:
            raise ValueError(f"expected last axis {center.size}, got {x.shape}")
        y = (x - center) / width
        return amp * np.prod(math.e * _bump01(y), axis=-1)

    return profile


@dataclass(frozen=True)
class TestPair:
    """rho(t) eta(x): smooth, compactly supported, with analytic rho'.

    rho lives on (t_lo, t_hi) strictly inside (0, T); eta is a tensor
    product of bumps with per-axis center and width.
    """

    __test__ = False        # not a test case despite the name

    t_lo: float
    t_hi: float
    centers: tuple
    widths: tuple

    def __post_init__(self):
        if not self.t_lo < self.t_hi:
            raise ValueError("need t_lo < t_hi")
        if len(self.centers) != len(self.widths):
            raise ValueError("centers and widths must match")

    @property
    def dim(self) -> int:
        return len(self.centers)

    def rho(self, t):
        t = np.asarray(t, dtype=float)
        y = (2.0 * t - (self.t_lo + self.t_hi)) / (self.t_hi - self.t_lo)
        return _bump01(y)

    def rho_prime(self, t):
        t = np.asarray(t, dtype=float)
        y = (2.0 * t - (self.t_lo + self.t_hi)) / (self.t_hi - self.t_lo)
        return _bump01_prime(y) * (2.0 / (self.t_hi - self.t_lo))

    def eta(self, x):
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[:-1])
        for k in range(self.dim):
            out = out * _bump01((x[..., k] - self.centers[k]) / self.widths[k])
        return out

    def support_box(self):
        los = tuple(c - w for c, w in zip(self.centers, self.widths))
        his = tuple(c + w for c, w in zip(self.centers, self.widths))
        return los, his


def transformed_drift(b: DriftField, path: FbmPath) -> DriftField:
    """The drift seen after absorbing the noise: (t, x) -> b(t, x + B_t)."""
    if b.dim != path.d:
        raise ValueError("drift and path dimensions differ")

    def ev(t, x):
        shift = path.interp(np.asarray(t, dtype=float))
        return b.evaluate(t, x + shift)

    db = None
    if b._db is not None:
        def db(t, x):
            shift = path.interp(np.asarray(t, dtype=float))
            return b.db(t, x + shift)

    return DriftField(f"{b.name}*", b.dim, b.kind, b.sup_norm, b.l1_bound,
                      ev, db, params=dict(b.params, path_ref=f"{b.name}@{path.seed}"))


def _backward_points(b: DriftField, path: FbmPath, t: float, pts: np.ndarray,
                     n_steps: int) -> np.ndarray:
    """Vectorized inverse characteristics: dZ/ds = -b(t-s, Z + B_{t-s})."""
    z = pts.astype(float).copy()
    if n_steps == 0:
        return z
    ds = t / n_steps
    for k in range(n_steps):
        u = t - k * ds
        bu = path.interp(np.array(u))
        z = z - ds * b.evaluate(u, z + bu)
    return z


def solve_transport(u0, b: DriftField, path: FbmPath, tgrid: TimeGrid,
                    xgrid: SpaceGrid, n_steps: int) -> GridFunction:
    """u(t, x) = u0 at the foot of the backward characteristic through (t, x).

    Exact initial condition, exact maximum principle: every value is u0
    evaluated somewhere.  Backward integration uses a step close to
    T/n_steps for every output time.
    """
    pts = xgrid.points()
    n_t = tgrid.n_steps
    T = tgrid.horizon
    values = np.empty((n_t + 1,) + tuple(xgrid.shape))
    values[0] = u0(pts)
    for i in range(1, n_t + 1):
        t = tgrid.nodes[i]
        steps = max(1, int(round(n_steps * (t - tgrid.t0) / (T - tgrid.t0))))
        feet = _backward_points(b, path, t, pts, steps)
        values[i] = u0(feet)
    return GridFunction(tgrid, xgrid, values,
                        {"scheme": "characteristics", "n_steps": n_steps})


def weak_residual(u: GridFunction, b_star: DriftField, pair: TestPair) -> float:
    """Quadrature of the weak form against rho(t) eta(x).

    integral of -u rho' eta + (b* . grad u) rho eta over time and space,
    trapezoid in every direction, grad u by centered differences.  Vanishes
    under refinement when u solves the transport equation weakly.
    """
    xg = u.xgrid
    if pair.dim != xg.dim:
        raise ValueError("test pair dimension does not match the grid")
    los, his = pair.support_box()
    for k in range(xg.dim):
        if los[k] < xg.origin[k] or his[k] > xg.upper(k):
            raise ValueError(f"test support escapes the lattice on axis {k}")
    pts = xg.points()
    eta = pair.eta(pts)
    nodes = u.tgrid.nodes
    rho = pair.rho(nodes)
    rho_p = pair.rho_prime(nodes)
    h = xg.spacing

    space_terms = np.empty(nodes.size)
    for i, t in enumerate(nodes):
        ui = u.values[i]
        grad = np.stack(np.gradient(ui, h), axis=-1) if xg.dim > 1 else \
            np.gradient(ui, h)[..., None]
        bvals = b_star.evaluate(t, pts)
        adv = np.einsum("...k,...k->...", bvals, grad)
        integrand = -ui * rho_p[i] * eta + adv * rho[i] * eta
        # trapezoid over the lattice
        for _ in range(xg.dim):
            integrand = np.trapezoid(integrand, dx=h, axis=-1)
        space_terms[i] = integrand
    return float(np.trapezoid(space_terms, dx=u.tgrid.dt))


def upwind_reference(u0, b_star: DriftField, tgrid: TimeGrid,
                     xgrid: SpaceGrid) -> GridFunction:
    """First-order upwind solution of u_t + b* u_x = 0, outflow boundary.

    Independent of the characteristics machinery: marches the PDE forward
    in time on the lattice.  d=1 only; the acceptance comparisons live
    there.
    """
    if xgrid.dim != 1:
        raise ValueError("the upwind reference is one-dimensional")
    dt = tgrid.dt
    h = xgrid.spacing
    cfl = dt * b_star.sup_norm / h
    if cfl > 0.9:
        raise ValueError(f"CFL number {cfl:.3f} exceeds 0.9; refine the time grid")
    x = xgrid.points()          # (nx, 1)
    nx = xgrid.shape[0]
    n_t = tgrid.n_steps
    values = np.empty((n_t + 1, nx))
    values[0] = u0(x)
    for k in range(n_t):
        uk = values[k]
        a = b_star.evaluate(tgrid.nodes[k], x)[:, 0]
        dm = np.empty(nx)
        dm[1:] = (uk[1:] - uk[:-1]) / h
        dm[0] = 0.0             # outflow: no upwind cell beyond the edge
        dp = np.empty(nx)
        dp[:-1] = (uk[1:] - uk[:-1]) / h
        dp[-1] = 0.0
        values[k + 1] = uk - dt * (np.maximum(a, 0.0) * dm + np.minimum(a, 0.0) * dp)
    return GridFunction(tgrid, xgrid, values, {"scheme": "upwind", "cfl": cfl})


def write_gridfunction_csv(u: GridFunction, filepath) -> None:
    d = u.xgrid.dim
    header = ",".join(["t"] + [f"x{k+1}" for k in range(d)] + ["u"])
    pts = u.xgrid.points().reshape(-1, d)
    with open(filepath, "w", encoding="utf-8") as fh:
        fh.write(f"# scheme={u.meta.get('scheme', 'unknown')}\n")
        fh.write(f"# t0={u.tgrid.t0!r} horizon={u.tgrid.horizon!r} n_t={u.tgrid.n_steps}\n")
        fh.write(f"# origin={','.join(repr(float(v)) for v in u.xgrid.origin)}"
                 f" spacing={u.xgrid.spacing!r}"
                 f" shape={','.join(str(v) for v in u.xgrid.shape)}\n")
        fh.write(header + "\n")
        for i, t in enumerate(u.tgrid.nodes):
            flat = u.values[i].reshape(-1)
            for p, val in zip(pts, flat):
                row = ",".join([repr(float(t))] + [repr(float(c)) for c in p]
                               + [repr(float(val))])
                fh.write(row + "\n")


def read_gridfunction_csv(filepath) -> GridFunction:
    meta = {}
    with open(filepath, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    data_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            for chunk in line[1:].strip().split(" "):
                if "=" in chunk:
                    key, val = chunk.split("=", 1)
                    meta[key] = val
        else:
            data_start = i
            break
    tgrid = TimeGrid(float(meta["t0"]), float(meta["horizon"]), int(meta["n_t"]))
    origin = tuple(float(v) for v in meta["origin"].split(","))
    shape = tuple(int(v) for v in meta["shape"].split(","))
    xgrid = SpaceGrid(origin, float(meta["spacing"]), shape)
    body = lines[data_start + 1:]
    vals = np.array([float(line.rstrip("\n").split(",")[-1]) for line in body])
    values = vals.reshape((tgrid.n_steps + 1,) + shape)
    return GridFunction(tgrid, xgrid, values, {"scheme": meta.get("scheme", "unknown")})
