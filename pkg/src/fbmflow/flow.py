"""Pathwise ODE solves along rough paths: forward and inverse flows,
Picard iteration, and derivative processes.

The perturbed equation is always integrated in transformed form.  With
Z = X - B the noise drops out of the derivative entirely, Z' = b(t, Z + B),
and explicit Euler on Z handles additive noise exactly: the path is never
differentiated and no stochastic integral is discretized.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._backend import kernel_values
from .drifts import DriftField
from .fbm import FbmPath
from .grids import TimeGrid

__all__ = [
    "Trajectory",
    "FlowField",
    "PicardNonConvergence",
    "solve_forward",
    "picard_solve",
    "inverse_flow",
    "flow_grid",
    "variational_derivative",
    "malliavin_derivative",
    "write_trajectory_csv",
    "write_flowfield_csv",
]


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    start: np.ndarray
    states: np.ndarray          # (n_steps+1, d), states[0] = start
    path_ref: str
    scheme: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.states.shape[0] != self.grid.n_steps + 1:
            raise ValueError("states do not match the grid")
        if not np.array_equal(self.states[0], self.start):
            raise ValueError("states[0] must equal the start point")

    @property
    def d(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class FlowField:
    xgrid: np.ndarray           # (m, d) start points
    tgrid: TimeGrid
    states: np.ndarray          # (m, n_steps+1, d)
    path_ref: str
    variational: np.ndarray | None = None   # (m, n_steps+1, d, d)
    malliavin: np.ndarray | None = None     # (m, n_thetas, n_steps+1, d, d)

    def trajectory(self, k: int) -> Trajectory:
        return Trajectory(self.tgrid, self.xgrid[k].copy(), self.states[k],
                          self.path_ref, {"scheme": "euler-transformed"})


class PicardNonConvergence(RuntimeError):
    """Fixed-point iteration hit max_iter; carries the evidence."""

    def __init__(self, message: str, last: "Trajectory", iterations: int, residual: float):
        super().__init__(message)
        self.last = last
        self.iterations = iterations
        self.residual = residual


def _path_ref(path: FbmPath) -> str:
    return f"{path.method}:H={path.hurst}:seed={path.seed}"


def _euler_transformed(drift: DriftField, x0: np.ndarray, bvals: np.ndarray,
                       nodes: np.ndarray) -> np.ndarray:
    """Euler for X' = b(t, X) + dB, batched over leading axes of x0.

    x0: (..., d); bvals: (n+1, d) or (..., n+1, d) noise values at nodes.
    Returns (..., n+1, d).  The increment of B is added exactly.
    """
    n = nodes.size - 1
    out = np.empty(x0.shape[:-1] + (n + 1, x0.shape[-1]))
    out[..., 0, :] = x0
    for k in range(n):
        dt = nodes[k + 1] - nodes[k]
        dB = bvals[..., k + 1, :] - bvals[..., k, :]
        x = out[..., k, :]
        out[..., k + 1, :] = x + dt * drift.evaluate(nodes[k], x) + dB
    return out


def solve_forward(drift: DriftField, x, s: float, path: FbmPath,
                  n_steps: int | None = None) -> Trajectory:
    """Integrate X_t = x + int_s^t b(u, X_u) du + (B_t - B_s) on [s, T]."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    T = path.grid.horizon
    if not (path.grid.t0 <= s < T):
        raise ValueError(f"start time {s} outside the path's span")
    if n_steps is None:
        # align with the tail of the path grid when s is a node
        n_steps = max(1, int(round((T - s) / path.grid.dt)))
    tgrid = TimeGrid(s, T, n_steps)
    bvals = path.interp(tgrid.nodes)
    states = _euler_transformed(drift, x, bvals, tgrid.nodes)
    scheme = {"scheme": "euler-transformed", "n_steps": n_steps}
    if isinstance(path.hurst, float):
        scheme["hurst"] = path.hurst
    return Trajectory(tgrid, x, states, _path_ref(path), scheme)


def picard_solve(drift: DriftField, x, path: FbmPath, init=None,
                 max_iter: int = 50, tol: float = 1e-10):
    """Fixed-point iteration Y <- x + int_0^. b(s, Y_s) ds + B.

    Quadrature is the left rectangle rule.  Stops when the sup-norm change
    drops below tol; raises PicardNonConvergence (with the last iterate and
    its fixed-point residual attached) when max_iter is exhausted.  For the
    unperturbed singular drifts that failure is the experiment's signal,
    not a bug.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grid = path.grid
    nodes = grid.nodes
    dt = grid.dt
    n = grid.n_steps
    noise = path.values - path.values[0]

    if init is None:
        Y = np.tile(x, (n + 1, 1)).astype(float)
    elif isinstance(init, Trajectory):
        Y = init.states.copy()
    else:
        Y = np.asarray(init, dtype=float).reshape(n + 1, x.size).copy()

    def apply_map(Y):
        bvals = drift.evaluate(nodes, Y)
        out = np.empty_like(Y)
        out[0] = x
        out[1:] = x + np.cumsum(bvals[:-1] * dt, axis=0) + noise[1:]
        return out

    iterations = 0
    converged = False
    for _ in range(max_iter):
        Ynew = apply_map(Y)
        change = float(np.max(np.abs(Ynew - Y)))
        Y = Ynew
        iterations += 1
        residual = float(np.max(np.abs(apply_map(Y) - Y)))
        if change < tol or residual < tol:
            converged = True
            break
    traj = Trajectory(grid, x, Y, _path_ref(path),
                      {"scheme": "picard-left-rect", "iterations": iterations})
    if not converged:
        raise PicardNonConvergence(
            f"no fixed point after {iterations} iterations (residual {residual:.3e})",
            traj, iterations, residual)
    return traj, iterations, residual


def inverse_flow(drift: DriftField, x, t: float, path: FbmPath,
                 n_steps: int) -> np.ndarray:
    """Starting point that the transformed forward flow maps to x at time t.

    Integrates dZ/ds = -b(t-s, Z + B_{t-s}), Z(0) = x over s in [0, t] by
    Euler and returns Z(t).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not (path.grid.t0 < t <= path.grid.horizon):
        raise ValueError(f"time {t} outside the path's span")
    ds = t / n_steps
    z = x.astype(float).copy()
    for k in range(n_steps):
        u = t - k * ds
        bu = path.interp(np.array(u))
        z = z - ds * drift.evaluate(u, z + bu)
    return z


def flow_grid(drift: DriftField, xgrid, path: FbmPath,
              n_steps: int | None = None,
              with_variational: bool = False) -> FlowField:
    """Forward solves from every start point, sharing one path."""
    xg = np.atleast_2d(np.asarray(xgrid, dtype=float))
    if xg.size == 0:
        raise ValueError("xgrid must be nonempty")
    s = path.grid.t0
    T = path.grid.horizon
    if n_steps is None:
        n_steps = path.grid.n_steps
    tgrid = TimeGrid(s, T, n_steps)
    bvals = path.interp(tgrid.nodes)
    states = _euler_transformed(drift, xg, bvals, tgrid.nodes)
    variational = None
    if with_variational:
        variational = np.empty((xg.shape[0], n_steps + 1, xg.shape[1], xg.shape[1]))
        for k in range(xg.shape[0]):
            traj = Trajectory(tgrid, xg[k].copy(), states[k], _path_ref(path))
            variational[k] = variational_derivative(drift, traj)
    return FlowField(xg, tgrid, states, _path_ref(path), variational)


def variational_derivative(drift: DriftField, traj: Trajectory) -> np.ndarray:
    """Jacobian of the flow in its start point, J' = Db(t, X_t) J, J(0) = I."""
    if drift.kind != "smooth":
        raise ValueError("variational derivative needs a smooth drift")
    n = traj.grid.n_steps
    d = traj.d
    nodes = traj.grid.nodes
    dt = traj.grid.dt
    J = np.empty((n + 1, d, d))
    J[0] = np.eye(d)
    for k in range(n):
        Db = drift.db(nodes[k], traj.states[k])
        J[k + 1] = J[k] + dt * Db @ J[k]
    return J


_GL32_X, _GL32_W = np.polynomial.legendre.leggauss(32)


def _kernel_cell_first_arg(H: float, lo: float, hi: float, theta: float) -> float:
    """int_lo^hi K(u, theta) du with lo >= theta.

    The integrand blows up like (u - theta)^(H - 1/2) as u -> theta, so the
    first cell is integrated in the variable v = (u - theta)^(H + 1/2),
    which flattens the singularity; later cells take plain Gauss-Legendre.
    """
    if lo > theta:
        u = lo + 0.5 * (hi - lo) * (_GL32_X + 1.0)
        vals = kernel_values(H, u, np.full_like(u, theta), gap=u - theta)
        return 0.5 * (hi - lo) * float(np.sum(_GL32_W * vals))
    a = H + 0.5
    vmax = (hi - theta) ** a
    v = 0.5 * vmax * (_GL32_X + 1.0)
    gap = v ** (1.0 / a)
    jac = (1.0 / a) * v ** (1.0 / a - 1.0)
    vals = kernel_values(H, theta + gap, np.full_like(gap, theta), gap=gap)
    return 0.5 * vmax * float(np.sum(_GL32_W * vals * jac))


def malliavin_derivative(drift: DriftField, traj: Trajectory, theta: float,
                         H: float | None = None) -> np.ndarray:
    """Sensitivity of the state to a Wiener-increment kick at time theta.

    Solves D_theta X_t = K(t, theta) I + int_theta^t Db(u, X_u) D_theta X_u du.
    The kernel factor is kept analytic: the recursion advances only the
    regular part N = D - K(., theta) I, with the kernel's cell integrals
    supplied exactly, so the (t - theta)^(H - 1/2) blow-up near theta never
    meets a finite-difference stencil.  Rows with t <= theta are zero.
    """
    if drift.kind != "smooth":
        raise ValueError("malliavin derivative needs a smooth drift")
    if H is None:
        H = traj.scheme.get("hurst")
    if H is None:
        raise ValueError("pass H explicitly when the trajectory does not carry it")
    grid = traj.grid
    nodes = grid.nodes
    n = grid.n_steps
    d = traj.d
    i0 = int(round((theta - grid.t0) / grid.dt))
    if (not 1 <= i0 <= n - 1) or abs(nodes[i0] - theta) > 1e-12 * max(1.0, grid.horizon):
        raise ValueError("theta must be an interior grid node")
    dt = grid.dt
    out = np.zeros((n + 1, d, d))
    eye = np.eye(d)
    N = np.zeros((d, d))
    for i in range(i0, n):
        C = _kernel_cell_first_arg(H, nodes[i], nodes[i + 1], theta)
        Db = drift.db(nodes[i], traj.states[i])
        N = N + dt * Db @ N + C * Db
        out[i + 1] = kernel_values(H, nodes[i + 1], theta) * eye + N
    return out


def write_trajectory_csv(traj: Trajectory, filepath) -> None:
    d = traj.d
    header = ",".join(["t"] + [f"x{k+1}" for k in range(d)])
    with open(filepath, "w", encoding="utf-8") as fh:
        fh.write(f"# path_ref={traj.path_ref}\n")
        for key, val in sorted(traj.scheme.items()):
            fh.write(f"# {key}={val}\n")
        fh.write(header + "\n")
        for i, t in enumerate(traj.grid.nodes):
            row = ",".join([repr(float(t))] + [repr(float(v)) for v in traj.states[i]])
            fh.write(row + "\n")


def write_flowfield_csv(ff: FlowField, filepath) -> None:
    d = ff.xgrid.shape[1]
    header = ",".join(["x0_index", "t"] + [f"x{k+1}" for k in range(d)])
    with open(filepath, "w", encoding="utf-8") as fh:
        fh.write(f"# path_ref={ff.path_ref}\n")
        fh.write("# starts=" + ";".join(
            ",".join(repr(float(v)) for v in row) for row in ff.xgrid) + "\n")
        fh.write(header + "\n")
        for m in range(ff.xgrid.shape[0]):
            for i, t in enumerate(ff.tgrid.nodes):
                row = ",".join([str(m), repr(float(t))]
                               + [repr(float(v)) for v in ff.states[m, i]])
                fh.write(row + "\n")
