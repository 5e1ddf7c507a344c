"""Rough Gaussian path generation on uniform grids.

Three interchangeable constructions of the same centered Gaussian law with
covariance R(t,s) = (t^{2H} + s^{2H} - |t-s|^{2H})/2, H in (0, 1/2):

* ``cholesky_fbm``   -- exact, O(n^3) factorization, reference generator.
* ``circulant_fbm``  -- exact in law, FFT circulant embedding of the
  stationary increment process (Davies-Harte); the fast default.
* ``volterra_fbm``   -- moving-average representation against explicit
  Wiener increments through the kernel K; the only route that exposes the
  driving increments, which the change-of-measure weight needs.

``superposed_path`` builds the weighted sum of independent components with
decreasing Hurst indices used by the stacked-roughness experiments.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from . import _backend
from .grids import TimeGrid
from .rng import derive_seed, rng_for

__all__ = [
    "FbmPath",
    "SuperpositionSpec",
    "covariance_rh",
    "kernel_kh",
    "kernel_factorization",
    "cholesky_fbm",
    "circulant_fbm",
    "volterra_fbm",
    "default_lambda",
    "superposed_path",
    "volterra_weight_matrix",
    "write_path_csv",
    "read_path_csv",
]

_CHOLESKY_N_GUARD = 8192
_EIG_CLIP_ERROR = 1e-8


@dataclass
class SuperpositionSpec:
    """Weights and Hurst indices for the stacked process sum(lambda_n * B^{H_n,n}).

    hurst_seq must be strictly decreasing inside (0, 1/2).  The weight sum
    must be finite and positive; ``default_lambda`` constructs weights that
    additionally keep the weighted expected-sup series summable.
    """

    hurst_seq: tuple[float, ...]
    weights: tuple[float, ...]
    truncation: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.hurst_seq = tuple(float(h) for h in self.hurst_seq)
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.hurst_seq) != self.truncation or len(self.weights) != self.truncation:
            raise ValueError("hurst_seq and weights must have length = truncation")
        if self.truncation < 1:
            raise ValueError("truncation must be >= 1")
        for h in self.hurst_seq:
            _check_hurst(h)
        if any(h2 >= h1 for h1, h2 in zip(self.hurst_seq, self.hurst_seq[1:])):
            raise ValueError("hurst_seq must be strictly decreasing")
        total = sum(abs(w) for w in self.weights)
        if not (0.0 < total < np.inf):
            raise ValueError("sum |weights| must lie in (0, inf)")


@dataclass
class FbmPath:
    """A sampled path with provenance.

    values has shape (n_steps+1, d), one row per grid node, values[0] = 0
    when the grid starts at 0.  wiener_increments (n_steps, d) is present
    exactly when method == "volterra".
    """

    grid: TimeGrid
    values: np.ndarray
    hurst: float | SuperpositionSpec
    method: str
    seed: int
    wiener_increments: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def coordinate(self, k: int) -> np.ndarray:
        return self.values[:, k]

    def interp(self, t):
        """Piecewise-linear evaluation, vectorized over t; shape (..., d)."""
        t = np.asarray(t, dtype=float)
        out = np.empty(t.shape + (self.d,))
        for k in range(self.d):
            out[..., k] = np.interp(t, self.grid.nodes, self.values[:, k])
        return out


def _check_hurst(H: float, upper: float = 0.5) -> None:
    if not (0.0 < H < upper):
        raise ValueError(f"Hurst index must lie in (0, {upper}), got {H}")


def covariance_rh(t, s, H: float):
    """R(t,s) = (t^{2H} + s^{2H} - |t-s|^{2H})/2 for t,s >= 0, 0 < H < 1."""
    if not (0.0 < H < 1.0):
        raise ValueError(f"H must lie in (0,1), got {H}")
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if (t < 0).any() or (s < 0).any():
        raise ValueError("times must be nonnegative")
    out = 0.5 * (t ** (2 * H) + s ** (2 * H) - np.abs(t - s) ** (2 * H))
    return float(out) if out.ndim == 0 else out


def kernel_kh(t, s, H: float):
    """Volterra kernel K(t,s) for 0 < s < t; 0 when s >= t by convention.

    The inner integral is computed by 64-node Gauss-Legendre after the
    substitution u = s + v^{1/(H+1/2)}, which removes the endpoint
    singularity exactly (rel. accuracy ~1e-8 on interior points).
    """
    _check_hurst(H)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if (s <= 0).any():
        raise ValueError("s must be positive")
    out = _backend.kernel_values_quad(H, t, s)
    return float(out) if out.ndim == 0 else out


def kernel_factorization(t: float, s: float, H: float, n_nodes: int = 160) -> float:
    """Quadrature of int_0^{t^s} K(t,u) K(s,u) du.

    Checks the covariance factorization; both endpoint singularities are
    removed by power substitutions before Gauss-Legendre.  The u -> 0
    behaviour is u^{2H-1}; at the upper end the min-argument factor behaves
    like (m-u)^{H-1/2} ((m-u)^{2H-1} when t == s).
    """
    _check_hurst(H)
    m = min(t, s)
    x, w = np.polynomial.legendre.leggauss(n_nodes)

    def _piece(p: float, left: bool) -> float:
        vmax = (m / 2.0) ** p
        v = 0.5 * vmax * (x + 1.0)
        jac = 0.5 * vmax * (1.0 / p) * v ** (1.0 / p - 1.0)
        if left:
            u = v ** (1.0 / p)
            k1 = _backend.kernel_values(H, t, u)
            k2 = _backend.kernel_values(H, s, u)
        else:
            gap = v ** (1.0 / p)          # m - u, exact
            u = m - gap
            k1 = _backend.kernel_values(H, t, u, gap=(t - m) + gap)
            k2 = _backend.kernel_values(H, s, u, gap=(s - m) + gap)
        return float(np.sum(w * k1 * k2 * jac))

    left = _piece(2.0 * H, left=True)
    right = _piece(2.0 * H if t == s else H + 0.5, left=False)
    return left + right


# --- volterra weight matrix cache ------------------------------------------

_MATRIX_CACHE: OrderedDict[tuple, np.ndarray] = OrderedDict()
_MATRIX_CACHE_SLOTS = 6


def volterra_weight_matrix(H: float, n: int, dt: float) -> np.ndarray:
    """Cell-averaged kernel matrix Kbar[i-1,j] = (1/dt) int_cell_j K(t_i, u) du.

    Cell averaging rather than pointwise sampling: K has an integrable
    singularity at u -> t_i which pointwise rules miss, and the average
    preserves the marginal variance to first order.
    """
    key = (float(H), int(n), float(dt))
    hit = _MATRIX_CACHE.get(key)
    if hit is not None:
        _MATRIX_CACHE.move_to_end(key)
        return hit
    mat = _backend.cell_integral_matrix(H, n, dt) / dt
    _MATRIX_CACHE[key] = mat
    while len(_MATRIX_CACHE) > _MATRIX_CACHE_SLOTS:
        _MATRIX_CACHE.popitem(last=False)
    return mat


# --- generators -------------------------------------------------------------


def _generator_checks(H: float, d: int, grid: TimeGrid) -> None:
    _check_hurst(H)
    if d < 1:
        raise ValueError("d must be >= 1")
    if grid.t0 != 0.0:
        raise ValueError("generators require grid.t0 = 0")


def cholesky_fbm(H: float, d: int, grid: TimeGrid, seed: int) -> FbmPath:
    """Exact sampling through a Cholesky factor of [R(t_i,t_j)]_{i,j>=1}."""
    _generator_checks(H, d, grid)
    n = grid.n_steps
    if n > _CHOLESKY_N_GUARD:
        raise ValueError(f"cholesky generator is guarded to n <= {_CHOLESKY_N_GUARD}")
    nodes = grid.nodes[1:]
    cov = covariance_rh(nodes[:, None], nodes[None, :], H)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        try:
            L = np.linalg.cholesky(cov + 1e-12 * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                "covariance not positive definite after 1e-12 jitter"
            ) from exc
    z = rng_for(seed).standard_normal((n, d))
    values = np.zeros((n + 1, d))
    values[1:] = L @ z
    return FbmPath(grid, values, H, "covariance-cholesky", seed)


def _fgn_circulant_eigs(H: float, n: int) -> np.ndarray:
    k = np.arange(n + 1, dtype=float)
    gam = 0.5 * ((k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))
    row = np.concatenate([gam[:n], gam[n:], gam[n - 1:0:-1]])
    return np.fft.fft(row).real


def circulant_fbm(H: float, d: int, grid: TimeGrid, seed: int) -> FbmPath:
    """Circulant-embedding sampler; same law as cholesky_fbm, O(n log n).

    Embeds the unit-step increment covariance in a 2n circulant, takes the
    real part of F^* Lambda^{1/2} eps for complex standard normal eps, and
    cumulates the first n increments scaled by dt^H.
    """
    _generator_checks(H, d, grid)
    n = grid.n_steps
    lam = _fgn_circulant_eigs(H, n)
    worst = -lam.min()
    if worst > _EIG_CLIP_ERROR:
        raise ValueError(
            f"circulant embedding eigenvalue {-worst:.3e} below -1e-8; "
            "not expected for H < 1/2"
        )
    clipped = float(max(worst, 0.0))
    lam = np.maximum(lam, 0.0)
    m = 2 * n
    rng = rng_for(seed)
    eps = rng.standard_normal((d, m)) + 1j * rng.standard_normal((d, m))
    e = np.sqrt(m) * np.fft.ifft(np.sqrt(lam)[None, :] * eps, axis=1)
    fgn = e.real[:, :n] * grid.dt ** H
    values = np.zeros((n + 1, d))
    values[1:] = np.cumsum(fgn, axis=1).T
    return FbmPath(grid, values, H, "circulant", seed, meta={"eig_clip": clipped})


def volterra_fbm(H: float, d: int, grid: TimeGrid, seed: int) -> FbmPath:
    """Moving-average construction B_{t_i} = sum_{j<i} Kbar(t_i, s_j) dW_j.

    Keeps the driving Wiener increments on the path; consistent rather than
    exact (the covariance bias vanishes as the grid refines).
    """
    _generator_checks(H, d, grid)
    n = grid.n_steps
    kbar = volterra_weight_matrix(H, n, grid.dt)
    rng = rng_for(seed)
    dw = rng.standard_normal((n, d)) * np.sqrt(grid.dt)
    values = np.zeros((n + 1, d))
    values[1:] = kbar @ dw
    return FbmPath(grid, values, H, "volterra", seed, wiener_increments=dw)


def default_lambda(hurst_seq: Sequence[float], N: int, seed: int) -> SuperpositionSpec:
    """Admissible weights lambda_n = 2^{-n} / max(1, m_n).

    m_n estimates E[sup_{[0,1]} |B^{H_n}|] from 500 circulant paths on a
    256-cell grid.  Normalizing by the expected sup keeps the weighted
    sup series summable by construction; 2^{-n} is one admissible decay,
    not a canonical one.
    """
    hs = tuple(float(h) for h in hurst_seq[:N])
    if len(hs) != N:
        raise ValueError(f"need at least N={N} Hurst indices, got {len(hurst_seq)}")
    grid = TimeGrid(0.0, 1.0, 256)
    weights = []
    sup_means = []
    for i, h in enumerate(hs, start=1):
        sups = np.empty(500)
        for r in range(500):
            p = circulant_fbm(h, 1, grid, derive_seed(seed, i * 1000 + r))
            sups[r] = np.abs(p.values[:, 0]).max()
        m_hat = float(sups.mean())
        sup_means.append(m_hat)
        weights.append(2.0 ** (-i) / max(1.0, m_hat))
    return SuperpositionSpec(
        hurst_seq=hs,
        weights=tuple(weights),
        truncation=N,
        meta={"sup_means": sup_means, "tail_weight": 2.0 ** (-N)},
    )


def superposed_path(spec: SuperpositionSpec, d: int, grid: TimeGrid, seed: int) -> FbmPath:
    """Weighted sum of independent circulant components, sub-seeded per index."""
    values = np.zeros((grid.n_steps + 1, d))
    for i, (h, lam) in enumerate(zip(spec.hurst_seq, spec.weights), start=1):
        comp = circulant_fbm(h, d, grid, derive_seed(seed, i))
        values += lam * comp.values
    meta = {"tail_weight": 2.0 ** (-spec.truncation)}
    return FbmPath(grid, values, spec, "superposed", seed, meta=meta)


# --- CSV --------------------------------------------------------------------


def write_path_csv(path: FbmPath, fh: IO[str]) -> None:
    """Serialize with `# key=value` metadata; exact float round trip."""
    fh.write(f"# method={path.method}\n")
    if isinstance(path.hurst, SuperpositionSpec):
        fh.write(f"# hurst_seq={','.join(repr(h) for h in path.hurst.hurst_seq)}\n")
        fh.write(f"# weights={','.join(repr(w) for w in path.hurst.weights)}\n")
    else:
        fh.write(f"# H={path.hurst!r}\n")
    fh.write(f"# seed={path.seed}\n")
    fh.write(f"# n_steps={path.grid.n_steps}\n")
    fh.write(f"# t0={path.grid.t0!r}\n")
    fh.write(f"# horizon={path.grid.horizon!r}\n")
    d = path.d
    cols = ["t"] + [f"b{k+1}" for k in range(d)]
    has_dw = path.wiener_increments is not None
    if has_dw:
        cols += [f"dw{k+1}" for k in range(d)]
    fh.write(",".join(cols) + "\n")
    nodes = path.grid.nodes
    n = path.grid.n_steps
    for i in range(n + 1):
        row = [repr(float(nodes[i]))] + [repr(float(v)) for v in path.values[i]]
        if has_dw:
            # increment over [t_i, t_{i+1}] sits on the row of its left node
            dw = path.wiener_increments[i] if i < n else np.zeros(d)
            row += [repr(float(v)) for v in dw]
        fh.write(",".join(row) + "\n")


def read_path_csv(fh: IO[str]) -> FbmPath:
    meta: dict[str, str] = {}
    header: list[str] = []
    rows: list[list[float]] = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
        elif not header:
            header = line.split(",")
        else:
            rows.append([float(x) for x in line.split(",")])
    data = np.asarray(rows)
    n = int(meta["n_steps"])
    grid = TimeGrid(float(meta["t0"]), float(meta["horizon"]), n)
    d = sum(1 for c in header if c.startswith("b"))
    values = data[:, 1:1 + d]
    dw = None
    if any(c.startswith("dw") for c in header):
        dw = data[:n, 1 + d:1 + 2 * d]
    hurst: float | SuperpositionSpec
    if "hurst_seq" in meta:
        hs = tuple(float(x) for x in meta["hurst_seq"].split(","))
        ws = tuple(float(x) for x in meta["weights"].split(","))
        hurst = SuperpositionSpec(hs, ws, len(hs))
    else:
        hurst = float(meta["H"])
    return FbmPath(grid, values, hurst, meta["method"], int(meta["seed"]),
                   wiener_increments=dw)
