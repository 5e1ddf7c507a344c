"""Monte Carlo verification layer.

Each experiment returns an McReport: parameters, per-record rows, and
summary statistics, all serializable to a records/summary CSV pair with a
manifest comment block.  Replicates are seeded individually through the
stream-splitting helper, so any single replicate can be reproduced in
isolation and worker scheduling can never change results.

The shuffle-integral engine at the bottom is exact: polynomials with
rational coefficients, nested antiderivatives over the ordered simplex,
floats only at the boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np

from . import fbm
from ._backend import kernel_values
from .drifts import DriftField
from .flow import PicardNonConvergence, _euler_transformed, picard_solve
from .flow import _kernel_cell_first_arg
from .grids import TimeGrid
from .rng import derive_seed, rng_for
from .version import __version__

__all__ = [
    "McReport",
    "MalliavinField",
    "moment_estimate",
    "uniqueness_gap",
    "averaging_tail",
    "malliavin_field",
    "sobolev_slobodeckij",
    "sobolev_slobodeckij_stats",
    "shuffle_permutations",
    "simplex_integral",
    "shuffle_identity_check",
    "holder_fit",
]

_MIN_SE_COUNT = 30


@dataclass
class McReport:
    experiment: str
    params: dict
    records: list
    summary: dict

    def _manifest_lines(self):
        yield f"# experiment={self.experiment}"
        yield f"# version={__version__}"
        for key in sorted(self.params):
            yield f"# {key}={self.params[key]}"

    def write_records_csv(self, filepath) -> None:
        with open(filepath, "w", encoding="utf-8") as fh:
            for line in self._manifest_lines():
                fh.write(line + "\n")
            if not self.records:
                fh.write("empty\n")
                return
            cols = list(self.records[0])
            fh.write(",".join(cols) + "\n")
            for rec in self.records:
                fh.write(",".join(_csv_cell(rec[c]) for c in cols) + "\n")

    def write_summary_csv(self, filepath) -> None:
        with open(filepath, "w", encoding="utf-8") as fh:
            for line in self._manifest_lines():
                fh.write(line + "\n")
            fh.write("key,value\n")
            for key in sorted(self.summary):
                fh.write(f"{key},{_csv_cell(self.summary[key])}\n")


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ";".join(_csv_cell(x) for x in v)
    return str(v)


def _mean_se(vals: np.ndarray):
    mean = float(np.mean(vals))
    if vals.size >= _MIN_SE_COUNT:
        return mean, float(np.std(vals, ddof=1) / math.sqrt(vals.size))
    return mean, None


def _fit_line(x: np.ndarray, y: np.ndarray):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    yhat = A @ coef
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


def _path_values_chunk(H: float, d: int, grid: TimeGrid, seed: int,
                       start: int, count: int) -> np.ndarray:
    """(count, n+1, d) circulant paths for replicates start..start+count-1.

    Normals are drawn per replicate from that replicate's own stream in the
    same order circulant_fbm uses, then transformed in one stacked FFT, so
    the batch is bitwise identical to generating the paths one by one.
    """
    n = grid.n_steps
    lam = np.maximum(fbm._fgn_circulant_eigs(H, n), 0.0)
    m = 2 * n
    eps = np.empty((count, d, m), dtype=complex)
    for r in range(count):
        rng = rng_for(derive_seed(seed, start + r))
        eps[r] = rng.standard_normal((d, m)) + 1j * rng.standard_normal((d, m))
    e = np.sqrt(m) * np.fft.ifft(np.sqrt(lam)[None, None, :] * eps, axis=-1)
    fgn = e.real[..., :n] * grid.dt ** H
    out = np.zeros((count, n + 1, d))
    out[:, 1:, :] = np.cumsum(fgn, axis=-1).transpose(0, 2, 1)
    return out


def moment_estimate(b: DriftField, H: float, pairs, p: int, N: int, seed: int,
                    n_steps: int = 512, horizon: float = 1.0,
                    chunk: int = 500) -> McReport:
    """Coupled moment of the flow: E[sup_t |X^x - X^y|^p] per start pair.

    Both solutions of a pair ride the same path (the noise cancels in the
    difference; independent paths would measure a different quantity).
    Summary carries the log-log fit of moment against start distance.
    """
    if p < 2 or p & (p - 1):
        raise ValueError(f"p must be a power of two >= 2, got {p}")
    pairs = [(np.atleast_1d(np.asarray(x, dtype=float)),
              np.atleast_1d(np.asarray(y, dtype=float))) for x, y in pairs]
    dists = np.array([float(np.linalg.norm(x - y)) for x, y in pairs])
    if np.any(dists == 0):
        raise ValueError("pairs must have distinct endpoints")
    d = pairs[0][0].size
    grid = TimeGrid(0.0, horizon, n_steps)
    starts = np.array([pt for pair in pairs for pt in pair])   # (2m, d)
    m = len(pairs)

    sup_p = np.empty((N, m))
    done = 0
    while done < N:
        c = min(chunk, N - done)
        B = _path_values_chunk(H, d, grid, seed, done, c)[:, None, :, :]
        # march the noise-free frame Z' = b(t, Z + B); the coupled
        # difference Z^x - Z^y equals X^x - X^y and the shared noise
        # cancels structurally, not just up to rounding
        Z = np.empty((c, 2 * m, n_steps + 1, d))
        Z[..., 0, :] = np.broadcast_to(starts, (c, 2 * m, d))
        for k in range(n_steps):
            zk = Z[..., k, :]
            Z[..., k + 1, :] = zk + grid.dt * b.evaluate(
                grid.nodes[k], zk + B[..., k, :])
        diff = Z[:, 0::2, :, :] - Z[:, 1::2, :, :]             # (c, m, n+1, d)
        sup = np.max(np.linalg.norm(diff, axis=-1), axis=-1)
        sup_p[done:done + c] = sup ** p
        done += c

    records = []
    for r in range(N):
        for j in range(m):
            records.append({"replicate": r, "seed": derive_seed(seed, r),
                            "pair": j, "dist": dists[j], "sup_p": float(sup_p[r, j])})
    means = sup_p.mean(axis=0)
    slope, intercept, r2 = _fit_line(np.log(dists), np.log(means))
    summary = {"slope": slope, "intercept": intercept, "r2": r2}
    for j in range(m):
        mu, se = _mean_se(sup_p[:, j])
        summary[f"pair{j}_dist"] = float(dists[j])
        summary[f"pair{j}_moment"] = mu
        if se is not None:
            summary[f"pair{j}_se"] = se
    params = {"H": H, "d": d, "T": horizon, "N": N, "p": p, "seed": seed,
              "n_steps": n_steps, "drift": b.name}
    return McReport("moment", params, records, summary)


def uniqueness_gap(b: DriftField, H: float, x0, N: int, init_pairs, tol: float,
                   seed: int = 0, n_steps: int = 512, horizon: float = 1.0,
                   max_iter: int = 60) -> McReport:
    """Distance between Picard limits started from antagonistic guesses.

    With noise the iterates should collapse together path by path; the
    zero-noise control arm documents that without noise they must not.
    Non-convergence is recorded, never raised.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = x0.size
    grid = TimeGrid(0.0, horizon, n_steps)

    def run_pair(path, pair):
        n1 = grid.n_steps + 1
        results = []
        for init in pair:
            init_pt = np.broadcast_to(np.atleast_1d(np.asarray(init, dtype=float)), (d,))
            init_arr = np.tile(init_pt, (n1, 1))
            try:
                traj, its, res = picard_solve(b, x0, path, init=init_arr,
                                              max_iter=max_iter, tol=tol)
                results.append((traj.states, its, res, True))
            except PicardNonConvergence as exc:
                results.append((exc.last.states, exc.iterations, exc.residual, False))
        (ya, ia, ra, ca), (yb, ib, rb, cb) = results
        gap = float(np.max(np.abs(ya - yb)))
        return gap, (ia, ib), (ra, rb), (ca, cb)

    records = []
    gaps = np.empty((N, len(init_pairs)))
    for r in range(N):
        path = fbm.circulant_fbm(H, d, grid, derive_seed(seed, r))
        for j, pair in enumerate(init_pairs):
            gap, its, res, conv = run_pair(path, pair)
            gaps[r, j] = gap
            records.append({"replicate": r, "seed": derive_seed(seed, r),
                            "init_pair": j, "gap": gap,
                            "iters_a": its[0], "iters_b": its[1],
                            "residual_a": res[0], "residual_b": res[1],
                            "conv_a": conv[0], "conv_b": conv[1]})

    zero = fbm.FbmPath(grid, np.zeros((grid.n_steps + 1, d)), H,
                       "zero-control", seed)
    summary = {"tol": tol, "gap_tolerance": 10.0 * tol,
               "control_threshold": horizon * (1.0 - 5.0 * grid.dt)}
    for j, pair in enumerate(init_pairs):
        frac = float(np.mean(gaps[:, j] <= 10.0 * tol))
        summary[f"pair{j}_frac_within"] = frac
        summary[f"pair{j}_median_gap"] = float(np.median(gaps[:, j]))
        cgap, _, _, _ = run_pair(zero, pair)
        summary[f"pair{j}_control_gap"] = cgap
    params = {"H": H, "d": d, "T": horizon, "N": N, "seed": seed,
              "n_steps": n_steps, "drift": b.name, "x0": x0.tolist(),
              "max_iter": max_iter}
    return McReport("uniqueness", params, records, summary)


def averaging_tail(b: DriftField, h1, h2, H: float, r: float, u: float,
                   lambdas, N: int, seed: int, n_steps: int = 256,
                   chunk: int = 20000) -> McReport:
    """Tail of the averaged drift difference along the path.

    Estimates P[|int_r^u b(s, B_s + h1) - b(s, B_s + h2) ds| >= lambda
    (u-r)^(1/2) |h1-h2|_inf] and fits log P against lambda^2 inside the
    window where the empirical tail is neither starved (fewer than 10
    hits) nor bulk (above 1/2).  A Gaussian-type tail shows up as a line.
    """
    if b.sup_norm > 1.0 + 1e-12:
        raise ValueError("averaging_tail expects |b| <= 1; rescale the drift")
    if not 0.0 <= r < u:
        raise ValueError("need 0 <= r < u")
    h1 = np.atleast_1d(np.asarray(h1, dtype=float))
    h2 = np.atleast_1d(np.asarray(h2, dtype=float))
    d = h1.size
    zeta = 0.5
    hdiff = float(np.max(np.abs(h1 - h2)))
    lambdas = np.asarray(lambdas, dtype=float)
    grid = TimeGrid(0.0, u, n_steps)
    nodes = grid.nodes
    live = (nodes >= r) & (nodes < u)          # left-rectangle nodes in [r, u)

    norms = np.empty(N)
    done = 0
    while done < N:
        c = min(chunk, N - done)
        B = _path_values_chunk(H, d, grid, seed, done, c)
        diff = b.evaluate(nodes, B + h1) - b.evaluate(nodes, B + h2)
        integral = grid.dt * np.sum(diff[:, live, :], axis=1)
        norms[done:done + c] = np.linalg.norm(integral, axis=-1)
        done += c

    thresholds = lambdas * (u - r) ** (1.0 - zeta) * hdiff
    phat = np.array([float(np.mean(norms >= t)) for t in thresholds])
    records = [{"lambda": float(lam), "threshold": float(t),
                "exceedances": int(round(ph * N)), "phat": float(ph),
                "seed": seed}
               for lam, t, ph in zip(lambdas, thresholds, phat)]
    summary = {"zeta": zeta, "hdiff": hdiff, "N": N}
    if np.all(phat == 0.0):
        summary["slope"] = None
        summary["note"] = "tail identically zero"
    else:
        usable = (phat >= 10.0 / N) & (phat <= 0.5)
        if usable.sum() < 3:
            raise ValueError("degenerate tail fit: fewer than 3 usable lambda points")
        slope, intercept, r2 = _fit_line(lambdas[usable] ** 2,
                                         np.log(phat[usable]))
        summary.update({"slope": slope, "intercept": intercept, "r2": r2,
                        "n_usable": int(usable.sum()), "alpha_hat": -slope})
    params = {"H": H, "d": d, "r": r, "u": u, "N": N, "seed": seed,
              "n_steps": n_steps, "drift": b.name,
              "h1": h1.tolist(), "h2": h2.tolist()}
    return McReport("tail", params, records, summary)


@dataclass(frozen=True)
class MalliavinField:
    """Samples of D_theta X_t at fixed t over a theta grid, per replicate."""

    t: float
    thetas: np.ndarray          # (n_theta,), uniform
    samples: np.ndarray         # (N, n_theta, d, d)
    meta: dict = field(default_factory=dict)


def malliavin_field(drift: DriftField, H: float, x0, thetas, N: int, seed: int,
                    n_steps: int = 512, horizon: float = 1.0,
                    chunk: int = 100) -> MalliavinField:
    """Monte Carlo field of Malliavin derivatives at the horizon.

    Per replicate, one forward Euler trajectory and one sweep of the
    kernel-plus-regular-part recursion, vectorized across all thetas; the
    deterministic kernel cell integrals are shared by every replicate.
    """
    if drift.kind != "smooth":
        raise ValueError("malliavin field needs a smooth drift")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = x0.size
    thetas = np.asarray(thetas, dtype=float)
    grid = TimeGrid(0.0, horizon, n_steps)
    nodes = grid.nodes
    dt = grid.dt
    n = n_steps
    n_th = thetas.size

    i0s = np.round(thetas / dt).astype(int)
    if np.any(np.abs(nodes[i0s] - thetas) > 1e-12) or np.any(i0s < 1) or np.any(i0s > n - 1):
        raise ValueError("thetas must be interior grid nodes")
    C = np.zeros((n_th, n))
    for j, (th, i0) in enumerate(zip(thetas, i0s)):
        for i in range(i0, n):
            C[j, i] = _kernel_cell_first_arg(H, nodes[i], nodes[i + 1], th)
    K_end = kernel_values(H, np.full(n_th, horizon), thetas)

    samples = np.empty((N, n_th, d, d))
    eye = np.eye(d)
    done = 0
    while done < N:
        c = min(chunk, N - done)
        B = _path_values_chunk(H, d, grid, seed, done, c)
        x0b = np.broadcast_to(x0, (c, d))
        states = _euler_transformed(drift, x0b, B, nodes)     # (c, n+1, d)
        Nmat = np.zeros((c, n_th, d, d))
        for i in range(n):
            Db = drift.db(nodes[i], states[:, i, :])          # (c, d, d)
            DbN = np.einsum("cab,cjbe->cjae", Db, Nmat)
            Nmat = Nmat + dt * DbN + C[None, :, i, None, None] * Db[:, None, :, :]
        samples[done:done + c] = K_end[None, :, None, None] * eye + Nmat
        done += c
    return MalliavinField(horizon, thetas, samples,
                          {"H": H, "drift": drift.name, "seed": seed,
                           "n_steps": n_steps, "N": N})


def sobolev_slobodeckij_stats(field: MalliavinField, beta: float):
    """Fractional-difference energy of the field in theta, with its MC
    standard error: double quadrature of E|D_theta - D_theta'|^2 over
    off-diagonal cells against |theta - theta'|^(1+2*beta)."""
    if not (0.0 < beta < 0.5):
        raise ValueError(f"beta must lie in (0, 1/2), got {beta}")
    th = field.thetas
    w = np.full(th.size, th[1] - th[0])          # trapezoid weights per axis
    w[0] *= 0.5
    w[-1] *= 0.5
    gaps = np.abs(th[:, None] - th[None, :])
    np.fill_diagonal(gaps, 1.0)                 # placeholder, masked below
    weight = gaps ** (-(1.0 + 2.0 * beta)) * w[:, None] * w[None, :]
    np.fill_diagonal(weight, 0.0)
    D = field.samples                            # (N, n_th, d, d)
    sq = np.sum((D[:, :, None, :, :] - D[:, None, :, :, :]) ** 2, axis=(-2, -1))
    per_rep = np.einsum("rij,ij->r", sq, weight)
    value = float(per_rep.mean())
    se = float(per_rep.std(ddof=1) / math.sqrt(per_rep.size)) if per_rep.size >= 2 else 0.0
    return value, se


def sobolev_slobodeckij(field: MalliavinField, beta: float) -> float:
    value, _ = sobolev_slobodeckij_stats(field, beta)
    return value


# --- exact shuffle engine ----------------------------------------------------


def shuffle_permutations(m: int, n: int):
    """All ways to interleave blocks 0..m-1 and m..m+n-1 keeping each block
    in order; exactly C(m+n, m) of them."""
    if m < 0 or n < 0:
        raise ValueError("m and n must be nonnegative")
    if m + n > 12:
        raise ValueError("m + n must stay <= 12")
    total = m + n
    perms = []
    for first_slots in combinations(range(total), m):
        perm = [None] * total
        for k, slot in enumerate(first_slots):
            perm[slot] = k
        rest = iter(range(m, total))
        for slot in range(total):
            if perm[slot] is None:
                perm[slot] = next(rest)
        perms.append(tuple(perm))
    return perms


def _to_poly(coeffs):
    poly = tuple(Fraction(c) if not isinstance(c, float) else Fraction(c)
                 for c in coeffs)
    if len(poly) > 9:
        raise ValueError("polynomial degree must stay <= 8")
    return poly


def _poly_mul(a, b):
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, ca in enumerate(a):
        for j, cb in enumerate(b):
            out[i + j] += ca * cb
    return tuple(out)


def _poly_antiderivative(p):
    return (Fraction(0),) + tuple(c / (k + 1) for k, c in enumerate(p))


def _poly_eval(p, x: Fraction) -> Fraction:
    acc = Fraction(0)
    for c in reversed(p):
        acc = acc * x + c
    return acc


def _simplex_exact(polys, theta: Fraction, t: Fraction) -> Fraction:
    """Nested integral over theta < w_k < ... < w_1 < t of the product of
    polys[j](w_j); polys[0] belongs to the outermost (largest) variable."""
    inner = (Fraction(1),)
    for p in reversed(polys[1:]):
        anti = _poly_antiderivative(_poly_mul(p, inner))
        shift = _poly_eval(anti, theta)
        inner = tuple(c - (shift if k == 0 else 0) for k, c in enumerate(anti))
    anti = _poly_antiderivative(_poly_mul(polys[0], inner))
    return _poly_eval(anti, t) - _poly_eval(anti, theta)


def simplex_integral(fs, theta, t) -> float:
    """Integral of prod f_j(w_j) over the ordered simplex theta < w_k < ...
    < w_1 < t, exact rational arithmetic inside."""
    polys = [_to_poly(f) for f in fs]
    if not polys:
        raise ValueError("need at least one polynomial")
    return float(_simplex_exact(polys, Fraction(theta), Fraction(t)))


def shuffle_identity_check(f_list, g_list, theta, t):
    """Product of two simplex integrals against the shuffle-sum expansion.

    Both sides evaluate in exact rational arithmetic; abs_err is the exact
    difference pushed to float, so anything above rounding noise means a
    genuine violation.
    """
    fs = [_to_poly(f) for f in f_list]
    gs = [_to_poly(g) for g in g_list]
    m, n = len(fs), len(gs)
    if m + n > 8:
        raise ValueError("m + n must stay <= 8")
    thF, tF = Fraction(theta), Fraction(t)
    lhs = _simplex_exact(fs, thF, tF) * _simplex_exact(gs, thF, tF) \
        if m and n else (_simplex_exact(fs or gs, thF, tF) if (m or n) else Fraction(1))
    combined = fs + gs
    rhs = Fraction(0)
    for perm in shuffle_permutations(m, n):
        rhs += _simplex_exact([combined[k] for k in perm], thF, tF)
    return float(lhs), float(rhs), float(abs(lhs - rhs))


def holder_fit(report: McReport, n_boot: int = 1000, boot_seed: int = 1234):
    """Log-log slope of moment against distance, with a bootstrap CI.

    Resamples replicates (paths), not individual pair values: the pair
    moments are coupled through shared paths.
    """
    dists = []
    j = 0
    while f"pair{j}_dist" in report.summary:
        dists.append(report.summary[f"pair{j}_dist"])
        j += 1
    m = len(dists)
    if m < 3:
        raise ValueError("holder_fit needs at least 3 start-pair distances")
    dists = np.asarray(dists)
    if np.all(dists == dists[0]):
        raise ValueError("degenerate fit: all distances equal")
    N = report.params["N"]
    sup_p = np.empty((N, m))
    for rec in report.records:
        sup_p[rec["replicate"], rec["pair"]] = rec["sup_p"]
    lx = np.log(dists)
    slope, _, _ = _fit_line(lx, np.log(sup_p.mean(axis=0)))
    rng = rng_for(boot_seed)
    boot = np.empty(n_boot)
    for k in range(n_boot):
        idx = rng.integers(0, N, N)
        boot[k], _, _ = _fit_line(lx, np.log(sup_p[idx].mean(axis=0)))
    lo, hi = np.percentile(boot, [2.5, 97.5])
    return slope, (float(lo), float(hi))
