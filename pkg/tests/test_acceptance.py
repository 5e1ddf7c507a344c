"""End-to-end acceptance gates: one test per shipped guarantee.

Each test runs a pinned desk-scale experiment (fixed seeds, fixed grids)
and checks both the quantitative claim and a wall-clock budget.  Seeds were
chosen once and frozen; every assertion below is reproducible bit for bit
on a single thread.
"""
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import integrate, stats

from fbmflow import (
    GridFn1D,
    MollifiedFamily,
    SpaceGrid,
    TestPair,
    TimeGrid,
    averaging_tail,
    bump_profile,
    cholesky_fbm,
    circulant_fbm,
    covariance_rh,
    frac_derivative_left,
    frac_integral_left,
    from_density,
    fv_reference,
    girsanov_weight,
    kernel_factorization,
    kernel_kh,
    make_drift,
    malliavin_field,
    moment_estimate,
    push_forward,
    rng_for,
    shuffle_identity_check,
    sobolev_slobodeckij_stats,
    solve_transport,
    test_integral,
    transformed_drift,
    uniqueness_gap,
    upwind_reference,
    volterra_fbm,
    volterra_weight_matrix,
    weak_residual,
)
from fbmflow.fraccalc import _girsanov_log_weights
from fbmflow.rng import derive_seed


def _budget(t0: float, seconds: float) -> None:
    assert time.monotonic() - t0 <= seconds


def test_fbm_generators_match_target_covariance_and_each_other():
    # 3 Hurst values x 2 generators, 1e4 paths each: every covariance entry
    # within 3 standard errors of the target, and the generator terminals
    # must be indistinguishable by a two-sample KS test
    t0 = time.monotonic()
    N, n, base = 10_000, 64, 19
    grid = TimeGrid(0.0, 1.0, n)
    nodes = grid.nodes[1:]

    def draw(gen, H, offset):
        out = np.empty((N, n))
        for i in range(N):
            out[i] = gen(H, 1, grid, derive_seed(base, offset + i)).values[1:, 0]
        return out

    def worst_z(B, H):
        target = covariance_rh(nodes[:, None], nodes[None, :], H)
        chat = (B.T @ B) / N
        m2 = ((B * B).T @ (B * B)) / N
        var = (m2 - chat * chat) * (N / (N - 1.0))
        return float(np.abs((chat - target) / np.sqrt(var / N)).max())

    for H in (0.1, 0.25, 0.4):
        bc = draw(cholesky_fbm, H, 0)
        bf = draw(circulant_fbm, H, 1_000_000)
        assert worst_z(bc, H) <= 3.0
        assert worst_z(bf, H) <= 3.0
        assert stats.ks_2samp(bc[:, -1], bf[:, -1]).pvalue > 0.01
    _budget(t0, 120.0)


def test_moving_average_terminal_variance_is_consistent():
    # sampled variance over 1e4 paths stays within 5% of t^(2H), and the
    # deterministic discretization bias dt sum Kbar^2 - 1 shrinks with n
    t0 = time.monotonic()
    H = 0.25
    grid = TimeGrid(0.0, 1.0, 1024)
    term = np.array([volterra_fbm(H, 1, grid, derive_seed(2, i)).values[-1, 0]
                     for i in range(10_000)])
    assert abs(term.var(ddof=1) - 1.0) <= 0.05
    biases = []
    for n in (512, 1024, 2048):
        kbar = volterra_weight_matrix(H, n, 1.0 / n)
        biases.append(abs((1.0 / n) * float(np.sum(kbar[-1] ** 2)) - 1.0))
    assert biases[0] > biases[1] > biases[2]
    _budget(t0, 300.0)


def test_kernel_self_product_reproduces_the_covariance():
    t0 = time.monotonic()
    ts = np.linspace(0.2, 1.0, 5)
    for H in (0.1, 0.25):
        for t in ts:
            for s in ts:
                got = kernel_factorization(float(t), float(s), H)
                want = float(covariance_rh(t, s, H))
                assert abs(got - want) <= 1e-3 * abs(want)
    _budget(t0, 60.0)


def test_change_of_measure_weights_average_to_one():
    # the discrete weight is mean-one by construction (each summand is
    # measurable against the increments strictly before it), so the sample
    # mean must sit inside 1 +/- 3 standard errors at any resolution
    t0 = time.monotonic()
    H, N, chunk = 0.25, 10_000, 500
    grid = TimeGrid(0.0, 1.0, 2048)
    b = make_drift("bump", amp=0.5)
    w = np.empty(N)
    done = 0
    while done < N:
        c = min(chunk, N - done)
        paths = [volterra_fbm(H, 1, grid, derive_seed(2, done + i)) for i in range(c)]
        B = np.stack([p.values for p in paths])
        dW = np.stack([p.wiener_increments for p in paths])
        w[done:done + c] = np.exp(_girsanov_log_weights(b, B, dW, grid.nodes, H))
        done += c
    se = w.std(ddof=1) / math.sqrt(N)
    assert abs(w.mean() - 1.0) <= 3.0 * se
    # no drift, no tilt: the weight collapses to exactly one
    flat = girsanov_weight(make_drift("zero"), volterra_fbm(H, 1, grid, 7), H)
    assert flat.weight == 1.0
    _budget(t0, 300.0)


def test_half_order_derivative_undoes_half_order_integral():
    t0 = time.monotonic()
    grid = TimeGrid(0.0, 1.0, 2048)
    f = GridFn1D(grid, np.sin(grid.nodes))
    rt = frac_derivative_left(frac_integral_left(f, 0.5), 0.5)
    assert float(np.max(np.abs(rt.values - f.values))) <= 1e-3
    _budget(t0, 10.0)


def test_without_noise_antagonistic_inits_stay_apart():
    # zero-noise control: the two Picard limits bracket distinct solutions,
    # so the gap must stay essentially the full horizon
    t0 = time.monotonic()
    rep = uniqueness_gap(make_drift("sign"), 0.1, [0.0], 1, [(1.0, -1.0)],
                         tol=1e-3, seed=0, n_steps=512)
    assert rep.summary["pair0_control_gap"] >= rep.summary["control_threshold"]
    _budget(t0, 10.0)


def test_rough_noise_collapses_antagonistic_picard_limits():
    t0 = time.monotonic()
    rep = uniqueness_gap(make_drift("sign"), 0.1, [0.0], 100, [(1.0, -1.0)],
                         tol=1e-3, seed=777, n_steps=512, max_iter=60)
    assert rep.summary["pair0_frac_within"] >= 0.95
    _budget(t0, 600.0)


def test_flow_moments_scale_almost_quadratically_in_the_separation():
    t0 = time.monotonic()
    b = MollifiedFamily(make_drift("sign")).member(6)
    pairs = [([0.0], [1e-3]), ([0.0], [1e-2]), ([0.0], [1e-1])]
    rep = moment_estimate(b, 0.1, pairs, p=2, N=2000, seed=2024, n_steps=512)
    assert rep.summary["slope"] >= 1.8
    # without drift the coupled difference is frozen, so the fitted slope
    # equals the moment order exactly (up to the line fit's own rounding)
    flat = moment_estimate(make_drift("zero"), 0.1, pairs, p=2, N=8,
                           seed=1, n_steps=64)
    assert flat.summary["slope"] == pytest.approx(2.0, abs=1e-12)
    _budget(t0, 900.0)


def test_averaged_drift_difference_has_gaussian_tails():
    t0 = time.monotonic()
    rep = averaging_tail(make_drift("indicator"), [0.0], [0.05], 0.1, 0.0, 0.5,
                         np.linspace(0.05, 3.0, 40), N=100_000, seed=99,
                         n_steps=256, chunk=10_000)
    assert rep.summary["slope"] < 0.0
    assert rep.summary["r2"] >= 0.9
    _budget(t0, 600.0)


def test_shuffle_identity_holds_for_random_polynomials():
    # exhaustive over factor counts m + n <= 6, random integer coefficients
    # of degree <= 3, dyadic evaluation points: exact rational arithmetic on
    # both sides, so the error must vanish to rounding
    t0 = time.monotonic()
    cells = [(m, n) for m in range(7) for n in range(7) if 1 <= m + n <= 6]
    for case in range(200):
        m, n = cells[case % len(cells)]
        rng = rng_for(derive_seed(4242, case))
        polys = [rng.integers(-3, 4, size=rng.integers(1, 5)).tolist()
                 for _ in range(m + n)]
        t = (1 + case % 2) * 0.5
        theta = t * (1 + case % 3) / 4.0
        _, _, err = shuffle_identity_check(polys[:m], polys[m:], theta, t)
        assert err <= 1e-12
    _budget(t0, 30.0)


def test_transport_solver_agrees_with_conservative_oracle():
    t0 = time.monotonic()
    H, seed = 0.1, 5
    b = MollifiedFamily(make_drift("sign")).member(6)
    path = circulant_fbm(H, 1, TimeGrid(0.0, 1.0, 512), seed)
    bstar = transformed_drift(b, path)
    u0 = bump_profile([0.0], 1.5)
    xg = SpaceGrid((-3.0,), 6.0 / 2400, (2401,))

    # terminal slice against an independent first-order upwind march
    uc = solve_transport(u0, b, path, TimeGrid(0.0, 1.0, 8), xg, 512)
    nt_up = math.ceil(b.sup_norm / (0.85 * xg.spacing))
    uu = upwind_reference(u0, bstar, TimeGrid(0.0, 1.0, nt_up), xg)
    l1_gap = np.sum(np.abs(uc.values[-1] - uu.values[-1]))
    assert l1_gap <= 0.05 * np.sum(np.abs(uc.values[0]))

    # weak-form residual shrinks as the space-time sampling refines; the
    # backward characteristics stay pinned at 512 steps throughout
    pair = TestPair(0.2, 0.8, (-0.2,), (1.0,))
    res = []
    for nt in (16, 32, 64):
        ul = solve_transport(u0, b, path, TimeGrid(0.0, 1.0, nt), xg, 512)
        res.append(abs(weak_residual(ul, bstar, pair)))
    assert res[0] > res[1] > res[2]

    # composition with u0 can never escape the initial range
    assert uc.values.min() >= 0.0
    assert uc.values.max() <= 1.0

    # with no drift the backward feet are the lattice points themselves
    flat = solve_transport(u0, make_drift("zero"), path, TimeGrid(0.0, 1.0, 8),
                           xg, 512)
    for i in range(flat.tgrid.n_steps + 1):
        assert np.array_equal(flat.values[i], flat.values[0])
    _budget(t0, 600.0)


def test_particle_pushforward_matches_density_oracle():
    t0 = time.monotonic()
    b = make_drift("bump", amp=0.5, width=1.5)
    grid = TimeGrid(0.0, 1.0, 512)
    path = circulant_fbm(0.25, 1, grid, 5)
    dens = lambda x: np.exp(-4.0 * np.sum(x * x, axis=-1))
    ens = from_density(dens, [-4.0], [4.0], [100_000])
    out = push_forward(ens, b, path, 1.0, 512)
    assert out.total_mass == ens.total_mass

    xg = SpaceGrid((-5.0,), 10.0 / 2000, (2001,))
    nt = math.ceil(b.sup_norm / (0.85 * xg.spacing))
    rho = fv_reference(dens, transformed_drift(b, path),
                       TimeGrid(0.0, 1.0, nt), xg)
    # the oracle density lives in the frame with the noise absorbed, so its
    # test functions are evaluated at y + B_T
    shift = path.values[-1]
    y = xg.points()
    for center, width in ((-0.3, 1.0), (0.0, 0.8), (0.3, 1.2)):
        phi = bump_profile([center], width)
        p_side = test_integral(out, phi)
        o_side = float(np.sum(phi(y + shift) * rho.values[-1] * xg.spacing))
        assert abs(p_side - o_side) <= 0.05 * abs(o_side)
    _budget(t0, 600.0)


def test_derivative_field_seminorm_closed_form_and_uniform_bound():
    t0 = time.monotonic()
    H, beta = 0.05, 0.2

    # drift-free arm: the field is the deterministic kernel slice, so the
    # discrete seminorm must land on the exact double integral
    n = 512
    idx = n // 8 + 8 * np.arange(49)
    thetas = idx / n
    fld = malliavin_field(make_drift("zero"), H, [0.0], thetas, N=2, seed=1,
                          n_steps=n)
    got, _ = sobolev_slobodeckij_stats(fld, beta)

    def integrand(tp, th):
        if tp == th:
            return 0.0
        return (kernel_kh(1.0, th, H) - kernel_kh(1.0, tp, H)) ** 2 \
            * abs(th - tp) ** (-1.0 - 2.0 * beta)

    lo, hi = float(thetas[0]), float(thetas[-1])
    half, _ = integrate.dblquad(integrand, lo, hi, lo, lambda th: th)
    assert abs(got - 2.0 * half) <= 1e-2 * 2.0 * half

    # sharpening the drift must not blow the seminorm up: each level stays
    # within 3x the coarsest
    n = 4096
    idx = n // 8 + 128 * np.arange(25)
    thetas = idx / n
    fam = MollifiedFamily(make_drift("sign"))
    vals = [sobolev_slobodeckij_stats(
        malliavin_field(fam.member(lev), H, [0.0], thetas, N=200, seed=31,
                        n_steps=n), beta)[0] for lev in (2, 4, 6)]
    assert max(vals) <= 3.0 * vals[0]
    _budget(t0, 1200.0)


def test_core_package_imports_without_plotting_stack():
    t0 = time.monotonic()
    code = (
        "import sys\n"
        "from fbmflow import analysis, cli, continuity, drifts, fbm, flow\n"
        "from fbmflow import fraccalc, grids, rng, transport\n"
        "bad = sorted(m.split('.')[0] for m in sys.modules\n"
        "             if m.startswith(('matplotlib', 'fbmplots')))\n"
        "print('CLEAN' if not bad else 'POLLUTED ' + ' '.join(set(bad)))\n"
    )
    proc = subprocess.run([sys.executable, "-c", code],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip() == "CLEAN"
    _budget(t0, 60.0)
