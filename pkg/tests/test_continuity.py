"""Particle pushforward of measures, the conservative finite-volume
reference, and the bitwise mass ledger."""

import math

import numpy as np
import pytest

from fbmflow import (
    FbmPath,
    ParticleEnsemble,
    SpaceGrid,
    TimeGrid,
    circulant_fbm,
    from_density,
    fv_reference,
    make_drift,
    pairwise_sum,
    push_forward,
    read_ensemble_csv,
    test_integral,
    transformed_drift,
    write_comparison_csv,
    write_ensemble_csv,
)

TGRID = TimeGrid(0.0, 1.0, 64)


def _zero_path(d=1, grid=TGRID):
    return FbmPath(grid, np.zeros((grid.n_steps + 1, d)), 0.25, "zero-control", 0)


# --- summation ------------------------------------------------------------------


def test_pairwise_sum_empty_and_singleton():
    assert pairwise_sum(np.array([])) == 0.0
    assert pairwise_sum(np.array([3.5])) == 3.5


def test_pairwise_sum_matches_fsum_closely():
    rng = np.random.default_rng(11)
    vals = rng.standard_normal(10001) * 1e6
    exact = math.fsum(vals)
    assert abs(pairwise_sum(vals) - exact) <= 1e-6 * abs(exact) + 1e-9
    # naive left-to-right is allowed to be worse; pairwise must be deterministic
    assert pairwise_sum(vals) == pairwise_sum(vals.copy())


def test_pairwise_sum_is_exact_on_integers():
    vals = np.arange(1, 2049, dtype=float)
    assert pairwise_sum(vals) == 2048 * 2049 / 2


# --- ensembles ------------------------------------------------------------------


def test_create_syncs_total_mass():
    ens = ParticleEnsemble.create([[0.0], [1.0], [2.0]], [0.25, 0.5, 0.125])
    assert ens.total_mass == pairwise_sum(np.array([0.25, 0.5, 0.125]))
    assert ens.d == 1


def test_ensemble_validation():
    with pytest.raises(ValueError, match="matching weights"):
        ParticleEnsemble(np.zeros((3, 1)), np.zeros(2), 0.0)
    with pytest.raises(ValueError, match="nonnegative"):
        ParticleEnsemble.create(np.zeros((2, 1)), [1.0, -0.1])
    with pytest.raises(ValueError, match="out of sync"):
        ParticleEnsemble(np.zeros((2, 1)), np.ones(2), 3.0)


def test_from_density_places_midpoint_atoms():
    ens = from_density(lambda p: np.ones(p.shape[0]), [0.0], [1.0], [4])
    assert np.allclose(ens.positions[:, 0], [0.125, 0.375, 0.625, 0.875])
    assert np.allclose(ens.weights, 0.25)
    assert ens.total_mass == pytest.approx(1.0)


def test_from_density_weights_are_density_times_cell_volume():
    dens = lambda p: p[:, 0] ** 2
    ens = from_density(dens, [0.0], [2.0], [5])
    cell = 2.0 / 5
    assert np.allclose(ens.weights, dens(ens.positions) * cell)


def test_from_density_two_dimensional_mesh():
    ens = from_density(lambda p: np.ones(p.shape[0]), [0.0, -1.0], [1.0, 1.0], [3, 4])
    assert ens.positions.shape == (12, 2)
    assert ens.total_mass == pytest.approx(2.0)


def test_from_density_validation():
    flat = lambda p: np.ones(p.shape[0])
    with pytest.raises(ValueError, match="share a shape"):
        from_density(flat, [0.0], [1.0, 2.0], [4])
    with pytest.raises(ValueError, match="hi > lo"):
        from_density(flat, [1.0], [0.0], [4])
    with pytest.raises(ValueError, match="nonnegative"):
        from_density(lambda p: -np.ones(p.shape[0]), [0.0], [1.0], [4])


# --- pushforward ----------------------------------------------------------------


def test_push_forward_zero_drift_translates_by_the_noise():
    path = circulant_fbm(0.25, 1, TGRID, seed=12)
    ens = from_density(lambda p: np.ones(p.shape[0]), [-1.0], [1.0], [50])
    out = push_forward(ens, make_drift("zero"), path, 1.0, 64)
    assert np.allclose(out.positions, ens.positions + path.values[-1], atol=1e-13)
    assert out.weights is ens.weights
    assert out.total_mass == ens.total_mass


def test_push_forward_at_start_time_copies():
    ens = ParticleEnsemble.create([[0.5]], [1.0])
    out = push_forward(ens, make_drift("sign"), _zero_path(), 0.0, 8)
    assert np.array_equal(out.positions, ens.positions)
    assert out.positions is not ens.positions


def test_push_forward_rejects_time_outside_span():
    ens = ParticleEnsemble.create([[0.0]], [1.0])
    with pytest.raises(ValueError, match="span"):
        push_forward(ens, make_drift("zero"), _zero_path(), 2.0, 8)


def test_mass_is_conserved_bitwise_under_pushforward():
    path = circulant_fbm(0.1, 1, TGRID, seed=3)
    dens = lambda p: np.exp(-p[:, 0] ** 2)
    ens = from_density(dens, [-2.0], [2.0], [333])
    out = push_forward(ens, make_drift("sign"), path, 1.0, 64)
    assert out.total_mass == ens.total_mass
    assert np.array_equal(out.weights, ens.weights)


def test_test_integral_matches_direct_dot():
    rng = np.random.default_rng(5)
    ens = ParticleEnsemble.create(rng.standard_normal((200, 2)),
                                  rng.random(200))
    phi = lambda p: np.cos(p[:, 0]) + p[:, 1] ** 2
    want = float(np.dot(ens.weights, phi(ens.positions)))
    assert test_integral(ens, phi) == pytest.approx(want, rel=1e-13)


def test_test_integral_rejects_bad_phi_shape():
    ens = ParticleEnsemble.create([[0.0], [1.0]], [1.0, 1.0])
    with pytest.raises(ValueError, match="N values"):
        test_integral(ens, lambda p: np.zeros((2, 1)))


# --- finite-volume reference ----------------------------------------------------


def test_fv_reference_mass_balance_closes_with_outflow():
    b = make_drift("constant", c=[0.7])
    tg = TimeGrid(0.0, 1.0, 400)
    xg = SpaceGrid((-1.5,), 3.0 / 400, (401,))
    dens0 = lambda x: np.exp(-8.0 * x[..., 0] ** 2)
    rho = fv_reference(dens0, b, tg, xg)
    h = xg.spacing
    mass0 = float(np.sum(rho.values[0])) * h
    massT = float(np.sum(rho.values[-1])) * h
    assert massT + rho.meta["outflow"] == pytest.approx(mass0, abs=1e-12)
    assert rho.meta["outflow"] > 0.0     # the bump drifts into the right edge


def test_fv_reference_advects_mass_downstream():
    b = make_drift("constant", c=[0.5])
    tg = TimeGrid(0.0, 1.0, 600)
    xg = SpaceGrid((-3.0,), 6.0 / 600, (601,))
    dens0 = lambda x: np.exp(-8.0 * (x[..., 0] + 1.0) ** 2)
    rho = fv_reference(dens0, b, tg, xg)
    nodes = xg.axis_nodes(0)
    com = float(np.sum(nodes * rho.values[-1]) / np.sum(rho.values[-1]))
    assert com == pytest.approx(-0.5, abs=0.02)


def test_fv_reference_cfl_guard():
    b = make_drift("constant", c=[2.0])
    with pytest.raises(ValueError, match="CFL"):
        fv_reference(lambda x: np.ones(x.shape[:-1]), b,
                     TimeGrid(0.0, 1.0, 10), SpaceGrid((-1.0,), 0.1, (21,)))


def test_fv_reference_rejects_multidim():
    with pytest.raises(ValueError, match="one-dimensional"):
        fv_reference(lambda x: np.ones(x.shape[:-1]), make_drift("zero", dim=2),
                     TGRID, SpaceGrid((0.0, 0.0), 0.1, (4, 4)))


def test_fv_tracks_transformed_characteristics():
    # with frozen noise the fv solution and the particle pushforward answer
    # the same question; compare a smooth test integral
    path = circulant_fbm(0.25, 1, TimeGrid(0.0, 0.5, 512), seed=21)
    b = make_drift("bump", amp=0.5, center=[0.0], width=1.5)
    bstar = transformed_drift(b, path)
    dens0 = lambda x: np.exp(-6.0 * x[..., 0] ** 2)
    tg = TimeGrid(0.0, 0.5, 512)
    xg = SpaceGrid((-4.0,), 8.0 / 1600, (1601,))
    rho = fv_reference(dens0, bstar, tg, xg)

    ens = from_density(lambda p: dens0(p), [-4.0], [4.0], [1600])
    out = push_forward(ens, b, path, 0.5, 512)
    # particles live in the original frame; shift back to the absorbed one
    shifted = ParticleEnsemble.create(out.positions - path.values[-1], out.weights)
    phi = lambda p: np.cos(p[:, 0])
    want = test_integral(shifted, phi)
    nodes = xg.axis_nodes(0)
    got = float(np.sum(np.cos(nodes) * rho.values[-1]) * xg.spacing)
    assert got == pytest.approx(want, abs=5e-3)


# --- CSV ------------------------------------------------------------------------


def test_ensemble_csv_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    ens = ParticleEnsemble.create(rng.standard_normal((40, 3)), rng.random(40))
    fp = tmp_path / "ens.csv"
    write_ensemble_csv(ens, fp)
    back = read_ensemble_csv(fp)
    assert np.array_equal(back.positions, ens.positions)
    assert np.array_equal(back.weights, ens.weights)
    assert back.total_mass == ens.total_mass


def test_comparison_csv_contents(tmp_path):
    fp = tmp_path / "cmp.csv"
    write_comparison_csv([("phi1", 1.0, 1.25), ("phi2", 0.0, 0.0)], fp)
    lines = fp.read_text().splitlines()
    assert lines[0] == "phi_id,pushforward,reference,rel_err"
    cells = lines[1].split(",")
    assert cells[0] == "phi1"
    assert float(cells[3]) == pytest.approx(0.2)
    assert float(lines[2].split(",")[3]) == 0.0
