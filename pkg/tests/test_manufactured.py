import os

import numpy as np
import pytest

from spnpflow import manufactured as mf
from spnpflow import model


@pytest.fixture(scope="module")
def params():
    return model.Params(dt=0.05, t_final=0.5, **mf.SEC41_PARAMS)


@pytest.fixture(scope="module")
def exact():
    return mf.exact_solution_sec41()


@pytest.fixture(scope="module")
def sources(exact, params):
    return mf.source_terms(exact, params)


def test_velocity_vanishes_on_boundary(exact):
    y = np.linspace(0, 1, 11)
    for x in (0.0, 1.0):
        assert np.abs(exact.u1(x, y, 0.3)).max() <= 1e-14
        assert np.abs(exact.u2(x, y, 0.3)).max() <= 1e-14
    x = np.linspace(0, 1, 11)
    for yb in (0.0, 1.0):
        assert np.abs(exact.u1(x, yb, 0.3)).max() <= 1e-14
        assert np.abs(exact.u2(x, yb, 0.3)).max() <= 1e-14


def test_concentrations_sum_constant(exact):
    rng = np.random.default_rng(1)
    x, y, t = rng.random(20), rng.random(20), rng.random(20)
    assert np.abs(exact.cp(x, y, t) + exact.cn(x, y, t) - 2.4).max() <= 1e-14


def test_exact_velocity_divergence_free(exact):
    rng = np.random.default_rng(2)
    x, y, t = rng.random(10), rng.random(10), rng.random(10)
    assert np.abs(exact.divergence_u(x, y, t)).max() <= 1e-12


def test_concentrations_positive(exact):
    x = np.linspace(0, 1, 41)
    X, Y = np.meshgrid(x, x)
    for t in (0.0, 0.25, 1.0):
        assert exact.cp(X, Y, t).min() > 0
        assert exact.cn(X, Y, t).min() > 0


def test_source_validation_fd(exact, sources, params):
    worst = mf.validate_sources(exact, sources, params, n_points=100)
    assert worst <= 1e-6


def test_poisson_source_two_evaluations(exact, sources, params):
    # closed form vs fourth-order finite differences of the potential
    rng = np.random.default_rng(3)
    x, y, t = (rng.uniform(0.1, 0.9, 30), rng.uniform(0.1, 0.9, 30),
               rng.uniform(0.0, 1.0, 30))
    h = 1e-3
    lap = (mf._fd2(lambda a: exact.v(a, y, t), x, h)
           + mf._fd2(lambda b: exact.v(x, b, t), y, h))
    charge = exact.cp(x, y, t) - exact.cn(x, y, t)
    fd_val = -params.lam * lap - charge
    assert np.abs(fd_val - sources.f_v(x, y, t)).max() <= 1e-6


def test_sources_decay_with_time(exact, sources):
    # every term carries at least one exp(-t) factor
    g = np.linspace(0.05, 0.95, 12)
    X, Y = np.meshgrid(g, g)
    def peak(t):
        fu = sources.f_u(X, Y, t)
        return max(np.abs(fu[0]).max(), np.abs(fu[1]).max(),
                   np.abs(sources.f_cp(X, Y, t)).max(),
                   np.abs(sources.f_v(X, Y, t)).max())
    assert peak(10.0) <= np.exp(-9.0) * peak(0.0)


def test_momentum_source_inviscid_limit_hand_value():
    # without stress and coupling the source is d_t u + (u.grad)u + grad p
    p = model.Params(dt=0.1, t_final=0.5, lam=1.0, pe=2.0, re=1.0, co=5.0,
                     k=1.0, mu0=1.0, mu_inf=0.5, lambda1=0.0, z=(1, -1),
                     w_steric=np.array([[2.0, 1.0], [1.0, 2.0]]))
    ex = mf.exact_solution_sec41()
    x, y, t = np.array([0.3]), np.array([0.7]), 0.1
    adv1 = ex.u1(x, y, t) * ex.u1_x(x, y, t) + ex.u2(x, y, t) * ex.u1_y(x, y, t)
    hand = (-ex.u1(x, y, t) + adv1 + ex.p_x(x, y, t)
            + p.co * (ex.cp(x, y, t) - ex.cn(x, y, t)) * ex.v_x(x, y, t))
    # k = 1, lambda1 = 0: stress divergence reduces to mu0 lap(u) / Re
    srcs = mf.source_terms(ex, p)
    lap1 = ex.u1_xx(x, y, t) + ex.u1_yy(x, y, t)
    full = hand - p.mu0 * lap1 / p.re
    assert np.abs(srcs.f_u(x, y, t)[0] - full).max() <= 1e-12


def test_mass_of_exact_solution_is_constant(exact):
    # the oscillatory part integrates to zero over the unit square
    from spnpflow import fem
    from spnpflow.mesh import build_rect_mesh, dof_map
    mesh = build_rect_mesh(0, 1, 0, 1, 24, 24)
    p2 = dof_map(mesh, 2)
    for t in (0.0, 0.3):
        c = fem.interpolate(lambda x, y: exact.cp(x, y, t), p2)
        assert abs(model.species_mass(c, mesh) - 1.2) <= 1e-6


def test_short_convergence_study_orders():
    rows = mf.convergence_study([8, 16], 24, validate=True)
    for key in mf.ERROR_KEYS:
        assert rows[1].errors[key] < rows[0].errors[key]
        assert 1.5 <= rows[1].orders[key] <= 3.5
    # halving dt reduces errors by a factor in the second-order range
    for key in ("p", "cp", "cn"):
        ratio = rows[0].errors[key] / rows[1].errors[key]
        assert 3.2 <= ratio <= 8.0


def test_convergence_csv_roundtrip(tmp_path):
    rows = [
        mf.ConvergenceRow(n_steps=8, dt=0.0625,
                          errors={k: 1e-3 / (i + 1)
                                  for i, k in enumerate(mf.ERROR_KEYS)},
                          orders={k: float("nan") for k in mf.ERROR_KEYS}),
        mf.ConvergenceRow(n_steps=16, dt=0.03125,
                          errors={k: 2.5e-4 / (i + 1)
                                  for i, k in enumerate(mf.ERROR_KEYS)},
                          orders={k: 2.0 for k in mf.ERROR_KEYS}),
    ]
    path = tmp_path / "conv.csv"
    mf.write_convergence_csv(rows, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].split(",")[:2] == ["N", "dt"]
    assert len(lines) == 3
    first = lines[1].split(",")
    assert int(first[0]) == 8
    assert float(first[2]) == rows[0].errors["u"]


def test_convergence_rejects_nonincreasing_steps():
    with pytest.raises(ValueError):
        mf.convergence_study([16, 8], 8, validate=False)


@pytest.mark.full_resolution
def test_full_scale_reference_points():
    # frozen reference errors and orders for the temporal study at
    # h = sqrt(2)/256
    rows = mf.convergence_study([16, 32, 64], 256, validate=False)
    by_n = {r.n_steps: r for r in rows}
    assert by_n[32].errors["u"] == pytest.approx(1.1072e-04, rel=0.5)
    assert by_n[32].orders["u"] == pytest.approx(2.05, abs=0.35)
    assert by_n[64].errors["V"] == pytest.approx(2.1130e-07, rel=0.5)
    assert by_n[64].orders["V"] == pytest.approx(2.53, abs=0.6)
