import numpy as np
import pytest

from spnpflow import fem, model
from spnpflow.mesh import build_rect_mesh, dof_map
from spnpflow.scenarios import (STERIC_MATRICES, count_interior_extrema,
                                kinetic_energy, scenario_energy_decay,
                                scenario_exponent_k, scenario_steric,
                                stream_function)


def test_energy_decay_initial_data():
    scen = scenario_energy_decay(nx=10)
    mesh = scen.build_mesh()
    p2 = dof_map(mesh, 2)
    cp = fem.interpolate(scen.c0_fns[0], p2)
    cn = fem.interpolate(scen.c0_fns[1], p2)
    assert abs(model.species_mass(cp, mesh) - 12.0) <= 1e-8
    assert abs(model.species_mass(cn, mesh) - 12.0) <= 1e-8
    # zero net charge, so the strict Neumann solve is compatible
    assert abs(model.species_mass(cp, mesh)
               - model.species_mass(cn, mesh)) <= 1e-10
    assert model.min_concentration(cp, mesh) >= 2.0 - 1e-9
    p = scen.params
    assert (p.lam, p.pe, p.re, p.co) == (0.2, 50.0, 1.0, 0.6)
    assert (p.k, p.mu0, p.mu_inf, p.lambda1) == (0.2, 1.5, 0.5, 0.1)
    assert np.array_equal(p.w_steric, np.diag([2.0, 2.0]))


def test_steric_matrices_and_initial_data():
    assert np.array_equal(STERIC_MATRICES[0], np.zeros((2, 2)))
    scen = scenario_steric(0, nx=8)
    cp0 = scen.c0_fns[0]
    # both tanh profiles saturate at the top-right corner
    assert cp0(np.array([1.0]), np.array([1.0]))[0] == pytest.approx(1.0,
                                                                     abs=1e-4)
    g = np.linspace(0, 1, 30)
    X, Y = np.meshgrid(g, g)
    assert cp0(X, Y).min() >= 1e-6
    assert scen.neutralize_net_charge
    p = scen.params
    assert (p.lam, p.pe, p.re, p.co, p.k) == (0.1, 50.0, 5.0, 5.0, 0.5)
    assert scen.snapshot_times == (0.002, 0.1, 1.0)


def test_steric_index_validation():
    with pytest.raises(ValueError):
        scenario_steric(5)
    with pytest.raises(ValueError):
        scenario_steric(-1)


def test_exponent_k_initial_data():
    scen = scenario_exponent_k(0.4, nx=8)
    cp0 = scen.c0_fns[0]
    center = cp0(np.array([0.4]), np.array([0.4]))[0]
    assert center == pytest.approx(1.0 + 1e-6 + np.tanh(0.25), abs=1e-12)
    assert center == pytest.approx(1.2449, abs=1e-3)
    far = cp0(np.array([0.05]), np.array([0.95]))[0]
    assert 0.0 < far < 2e-6
    assert scen.bc_mode == "dirichlet_lr"
    p = scen.params
    assert (p.lam, p.pe, p.re, p.co) == (0.1, 50.0, 50.0, 100.0)
    assert (p.mu0, p.mu_inf, p.lambda1) == (1.0, 0.1, 0.1)
    with pytest.raises(ValueError):
        scenario_exponent_k(-1.0)


def test_exponent_k_newtonian_viscosity_exact():
    scen = scenario_exponent_k(1.0, nx=6, dt=1e-3, t_final=3e-3)
    st = scen.make_stepper()
    st.run()
    assert (st.curr.mu_q == scen.params.mu0).all()


def test_stream_function_single_vortex_detection():
    # a rotating field u = curl(sin^2 structure) has one interior extremum
    mesh = build_rect_mesh(0, 1, 0, 1, 16, 16)
    p2 = dof_map(mesh, 2)
    u = fem.interpolate(
        lambda x, y: (np.pi * np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y),
                      -np.pi * np.sin(2 * np.pi * x)
                      * np.sin(np.pi * y) ** 2), p2, components=2)
    chi = stream_function(u, mesh)
    assert count_interior_extrema(chi, mesh) == 1
    assert kinetic_energy(u, mesh) > 0


def test_stream_function_two_vortices_detected():
    mesh = build_rect_mesh(0, 1, 0, 1, 20, 20)
    p2 = dof_map(mesh, 2)
    # two counter-rotating cells stacked in y
    psi = lambda x, y: np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y)
    u = fem.interpolate(
        lambda x, y: (2 * np.pi * np.sin(np.pi * x) ** 2
                      * np.cos(2 * np.pi * y),
                      -np.pi * np.sin(2 * np.pi * x)
                      * np.sin(2 * np.pi * y)), p2, components=2)
    chi = stream_function(u, mesh)
    assert count_interior_extrema(chi, mesh) == 2


def test_scenario_overrides_apply():
    scen = scenario_energy_decay(nx=12, dt=5e-3, t_final=0.25)
    assert scen.nx == 12
    assert scen.params.dt == 5e-3
    assert scen.params.t_final == 0.25
