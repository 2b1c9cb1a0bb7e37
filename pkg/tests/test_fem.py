import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from twolevel_lpbf import fem, grid
from twolevel_lpbf.materials import ConstantMaterial, MaterialTable, PowderModel, SolidPowderMaterial

MAT = ConstantMaterial(16.0, 500.0, 8000.0)


def box_mesh(n=(3, 3, 3), size=(0.01, 0.01, 0.01)):
    return grid.Mesh(*(np.linspace(0, s, k + 1) for s, k in zip(size, n)))


def column(nz=8, L=0.012):
    return grid.build_global_mesh(((0, 0, 0), (0.002, 0.002, L)), 0.002, L / nz)


def all_solid(m):
    return np.ones((m.n_elements, 4), bool)


def test_equilibrium_adiabatic():
    m = box_mesh()
    bc = fem.BoundaryConditionSet.adiabatic()
    st_ = fem.DomainState(m, np.full(m.n_nodes, bc.T_amb), all_solid(m))
    sys = fem.assemble_step(m, st_, bc, 0.5, MAT)
    M = fem.mass_matrix(m, np.full((m.n_elements, 4), MAT.c * MAT.rho))
    np.testing.assert_allclose(sys.b, M @ st_.T, rtol=1e-14)
    np.testing.assert_allclose(fem.solve(sys, 1e-12), bc.T_amb, rtol=1e-12)


def test_linear_profile_between_dirichlet_ends():
    m = column()
    z = m.nodes[:, 2]
    bot, top = np.flatnonzero(z == 0), np.flatnonzero(np.isclose(z, z.max()))
    ids = np.concatenate([bot, top])
    vals = np.concatenate([np.full(len(bot), 300.0), np.full(len(top), 500.0)])
    st_ = fem.DomainState(m, np.full(m.n_nodes, 400.0), all_solid(m))
    sys = fem.assemble_step(m, st_, fem.BoundaryConditionSet.adiabatic(), None, MAT, dirichlet=(ids, vals))
    T = fem.solve(sys, 1e-14)
    assert np.max(np.abs(T - (300.0 + 200.0 * z / z.max()))) < 1e-10


def test_linear_field_reproduced_in_one_step():
    m = box_mesh((4, 3, 3))
    a, b, c, d = 350.0, 1e3, -2e3, 5e2
    exact = a + m.nodes @ np.array([b, c, d])
    st_ = fem.DomainState(m, exact, all_solid(m))
    bn = fem.boundary_nodes(m)
    sys = fem.assemble_step(m, st_, fem.BoundaryConditionSet.adiabatic(), 0.1, MAT,
                            dirichlet=(bn, exact[bn]))
    np.testing.assert_allclose(fem.solve(sys, 1e-12), exact, rtol=1e-10)


def test_matrix_symmetric_with_robin_and_radiation():
    m = box_mesh()
    T = 300 + 100 * np.random.default_rng(0).random(m.n_nodes)
    st_ = fem.DomainState(m, T, all_solid(m), fem.LOCAL)
    mat = SolidPowderMaterial(MaterialTable.ss316l(), PowderModel())
    sys = fem.assemble_step(m, st_, fem.BoundaryConditionSet(), 1.0, mat)
    assert (sys.A != sys.A.T).nnz == 0


def test_mass_and_stiffness_identities():
    m = box_mesh((2, 3, 2), (1.0, 2.0, 0.5))
    M = fem.mass_matrix(m, np.full((m.n_elements, 4), 2.0))
    assert M.sum() == pytest.approx(2.0 * 1.0 * 2.0 * 0.5, rel=1e-13)
    K = fem.stiffness_matrix(m, np.full((m.n_elements, 4), 3.0))
    assert np.max(np.abs(K @ np.ones(m.n_nodes))) < 1e-12


def test_source_load_integrates_volume():
    m = box_mesh((2, 2, 2), (1.0, 1.0, 2.0))
    f = fem.load_vector(m, np.full(m.n_elements, 5.0))
    assert f.sum() == pytest.approx(10.0)
    with pytest.raises(ValueError):
        fem.load_vector(m, np.ones(3))


def test_flux_length_checked():
    m = box_mesh()
    st_ = fem.DomainState(m, np.full(m.n_nodes, 300.0), all_solid(m))
    with pytest.raises(ValueError):
        fem.assemble_step(m, st_, fem.BoundaryConditionSet(), 1.0, MAT, flux=np.zeros(3))


def test_state_validation():
    m = box_mesh()
    with pytest.raises(ValueError):
        fem.DomainState(m, np.zeros(m.n_nodes), all_solid(m))
    with pytest.raises(ValueError):
        fem.DomainState(m, np.full(5, 300.0), all_solid(m))
    with pytest.raises(ValueError):
        fem.DomainState(m, np.full(m.n_nodes, 300.0), np.ones((2, 4), bool))


def test_radiation_only_on_local_top():
    bc = fem.BoundaryConditionSet()
    assert bc.condition(grid.TOP_SURFACE, fem.LOCAL).radiation
    assert not bc.condition(grid.TOP_SURFACE, fem.GLOBAL).radiation
    assert isinstance(bc.condition(grid.PLATE_LATERAL, fem.GLOBAL), fem.Adiabatic)
    assert bc.condition(grid.BOTTOM_PLATE, fem.GLOBAL).value == bc.T_bp
    assert isinstance(bc.condition(grid.GAMMA_BOTTOM, fem.LOCAL), fem.GammaDirichlet)
    with pytest.raises(ValueError):
        fem.BoundaryConditionSet(h_conv=-1)


def test_radiation_cools_hot_top():
    m = box_mesh((2, 2, 2))
    T = np.full(m.n_nodes, 1000.0)
    g = fem.DomainState(m, T, all_solid(m), fem.GLOBAL)
    loc = fem.DomainState(m, T, all_solid(m), fem.LOCAL)
    tag_top = {t: fem.Adiabatic() for t in grid.GLOBAL_TAGS + grid.LOCAL_TAGS if t != grid.TOP_SURFACE}
    bc = fem.BoundaryConditionSet(h_conv=0.0, overrides=tag_top)
    Tg = fem.solve(fem.assemble_step(m, g, bc, 1.0, MAT), 1e-12)
    Tl = fem.solve(fem.assemble_step(m, loc, bc, 1.0, MAT), 1e-12)
    np.testing.assert_allclose(Tg, 1000.0)
    # explicit flux at the lagged temperature: loss is exactly dt * q * area
    c_rho = np.full((m.n_elements, 4), MAT.c * MAT.rho)
    loss = fem.enthalpy(m, T, c_rho) - fem.enthalpy(m, Tl, c_rho)
    q = bc.emissivity * bc.sigma_sb * (1000.0**4 - bc.T_amb**4)
    assert loss == pytest.approx(q * 0.01 * 0.01, rel=1e-9)


def test_solve_identity():
    b = np.arange(1.0, 6.0)
    sys = fem.LinearSystem(sp.identity(5, format="csr"), b, np.zeros(0, int), np.zeros(0))
    np.testing.assert_allclose(fem.solve(sys), b)


def test_solve_three_node_poisson():
    A = sp.csr_matrix(np.array([[1.0, -1, 0], [-1, 2, -1], [0, -1, 1]]))
    sys = fem.LinearSystem(A, np.array([0.0, 1.0, 0.0]), np.array([0, 2]), np.array([1.0, 3.0]))
    # interior row: 2 x1 = 1 + 1 + 3
    np.testing.assert_allclose(fem.solve(sys, 1e-14), [1.0, 2.5, 3.0])


def test_solve_random_spd_against_dense(rng):
    B = rng.standard_normal((50, 50))
    A = B @ B.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x = fem.solve(fem.LinearSystem(sp.csr_matrix(A), b, np.zeros(0, int), np.zeros(0)), 1e-12)
    ref = np.linalg.solve(A, b)
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-8


def test_solve_nonconvergence_reports_residual(rng):
    B = rng.standard_normal((40, 40))
    A = sp.csr_matrix(B @ B.T + 1e-3 * np.eye(40))
    with pytest.raises(fem.SolverError) as exc:
        fem.solve(fem.LinearSystem(A, rng.standard_normal(40), np.zeros(0, int), np.zeros(0)),
                  1e-12, max_iter=2)
    assert exc.value.residual > 1e-12


def test_steady_plate_insulated_top():
    m = column()
    s = fem.steady_plate_solve(m, fem.BoundaryConditionSet(h_conv=0.0), MAT)
    np.testing.assert_allclose(s.T, 353.15, rtol=1e-10)


def test_steady_plate_equal_temperatures():
    m = column()
    s = fem.steady_plate_solve(m, fem.BoundaryConditionSet(h_conv=50.0, T_amb=353.15), MAT)
    np.testing.assert_allclose(s.T, 353.15, rtol=1e-10)


def test_steady_plate_robin_profile():
    m = column(L=0.012)
    h, k, L, Tb, Ta = 500.0, 16.0, 0.012, 353.15, 298.15
    s = fem.steady_plate_solve(m, fem.BoundaryConditionSet(h_conv=h), MAT)
    T_top = (k * Tb / L + h * Ta) / (k / L + h)
    exact = Tb + (T_top - Tb) * m.nodes[:, 2] / L
    assert np.max(np.abs(s.T - exact)) < 1e-8


def test_steady_plate_temperature_dependent_converges():
    m = column()
    mat = SolidPowderMaterial(MaterialTable.ss316l(), PowderModel())
    s = fem.steady_plate_solve(m, fem.BoundaryConditionSet(h_conv=2000.0), mat)
    z = m.nodes[:, 2]
    means = [s.T[np.isclose(z, zk)].mean() for zk in m.zs]
    assert s.T.min() < 353.15 and np.all(np.diff(means) < 0)


def test_element_gradient_cases(rng):
    m = box_mesh((2, 2, 2))
    assert np.allclose(fem.element_gradient(m, np.full(m.n_nodes, 7.0), 3), 0)
    np.testing.assert_allclose(fem.element_gradient(m, m.nodes[:, 0], 5), [1, 0, 0], atol=1e-12)
    a = rng.standard_normal(3) * 100
    T = m.nodes @ a + 4.0
    G = fem.element_gradients(m, T)
    assert np.max(np.abs(G - a)) < 1e-12 * np.abs(a).max() * 10


def test_maximum_principle_canary(rng):
    m = box_mesh((4, 4, 4))
    T0 = 300 + 200 * rng.random(m.n_nodes)
    bn = fem.boundary_nodes(m)
    st_ = fem.DomainState(m, T0, all_solid(m))
    sys = fem.assemble_step(m, st_, fem.BoundaryConditionSet.adiabatic(), None, MAT,
                            dirichlet=(bn, T0[bn]))
    T = fem.solve(sys, 1e-12)
    assert T.min() >= T0[bn].min() - 1e-8 and T.max() <= T0[bn].max() + 1e-8


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 10.0), st.integers(0, 2**31 - 1))
def test_enthalpy_conserved_adiabatic(dt, seed):
    m = box_mesh((3, 3, 2))
    T = 300 + 100 * np.random.default_rng(seed).random(m.n_nodes)
    c_rho = np.full((m.n_elements, 4), MAT.c * MAT.rho)
    H0 = fem.enthalpy(m, T, c_rho)
    st_ = fem.DomainState(m, T, all_solid(m))
    T1 = fem.solve(fem.assemble_step(m, st_, fem.BoundaryConditionSet.adiabatic(), dt, MAT), 1e-13)
    assert abs(fem.enthalpy(m, T1, c_rho) - H0) <= 1e-9 * H0


def test_smoothing_only_in_cut_elements():
    m = box_mesh((2, 1, 1))
    mat = SolidPowderMaterial(MaterialTable.ss316l(), PowderModel())
    solid = np.zeros((m.n_elements, 4), bool)
    solid[0] = [True, True, False, False]  # cut
    solid[1] = True  # fully solid
    T = 300 + 1e4 * m.nodes[:, 0]
    S = fem.smoothing_field(m, T, solid, mat)
    assert np.all(S[0, :2] == 1) and np.all(S[0, 2:] < 1)
    assert np.all(S[1:] == 1)
