import numpy as np
import pytest
import sympy as sym

from amrb import (
    DualVector,
    IllConditionedBasisError,
    ParameterBox,
    ParameterVector,
    assemble_operators,
    build_mesh,
    obstacle_data,
    riesz_supremizer,
    v_project,
    w_inner,
    w_norm,
)

from conftest import identity_operator_set


# ---------------------------------------------------------------------------
# mesh


def test_build_mesh_stock_spacing():
    mesh = build_mesh(99, 300.0)
    assert mesh.delta_s == 3.0
    assert mesh.nodes.size == 101
    assert mesh.nodes[50] == 150.0


def test_build_mesh_tiny():
    mesh = build_mesh(2, 3.0)
    assert np.array_equal(mesh.nodes, [0.0, 1.0, 2.0, 3.0])


@pytest.mark.parametrize("H,s_f", [(2, 1.0), (7, 2.5), (99, 300.0), (500, 123.4)])
def test_mesh_invariants(H, s_f):
    mesh = build_mesh(H, s_f)
    assert np.all(np.diff(mesh.nodes) > 0)
    assert mesh.nodes[0] == 0.0
    assert mesh.nodes[-1] == s_f
    assert abs(mesh.delta_s * (H + 1) - s_f) <= 1e-12 * s_f


@pytest.mark.parametrize("H,s_f", [(1, 10.0), (0, 10.0), (5, 0.0), (5, -1.0)])
def test_build_mesh_invalid(H, s_f):
    with pytest.raises(ValueError):
        build_mesh(H, s_f)


def test_parameter_vector_validation():
    with pytest.raises(ValueError):
        ParameterVector(K=0.0, r=0.05, q=0.0, sigma=0.5)
    with pytest.raises(ValueError):
        ParameterVector(K=100.0, r=0.05, q=0.0, sigma=0.0)
    mu = ParameterVector(K=100.0, r=-0.01, q=-0.02, sigma=0.5)  # negative rates allowed
    assert mu.r == -0.01


def test_parameter_box_bounds():
    box = ParameterBox(K0=100.0, r0=0.05, q0=0.0015, sigma0=0.5, eps=0.1)
    lo, hi = box.bounds()
    assert np.allclose(lo, [95.0, 0.0475, 0.001425, 0.475])
    assert np.allclose(hi, [105.0, 0.0525, 0.001575, 0.525])
    assert box.contains(ParameterVector(K=100.0, r=0.05, q=0.0015, sigma=0.5))
    assert not box.contains(ParameterVector(K=106.9, r=0.05, q=0.0015, sigma=0.5))


def test_parameter_box_negative_center_flips_interval():
    box = ParameterBox(K0=100.0, r0=-0.05, q0=0.0015, sigma0=0.5, eps=0.1)
    lo, hi = box.bounds()
    assert lo[1] == pytest.approx(-0.0525)
    assert hi[1] == pytest.approx(-0.0475)


# ---------------------------------------------------------------------------
# assembly against closed forms and symbolic integration


def test_mass_closed_form(default_ops, default_mesh):
    ds = default_mesh.delta_s
    mass = default_ops.mass.toarray()
    assert np.allclose(np.diag(mass), 2 * ds / 3, rtol=1e-13)
    assert np.allclose(np.diag(mass, 1), ds / 6, rtol=1e-13)


def test_a3_is_mass(default_ops):
    assert (default_ops.a3 - default_ops.mass).nnz == 0


def _hat_pieces(i, nodes):
    """Symbolic P1 hat centered at nodes[i] as per-element polynomials."""
    s = sym.Symbol("s")
    pieces = {}
    left, center, right = nodes[i - 1], nodes[i], nodes[i + 1]
    pieces[i - 1] = (s - left) / (center - left)
    pieces[i] = (right - s) / (right - center)
    return pieces


def _symbolic_blocks(H, s_f):
    s = sym.Symbol("s")
    nodes = [sym.Rational(s_f) * m / (H + 1) for m in range(H + 2)]
    hats = {i: _hat_pieces(i, nodes) for i in range(1, H + 1)}

    def integrate(expr_by_element):
        total = sym.Integer(0)
        for e, expr in expr_by_element.items():
            total += sym.integrate(expr, (s, nodes[e], nodes[e + 1]))
        return total

    def pair(i, j, integrand):
        shared = set(hats[i]) & set(hats[j])
        return integrate({e: integrand(hats[i][e], hats[j][e]) for e in shared})

    mass = np.zeros((H, H))
    gram = np.zeros((H, H))
    a1 = np.zeros((H, H))
    a2 = np.zeros((H, H))
    f1 = np.zeros(H)
    f2 = np.zeros(H)
    for i in range(1, H + 1):
        for j in range(1, H + 1):
            if abs(i - j) > 1:
                continue
            m_ij = pair(i, j, lambda ti, tj: ti * tj)
            mass[i - 1, j - 1] = float(m_ij)
            gram[i - 1, j - 1] = float(
                pair(i, j, lambda ti, tj: s ** 2 * sym.diff(ti, s) * sym.diff(tj, s)) + m_ij)
            # row = test index i, column = trial index j
            a1[i - 1, j - 1] = float(
                pair(i, j, lambda ti, tj: sym.Rational(1, 2) * sym.diff(tj, s)
                     * sym.diff(s ** 2 * ti, s)))
            a2[i - 1, j - 1] = float(pair(i, j, lambda ti, tj: -s * sym.diff(tj, s) * ti))
        f1[i - 1] = float(integrate({e: (s / s_f) * expr for e, expr in hats[i].items()}))
        f2[i - 1] = float(integrate({e: expr for e, expr in hats[i].items()}))
    return mass, gram, a1, a2, f1, f2


def test_symbolic_assembly_oracle():
    H, s_f = 3, 4.0
    ops = assemble_operators(build_mesh(H, s_f))
    mass, gram, a1, a2, f1, f2 = _symbolic_blocks(H, s_f)

    def check(actual, expected):
        actual = actual.toarray() if hasattr(actual, "toarray") else np.asarray(actual)
        assert np.all(np.abs(actual - expected) <= 1e-13 * (1.0 + np.abs(expected)))

    check(ops.mass, mass)
    check(ops.gram, gram)
    check(ops.a1, a1)
    check(ops.a2, a2)
    check(ops.f1, f1)
    check(ops.f2, f2)


def test_a2_rowsums_against_symbolic_oracle():
    # action of the convection block on the interior interpolant of 1
    H, s_f = 3, 4.0
    ops = assemble_operators(build_mesh(H, s_f))
    _, _, _, a2, _, _ = _symbolic_blocks(H, s_f)
    ones = np.ones(H)
    assert np.allclose(ops.a2 @ ones, a2 @ ones, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("H", [2, 17, 99, 1000, 10000])
def test_assembly_spd_across_sizes(H):
    ops = assemble_operators(build_mesh(H, 300.0))  # raises on Cholesky failure
    assert ops.gram_chol.shape == (2, H)


# ---------------------------------------------------------------------------
# obstacle data


def test_obstacle_stock_values(default_mesh):
    data = obstacle_data(default_mesh, 100.0)
    s = default_mesh.interior_nodes
    i150 = int(np.flatnonzero(s == 150.0)[0])
    assert data.psi[i150] == 0.0
    assert data.p0[i150] == 50.0
    assert data.psi_tilde[i150] == -50.0
    i90 = int(np.flatnonzero(s == 90.0)[0])
    assert data.psi[i90] == 10.0
    assert data.psi_tilde[i90] == pytest.approx(10.0 - 70.0)
    assert np.all(data.psi >= 0.0)


def test_obstacle_strike_at_boundary_vanishes(default_mesh):
    data = obstacle_data(default_mesh, default_mesh.s_f)
    assert np.abs(data.psi_tilde).max() <= 1e-12 * default_mesh.s_f


def test_obstacle_invalid_strike(default_mesh):
    with pytest.raises(ValueError):
        obstacle_data(default_mesh, 0.0)


# ---------------------------------------------------------------------------
# dual-space machinery


def test_dual_biorthogonal_action():
    eta = DualVector(coeffs=np.array([0.0, 1.0, 0.0]))
    assert eta.apply(np.array([5.0, 7.0, -2.0])) == 7.0
    assert eta.in_cone()
    assert not DualVector(coeffs=np.array([-1e-6, 1.0])).in_cone(tol=1e-9)


def test_w_inner_identity_is_dot_product():
    ops = identity_operator_set(6)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=6), rng.normal(size=6)
    assert w_inner(a, b, ops) == pytest.approx(float(a @ b), rel=1e-14)


def test_w_inner_dimension_mismatch(default_ops):
    with pytest.raises(ValueError):
        w_inner(np.ones(3), np.ones(default_ops.dim), default_ops)


def test_w_inner_is_inner_product(default_ops):
    rng = np.random.default_rng(1)
    H = default_ops.dim
    for _ in range(100):
        a, b = rng.normal(size=H), rng.normal(size=H)
        s_ab = w_inner(a, b, default_ops)
        assert s_ab == pytest.approx(w_inner(b, a, default_ops), rel=1e-10, abs=1e-12)
        # bilinearity in the first slot
        c = rng.normal(size=H)
        lhs = w_inner(2.5 * a + c, b, default_ops)
        assert lhs == pytest.approx(2.5 * s_ab + w_inner(c, b, default_ops),
                                    rel=1e-10, abs=1e-10)
        # Cauchy-Schwarz
        assert abs(s_ab) <= w_norm(a, default_ops) * w_norm(b, default_ops) * (1 + 1e-10)
    z = np.zeros(H)
    assert w_inner(z, z, default_ops) == 0.0
    assert w_inner(a, a, default_ops) > 0.0


def test_w_norm_is_the_dual_norm(default_ops):
    # sampled sup never exceeds the factorization-based value and the
    # analytic maximizer attains it
    rng = np.random.default_rng(42)
    H = default_ops.dim
    eta = rng.normal(size=H)
    wn = w_norm(eta, default_ops)
    V = rng.normal(size=(H, 10_000))
    ratios = (eta @ V) / np.sqrt(np.einsum("ij,ij->j", V, default_ops.gram @ V))
    assert ratios.max() <= wn * (1 + 1e-12)
    vstar = default_ops.x_solve(eta)
    attained = float(eta @ vstar) / default_ops.v_norm(vstar)
    assert attained == pytest.approx(wn, rel=1e-10)


def test_riesz_identity_ops():
    ops = identity_operator_set(5)
    xi = np.array([1.0, -2.0, 0.5, 0.0, 3.0])
    assert np.allclose(riesz_supremizer(xi, ops), xi)


def test_riesz_solve_residual_and_column(default_ops):
    H = default_ops.dim
    e5 = np.zeros(H)
    e5[5] = 1.0
    lift = riesz_supremizer(e5, default_ops)
    assert np.abs(default_ops.gram @ lift - e5).max() <= 1e-10
    rng = np.random.default_rng(3)
    xi = rng.normal(size=H) * 50
    lift = riesz_supremizer(xi, default_ops)
    assert np.abs(default_ops.gram @ lift - xi).max() <= 1e-10 * np.abs(xi).max()


def test_riesz_duality_pairing(default_ops):
    rng = np.random.default_rng(4)
    xi = rng.normal(size=default_ops.dim)
    lift = riesz_supremizer(xi, default_ops)
    target = default_ops.v_norm(lift) ** 2
    assert float(xi @ lift) == pytest.approx(target, rel=1e-10)
    assert w_norm(xi, default_ops) ** 2 == pytest.approx(target, rel=1e-10)


def test_riesz_isometry(default_ops):
    rng = np.random.default_rng(5)
    for _ in range(100):
        xi = rng.normal(size=default_ops.dim)
        lift = riesz_supremizer(xi, default_ops)
        assert default_ops.v_norm(lift) == pytest.approx(w_norm(xi, default_ops), rel=1e-10)


# ---------------------------------------------------------------------------
# projection


def test_v_project_member(default_ops):
    rng = np.random.default_rng(6)
    basis = [rng.normal(size=default_ops.dim) for _ in range(4)]
    coeffs, err = v_project(basis[2], basis, default_ops)
    assert err <= 1e-12 * default_ops.v_norm(basis[2])
    assert coeffs == pytest.approx([0, 0, 1, 0], abs=1e-9)


def test_v_project_empty_basis(default_ops):
    v = np.ones(default_ops.dim)
    coeffs, err = v_project(v, [], default_ops)
    assert coeffs.size == 0
    assert err == pytest.approx(default_ops.v_norm(v))


def test_v_project_orthogonal_residual(default_ops):
    rng = np.random.default_rng(7)
    basis = [rng.normal(size=default_ops.dim) for _ in range(6)]
    v = rng.normal(size=default_ops.dim)
    coeffs, _ = v_project(v, basis, default_ops)
    resid = v - np.column_stack(basis) @ coeffs
    scale = default_ops.v_norm(v)
    for b in basis:
        assert abs(default_ops.v_inner(resid, b)) <= 1e-10 * scale * default_ops.v_norm(b)


def test_v_project_ill_conditioned(default_ops):
    rng = np.random.default_rng(8)
    b = rng.normal(size=default_ops.dim)
    with pytest.raises(IllConditionedBasisError):
        v_project(rng.normal(size=default_ops.dim), [b, b + 1e-15 * rng.normal(size=b.size)],
                  default_ops)
