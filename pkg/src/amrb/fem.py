"""1-D P1 finite element machinery for the put-option obstacle problem.

The truncated asset domain (0, s_f) carries a uniform mesh with H interior
nodes; the affine boundary lift K*(1 - s/s_f) is subtracted from the price
so all fields satisfy homogeneous Dirichlet conditions.  The bilinear form
and load separate into parameter-independent blocks,

    a(mu) = sigma^2 * a1 + (r - q) * a2 + r * a3,
    f(mu) = K*q * f1 - K*r * f2,

where a1 is the s^2-diffusion block (the 1/2 factor folded in), a2 the
convection block -<s u', v>, a3 the reaction/mass block <u, v>, f1 the
ramp load <s/s_f, phi_i> and f2 the constant load <1, phi_i>.

The energy inner product <u, v> = <s u', s v'> + <u, v> has Gram matrix
``gram``.  Multipliers are expanded in the basis biorthogonal to the nodal
hats, so their duality action on a coefficient vector is a plain dot
product, the dual norm is sqrt(eta' gram^{-1} eta), and the Riesz lift of
a multiplier (its supremizer) is gram^{-1} eta.  One banded Cholesky
factorization of ``gram`` backs all of these at O(H) per solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve_banded, cholesky_banded

from .errors import AssemblyError, IllConditionedBasisError

_INV_SQRT3 = 1.0 / np.sqrt(3.0)


@dataclass(frozen=True)
class Mesh1D:
    """Uniform grid on (0, s_f) with H interior degrees of freedom."""

    s_f: float
    H: int
    delta_s: float
    nodes: np.ndarray

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[1:-1]


def build_mesh(H: int, s_f: float) -> Mesh1D:
    """Uniform mesh with H interior nodes and spacing s_f / (H + 1)."""
    if H < 2:
        raise ValueError(f"need at least 2 interior nodes, got H={H}")
    if s_f <= 0:
        raise ValueError(f"upper asset bound must be positive, got s_f={s_f}")
    H = int(H)
    s_f = float(s_f)
    nodes = np.linspace(0.0, s_f, H + 2)
    return Mesh1D(s_f=s_f, H=H, delta_s=s_f / (H + 1), nodes=nodes)


@dataclass(frozen=True)
class ParameterVector:
    """Market parameters: strike, interest rate, dividend rate, volatility."""

    K: float
    r: float
    q: float
    sigma: float

    def __post_init__(self):
        if self.K <= 0:
            raise ValueError(f"strike must be positive, got K={self.K}")
        if self.sigma <= 0:
            raise ValueError(f"volatility must be positive, got sigma={self.sigma}")

    def as_array(self) -> np.ndarray:
        return np.array([self.K, self.r, self.q, self.sigma], dtype=float)


@dataclass(frozen=True)
class ParameterBox:
    """Product of per-coordinate intervals [(1 -/+ eps/2) * center]."""

    K0: float
    r0: float
    q0: float
    sigma0: float
    eps: float

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError(f"relative half-width must be nonnegative, got eps={self.eps}")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        center = np.array([self.K0, self.r0, self.q0, self.sigma0], dtype=float)
        a = (1.0 - 0.5 * self.eps) * center
        b = (1.0 + 0.5 * self.eps) * center
        # a negative center flips the interval endpoints
        return np.minimum(a, b), np.maximum(a, b)

    def center(self) -> ParameterVector:
        return ParameterVector(K=self.K0, r=self.r0, q=self.q0, sigma=self.sigma0)

    def contains(self, mu, rtol: float = 1e-12) -> bool:
        lo, hi = self.bounds()
        x = np.array([mu.K, mu.r, mu.q, mu.sigma], dtype=float)
        pad = rtol * (1.0 + np.abs(hi))
        return bool(np.all(x >= lo - pad) and np.all(x <= hi + pad))


@dataclass(frozen=True)
class AffineOperatorSet:
    """Parameter-separable operator blocks plus inner-product machinery."""

    mesh: Mesh1D
    gram: sp.csr_matrix
    mass: sp.csr_matrix
    a1: sp.csr_matrix
    a2: sp.csr_matrix
    a3: sp.csr_matrix
    f1: np.ndarray
    f2: np.ndarray
    gram_chol: np.ndarray

    @property
    def dim(self) -> int:
        return self.mesh.H

    def a_matrix(self, mu) -> sp.csr_matrix:
        """Assembled bilinear form sigma^2*a1 + (r - q)*a2 + r*a3."""
        return ((mu.sigma ** 2) * self.a1 + (mu.r - mu.q) * self.a2 + mu.r * self.a3).tocsr()

    def f_vector(self, mu) -> np.ndarray:
        return mu.K * mu.q * self.f1 - mu.K * mu.r * self.f2

    def v_inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(u @ (self.gram @ v))

    def v_norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(self.v_inner(u, u), 0.0)))

    def x_solve(self, b: np.ndarray) -> np.ndarray:
        """Apply gram^{-1} through the stored banded Cholesky factor."""
        return cho_solve_banded((self.gram_chol, False), b)


def _upper_banded(matrix: sp.spmatrix) -> np.ndarray:
    n = matrix.shape[0]
    ab = np.zeros((2, n))
    ab[1] = matrix.diagonal()
    ab[0, 1:] = matrix.diagonal(1)
    return ab


def assemble_operators(mesh: Mesh1D) -> AffineOperatorSet:
    """Assemble all operator blocks with 2-point Gauss quadrature.

    Each integrand is a polynomial of degree at most two in s per element,
    so the rule is exact; the P1 hat overlap makes every block tridiagonal.
    """
    nodes = mesh.nodes
    h = np.diff(nodes)
    left, right = nodes[:-1], nodes[1:]
    mid = 0.5 * (left + right)
    gp = np.stack([mid - 0.5 * h * _INV_SQRT3, mid + 0.5 * h * _INV_SQRT3])  # (2, nel)
    gw = np.stack([0.5 * h, 0.5 * h])

    val = np.stack([(right - gp) / h, (gp - left) / h])  # val[a, g, e], a = local node
    der = np.stack([-1.0 / h, 1.0 / h])                  # der[a, e], constant per element

    # conv[a, b, e] = int s * trial_b' * test_a over element e
    conv = np.einsum("ge,ge,age,be->abe", gw, gp, val, der)
    sgrad = np.einsum("ge,ge,ae,be->abe", gw, gp ** 2, der, der)
    mass_loc = np.einsum("ge,age,bge->abe", gw, val, val)

    n_all = mesh.H + 2
    elems = np.arange(h.size)
    rows = np.concatenate([elems, elems, elems + 1, elems + 1])
    cols = np.concatenate([elems, elems + 1, elems, elems + 1])

    def scatter(block: np.ndarray) -> sp.csr_matrix:
        data = np.concatenate([block[0, 0], block[0, 1], block[1, 0], block[1, 1]])
        full = sp.coo_matrix((data, (rows, cols)), shape=(n_all, n_all)).tocsr()
        return full[1:-1, 1:-1].tocsr()

    def scatter_vec(block: np.ndarray) -> np.ndarray:
        full = np.zeros(n_all)
        np.add.at(full, elems, block[0])
        np.add.at(full, elems + 1, block[1])
        return full[1:-1]

    mass = scatter(mass_loc)
    gram = scatter(sgrad + mass_loc)
    a1 = scatter(conv + 0.5 * sgrad)
    a2 = scatter(-conv)
    f1 = scatter_vec(np.einsum("ge,ge,age->ae", gw, gp / mesh.s_f, val))
    f2 = scatter_vec(np.einsum("ge,age->ae", gw, val))

    try:
        gram_chol = cholesky_banded(_upper_banded(gram), lower=False)
        cholesky_banded(_upper_banded(mass), lower=False)
    except np.linalg.LinAlgError as err:
        raise AssemblyError(f"inner-product matrices are not SPD: {err}") from err

    return AffineOperatorSet(
        mesh=mesh, gram=gram, mass=mass, a1=a1, a2=a2, a3=mass,
        f1=f1, f2=f2, gram_chol=gram_chol,
    )


@dataclass(frozen=True)
class ObstacleData:
    """Nodal payoff, boundary lift, and lifted obstacle at interior nodes."""

    psi: np.ndarray
    p0: np.ndarray
    psi_tilde: np.ndarray


def obstacle_data(mesh: Mesh1D, K: float) -> ObstacleData:
    if K <= 0:
        raise ValueError(f"strike must be positive, got K={K}")
    s = mesh.interior_nodes
    psi = np.maximum(K - s, 0.0)
    p0 = K * (1.0 - s / mesh.s_f)
    return ObstacleData(psi=psi, p0=p0, psi_tilde=psi - p0)


@dataclass(frozen=True)
class DualVector:
    """Multiplier in the basis biorthogonal to the nodal hat functions.

    Biorthogonality makes the duality action on a primal coefficient
    vector a plain dot product, and cone membership a sign condition on
    the coefficients.
    """

    coeffs: np.ndarray

    def apply(self, v: np.ndarray) -> float:
        return float(np.asarray(self.coeffs) @ v)

    def in_cone(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.asarray(self.coeffs) >= -tol))


def dual_coeffs(eta) -> np.ndarray:
    """Coefficient array of a DualVector or a raw array-like."""
    coeffs = eta.coeffs if isinstance(eta, DualVector) else eta
    return np.asarray(coeffs, dtype=float)


def w_inner(eta, zeta, ops: AffineOperatorSet) -> float:
    """Dual-space inner product eta' gram^{-1} zeta."""
    e = dual_coeffs(eta)
    z = dual_coeffs(zeta)
    if e.shape != (ops.dim,) or z.shape != (ops.dim,):
        raise ValueError(f"dual vectors must have shape ({ops.dim},), got {e.shape} and {z.shape}")
    return float(e @ ops.x_solve(z))


def w_norm(eta, ops: AffineOperatorSet) -> float:
    return float(np.sqrt(max(w_inner(eta, eta, ops), 0.0)))


def riesz_supremizer(xi, ops: AffineOperatorSet) -> np.ndarray:
    """Primal representative of a dual vector: gram * (lift) = coefficients.

    The lift realizes the duality pairing through the energy inner product,
    so its energy norm equals the dual norm of the input.
    """
    c = dual_coeffs(xi)
    if c.shape != (ops.dim,):
        raise ValueError(f"dual vector must have shape ({ops.dim},), got {c.shape}")
    return ops.x_solve(c)


def v_project(v: np.ndarray, basis, ops: AffineOperatorSet,
              cond_limit: float = 1e12) -> tuple[np.ndarray, float]:
    """Energy-orthogonal projection of v onto the span of the basis.

    Returns the coefficients of the best approximation and the energy norm
    of the projection error, via the normal equations with the basis Gram
    matrix.
    """
    v = np.asarray(v, dtype=float)
    if isinstance(basis, np.ndarray) and basis.ndim == 2:
        cols = basis
    elif len(basis):
        cols = np.column_stack([np.asarray(b, dtype=float) for b in basis])
    else:
        cols = np.zeros((v.size, 0))
    if cols.shape[1] == 0:
        return np.zeros(0), ops.v_norm(v)
    xcols = ops.gram @ cols
    gmat = cols.T @ xcols
    gmat = 0.5 * (gmat + gmat.T)
    cond = np.linalg.cond(gmat)
    if not np.isfinite(cond) or cond >= cond_limit:
        raise IllConditionedBasisError(
            f"projection basis has Gram condition number {cond:.3e}", cond=float(cond))
    coeffs = np.linalg.solve(gmat, xcols.T @ v)
    return coeffs, ops.v_norm(v - cols @ coeffs)
