"""Full-order theta-scheme time stepper for the discrete obstacle problem.

Each backward-time step is a linear complementarity problem

    S u - lam = rhs,   u >= obstacle,   lam >= 0,   lam . (u - obstacle) = 0,

with S = mass/dt + theta * a(mu) and rhs = (mass/dt - (1-theta) * a(mu))
applied to the previous state plus the load.  Steps are solved with a
primal-dual active-set iteration: freeze a guess of the contact set, solve
the linear system with the state pinned to the obstacle there, read the
multiplier off the residual, update the set from the sign of
lam + c*(obstacle - u), and stop once the set repeats.  At a fixed point
complementarity holds exactly by construction.

On tridiagonal matrices each iteration costs O(H) through a banded
elimination; dense inputs (used by the reduced-order Schur complements
and by small test problems) take a dense path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded

from .errors import AmrbError, NumericalBreakdownError, SolverDivergenceError
from .fem import AffineOperatorSet, Mesh1D, ObstacleData, ParameterVector
from . import textio


@dataclass(frozen=True)
class SchemeConfig:
    """Time grid: horizon T split into L steps, weight theta in [0, 1]."""

    T: float
    L: int
    theta: float

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError(f"horizon must be positive, got T={self.T}")
        if self.L < 1:
            raise ValueError(f"need at least one time step, got L={self.L}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")

    @property
    def delta_t(self) -> float:
        return self.T / self.L


@dataclass(frozen=True)
class LcpProblem:
    """One complementarity problem S u - lam = rhs against a lower obstacle."""

    S: object  # dense (n, n) array or scipy sparse matrix
    rhs: np.ndarray
    obstacle: np.ndarray

    def __post_init__(self):
        diag = self.S.diagonal() if sp.issparse(self.S) else np.diag(np.asarray(self.S))
        if diag.size != self.rhs.size or self.rhs.size != self.obstacle.size:
            raise ValueError("inconsistent LCP dimensions")
        if diag.size == 0:
            raise ValueError("empty LCP")
        if float(np.min(diag)) <= 0.0:
            raise ValueError("LCP matrix must have a positive diagonal")


def _tridiagonal_bands(S):
    """Return (sub, diag, super) diagonals if S is tridiagonal sparse, else None."""
    if not sp.issparse(S):
        return None
    d = S.diagonal()
    du = S.diagonal(1)
    dl = S.diagonal(-1)
    resid = (S - sp.diags([dl, d, du], offsets=(-1, 0, 1), shape=S.shape)).tocsr()
    resid.eliminate_zeros()
    if resid.nnz:
        return None
    return dl, d, du


def _solve_for_active_set(S, dense, bands, rhs, obstacle, active):
    """Solve with the state pinned to the obstacle on the active set."""
    n = rhs.size
    u = np.empty(n)
    inactive = ~active
    if not inactive.any():
        u[:] = obstacle
    else:
        ix = np.flatnonzero(inactive)
        shifted = rhs
        if active.any():
            pinned = np.zeros(n)
            pinned[active] = obstacle[active]
            shifted = rhs - S @ pinned
        sub_rhs = shifted[ix]
        try:
            if bands is not None:
                dl, d, du = bands
                m = ix.size
                ab = np.zeros((3, m))
                ab[1] = d[ix]
                if m > 1:
                    # a sorted index subset of a tridiagonal matrix is tridiagonal
                    adjacent = np.diff(ix) == 1
                    ab[0, 1:] = np.where(adjacent, du[ix[:-1]], 0.0)
                    ab[2, :-1] = np.where(adjacent, dl[ix[:-1]], 0.0)
                sol = solve_banded((1, 1), ab, sub_rhs)
            else:
                sol = np.linalg.solve(dense[np.ix_(ix, ix)], sub_rhs)
        except np.linalg.LinAlgError as err:
            raise NumericalBreakdownError(
                f"singular linear system on an active-set iterate: {err}",
                active_size=int(active.sum())) from err
        u[ix] = sol
        u[active] = obstacle[active]
    lam = S @ u - rhs
    lam[inactive] = 0.0
    return u, lam


def solve_lcp(problem: LcpProblem, penalty: float = 1.0,
              max_iter: int = 100) -> tuple[np.ndarray, np.ndarray, int]:
    """Primal-dual active-set solve.

    Returns (u, lam, number of linear solves).  The iteration starts from
    the unconstrained solve and stops as soon as the updated active set
    {i : lam_i + penalty*(obstacle_i - u_i) > 0} reproduces the current
    one, which makes the final iterate feasible and exactly complementary.

    The full-set update can cycle on strongly coupled non-M matrices (the
    reduced Schur complements are the prime source).  A revisited active
    set therefore switches the iteration to least-index single toggles,
    which terminate for P-matrices and keep the run deterministic.
    """
    S, rhs, obstacle = problem.S, np.asarray(problem.rhs, float), np.asarray(problem.obstacle, float)
    bands = _tridiagonal_bands(S)
    if bands is not None:
        dense = None
    else:
        dense = S.toarray() if sp.issparse(S) else np.asarray(S, dtype=float)
    n = rhs.size
    active = np.zeros(n, dtype=bool)
    u, lam = _solve_for_active_set(S, dense, bands, rhs, obstacle, active)
    solves = 1
    seen = {active.tobytes()}
    least_index_mode = False
    while True:
        if least_index_mode:
            gap = u - obstacle
            violated = np.flatnonzero(np.where(active, lam < 0.0, gap < 0.0))
            if violated.size == 0:
                return u, lam, solves
            new_active = active.copy()
            new_active[violated[0]] = not new_active[violated[0]]
        else:
            new_active = (lam + penalty * (obstacle - u)) > 0.0
            if np.array_equal(new_active, active):
                return u, lam, solves
            if new_active.tobytes() in seen:
                least_index_mode = True
                continue
            seen.add(new_active.tobytes())
        if solves >= max_iter:
            gap = u - obstacle
            raise SolverDivergenceError(
                f"active set did not settle after {max_iter} updates",
                min_gap=float(gap.min()),
                min_multiplier=float(lam.min()),
                complementarity=abs(float(lam @ gap)),
            )
        active = new_active
        u, lam = _solve_for_active_set(S, dense, bands, rhs, obstacle, active)
        solves += 1


def theta_step(u_prev: np.ndarray, mu, ops: AffineOperatorSet,
               obstacle: ObstacleData, config: SchemeConfig):
    """One backward-time step; returns (u_next, lam_next, solver iterations)."""
    a_mu = ops.a_matrix(mu)
    m_dt = (ops.mass * (1.0 / config.delta_t)).tocsr()
    s_matrix = (m_dt + config.theta * a_mu).tocsr()
    rhs = m_dt @ u_prev - (1.0 - config.theta) * (a_mu @ u_prev) + ops.f_vector(mu)
    return solve_lcp(LcpProblem(S=s_matrix, rhs=rhs, obstacle=obstacle.psi_tilde))


@dataclass(frozen=True)
class Trajectory:
    """States u^0..u^L and multipliers lam^1..lam^L for one parameter.

    Row 0 of ``states`` is the lifted payoff; the scheme defines no
    multiplier for the initial time, so ``multipliers`` starts at step 1.
    """

    mu: ParameterVector
    states: np.ndarray        # (L+1, H)
    multipliers: np.ndarray   # (L, H)
    config: SchemeConfig
    pdas_iterations: np.ndarray  # (L,) linear solves per step


def solve_trajectory(mu, ops: AffineOperatorSet, obstacle: ObstacleData,
                     config: SchemeConfig) -> Trajectory:
    """March the theta-scheme from the lifted payoff over all L steps."""
    H = ops.dim
    states = np.empty((config.L + 1, H))
    multipliers = np.empty((config.L, H))
    iterations = np.empty(config.L, dtype=int)
    states[0] = obstacle.psi_tilde
    for n in range(config.L):
        try:
            u, lam, its = theta_step(states[n], mu, ops, obstacle, config)
        except AmrbError as err:
            raise type(err)(f"time step {n + 1} failed: {err}",
                            step=n + 1, **err.info) from err
        states[n + 1] = u
        multipliers[n] = lam
        iterations[n] = its
    return Trajectory(mu=mu, states=states, multipliers=multipliers,
                      config=config, pdas_iterations=iterations)


def trajectory_residuals(traj: Trajectory, ops: AffineOperatorSet,
                         obstacle: ObstacleData) -> dict:
    """Worst-case feasibility, complementarity, and linear residuals."""
    cfg = traj.config
    a_mu = ops.a_matrix(traj.mu)
    m_dt = (ops.mass * (1.0 / cfg.delta_t)).tocsr()
    s_matrix = (m_dt + cfg.theta * a_mu).tocsr()
    f_mu = ops.f_vector(traj.mu)
    psi_tilde = obstacle.psi_tilde

    min_gap = np.inf
    min_multiplier = np.inf
    max_comp = 0.0
    max_lin = 0.0
    for n in range(cfg.L):
        u = traj.states[n + 1]
        lam = traj.multipliers[n]
        rhs = m_dt @ traj.states[n] - (1.0 - cfg.theta) * (a_mu @ traj.states[n]) + f_mu
        residual = s_matrix @ u - lam - rhs
        scale = max(1.0, float(np.abs(rhs).max()))
        max_lin = max(max_lin, float(np.abs(residual).max()) / scale)
        gap = u - psi_tilde
        min_gap = min(min_gap, float(gap.min()))
        min_multiplier = min(min_multiplier, float(lam.min()))
        comp_scale = 1.0 + float(np.abs(u).max()) * float(np.abs(lam).max())
        max_comp = max(max_comp, abs(float(lam @ gap)) / comp_scale)
    return {
        "min_state_gap": min_gap,
        "min_multiplier": min_multiplier,
        "max_complementarity": max_comp,
        "max_linear_residual": max_lin,
    }


def state_rows(states: np.ndarray, multipliers, mesh: Mesh1D, K: float,
               delta_t: float, source: str | None = None):
    """Yield CSV rows (step, t, s, u, lambda, price[, source]).

    The multiplier column for step 0 is written as nan: the scheme defines
    no multiplier there.
    """
    s = mesh.interior_nodes
    lift = K * (1.0 - s / mesh.s_f)
    for n in range(states.shape[0]):
        t = n * delta_t
        lam_row = multipliers[n - 1] if (multipliers is not None and n >= 1) else None
        for j in range(s.size):
            lam = float(lam_row[j]) if lam_row is not None else float("nan")
            row = [n, t, s[j], states[n, j], lam, states[n, j] + lift[j]]
            if source is not None:
                row.append(source)
            yield row


def write_trajectory_csv(path, traj: Trajectory, mesh: Mesh1D,
                         source: str | None = None) -> None:
    """Trajectory export: one row per (step, node), header mandatory."""
    header = ["step", "t", "s", "u", "lambda", "price"]
    if source is not None:
        header.append("source")
    textio.write_csv(path, header, state_rows(
        traj.states, traj.multipliers, mesh, traj.mu.K, traj.config.delta_t, source))
