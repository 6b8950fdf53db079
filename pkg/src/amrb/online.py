"""Online phase: parameter-fast reduced simulations and error metrics.

Per parameter, the reduced operator and load are combined from the stored
affine blocks, the step matrix is factorized once, and the obstacle data
(cone loads and the initial projection) is formed in a single O(H) pass.
Each time step then solves a small mixed complementarity system by
eliminating the state through the Schur complement and running the
primal-dual active-set iteration on the cone coefficients, so the
per-step cost depends only on the reduced dimensions.

The enriched basis is kept as a plain union of POD modes and supremizer
lifts, so its Gram matrix can be ill conditioned even though the spanned
space is fine.  All internal solves therefore run in energy-orthonormal
coordinates obtained from the Cholesky factor of the stored basis Gram;
coefficients are mapped back to the raw basis only at the interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, lu_factor, lu_solve, solve_triangular

from . import textio
from .errors import AmrbError, ModelCorruptionError
from .fem import AffineOperatorSet, Mesh1D, ParameterBox, ParameterVector, obstacle_data
from .offline import ReducedModel
from .truth import (
    LcpProblem,
    SchemeConfig,
    Trajectory,
    solve_lcp,
    solve_trajectory,
    state_rows,
)


@dataclass(frozen=True)
class OnlineData:
    """Per-parameter reduced operators, factorizations, and obstacle data.

    Fields with a ``_orth`` suffix live in the energy-orthonormal
    coordinates y = precond @ u; everything else is in raw basis
    coordinates.
    """

    mu: ParameterVector
    config: SchemeConfig
    a_n: np.ndarray            # (NV, NV) combined operator
    f_n: np.ndarray            # (NV,) combined load
    s_n: np.ndarray            # (NV, NV) step matrix mass/dt + theta * a_n
    g_n: np.ndarray            # (NW,) cone loads xi_j . obstacle
    u0: np.ndarray             # (NV,) projected initial state
    precond: np.ndarray        # (NV, NV) upper Cholesky factor of the basis Gram
    s_lu: tuple                # LU factorization of the orthonormalized step matrix
    rhs_orth: np.ndarray       # (NV, NV) orthonormalized mass/dt - (1-theta)*a_n
    f_orth: np.ndarray         # (NV,)
    b_orth: np.ndarray         # (NV, NW) orthonormalized coupling
    sinv_b_orth: np.ndarray    # (NV, NW)
    schur: np.ndarray          # (NW, NW) b_n' s_n^{-1} b_n


def lifted_obstacle(model: ReducedModel, K: float) -> np.ndarray:
    """Nodal lifted obstacle on the model's mesh, one O(H) pass."""
    s = np.arange(1, model.mesh_h + 1) * (model.mesh_s_f / (model.mesh_h + 1))
    return np.maximum(K - s, 0.0) - K * (1.0 - s / model.mesh_s_f)


def online_setup(model: ReducedModel, mu, config: SchemeConfig | None = None) -> OnlineData:
    """Assemble and factorize everything a reduced trajectory needs for mu."""
    if mu.K <= 0 or mu.sigma <= 0:
        raise ValueError(f"need K > 0 and sigma > 0, got K={mu.K}, sigma={mu.sigma}")
    cfg = config if config is not None else model.config
    a_n = (mu.sigma ** 2) * model.a1_n + (mu.r - mu.q) * model.a2_n + mu.r * model.a3_n
    f_n = mu.K * mu.q * model.f1_n - mu.K * mu.r * model.f2_n
    mass_dt = model.mass_n / cfg.delta_t
    s_n = mass_dt + cfg.theta * a_n

    try:
        precond = cholesky(model.init_gram, lower=False)
    except np.linalg.LinAlgError as err:
        raise ModelCorruptionError(f"basis Gram is not SPD: {err}") from err

    def to_orth(matrix: np.ndarray) -> np.ndarray:
        # congruence R^-T M R^-1 of a raw-coordinate operator block
        half = solve_triangular(precond, matrix, trans="T", lower=False)
        return solve_triangular(precond, half.T, trans="T", lower=False).T

    s_orth = to_orth(s_n)
    try:
        s_lu = lu_factor(s_orth)
    except np.linalg.LinAlgError as err:
        raise ModelCorruptionError(f"reduced step matrix is singular: {err}") from err
    pivots = np.abs(np.diag(s_lu[0]))
    if pivots.min() <= 1e-14 * max(pivots.max(), 1.0):
        raise ModelCorruptionError("reduced step matrix is numerically singular")

    psi_tilde = lifted_obstacle(model, mu.K)
    g_n = model.xi_matrix.T @ psi_tilde
    init_rhs = model.init_rhs_factor.T @ psi_tilde
    gram_cho = (precond, False)
    u0 = cho_solve(gram_cho, init_rhs)
    for _ in range(2):  # refinement keeps the residual small despite the Gram's conditioning
        u0 += cho_solve(gram_cho, init_rhs - model.init_gram @ u0)

    f_orth = solve_triangular(precond, f_n, trans="T", lower=False)
    rhs_orth = to_orth(mass_dt - (1.0 - cfg.theta) * a_n)
    if model.nw:
        b_orth = solve_triangular(precond, model.b_n, trans="T", lower=False)
        sinv_b_orth = lu_solve(s_lu, b_orth)
        schur = b_orth.T @ sinv_b_orth
    else:
        b_orth = np.zeros((model.nv, 0))
        sinv_b_orth = np.zeros((model.nv, 0))
        schur = np.zeros((0, 0))
    return OnlineData(mu=mu, config=cfg, a_n=a_n, f_n=f_n, s_n=s_n,
                      g_n=g_n, u0=u0, precond=precond, s_lu=s_lu,
                      rhs_orth=rhs_orth, f_orth=f_orth, b_orth=b_orth,
                      sinv_b_orth=sinv_b_orth, schur=schur)


def _orth_step(y_prev: np.ndarray, data: OnlineData):
    """One step in energy-orthonormal coordinates."""
    rhs = data.rhs_orth @ y_prev + data.f_orth
    base = lu_solve(data.s_lu, rhs)
    if data.schur.shape[0] == 0:
        return base, np.zeros(0)
    q = data.b_orth.T @ base
    alpha, _, _ = solve_lcp(LcpProblem(S=data.schur, rhs=data.g_n - q,
                                       obstacle=np.zeros(data.schur.shape[0])))
    return base + data.sinv_b_orth @ alpha, alpha


def reduced_step(u_prev: np.ndarray, data: OnlineData, model: ReducedModel,
                 config: SchemeConfig | None = None):
    """One reduced step; returns (next coefficients, cone coefficients).

    The state is eliminated through the Schur complement, leaving a small
    complementarity problem in the nonnegative cone coefficients that the
    active-set solver handles on its dense path.
    """
    y_prev = data.precond @ u_prev
    y_next, alpha = _orth_step(y_prev, data)
    return solve_triangular(data.precond, y_next, lower=False), alpha


@dataclass(frozen=True)
class ReducedTrajectory:
    """Reduced states and nonnegative cone coefficients over the time grid."""

    mu: ParameterVector
    states: np.ndarray       # (L+1, NV)
    cone_coeffs: np.ndarray  # (L, NW)


def reduced_trajectory(model: ReducedModel, mu,
                       config: SchemeConfig | None = None) -> ReducedTrajectory:
    cfg = config if config is not None else model.config
    data = online_setup(model, mu, cfg)
    orth_states = np.empty((cfg.L + 1, model.nv))
    alphas = np.empty((cfg.L, model.nw))
    orth_states[0] = data.precond @ data.u0
    for n in range(cfg.L):
        try:
            y, alpha = _orth_step(orth_states[n], data)
        except AmrbError as err:
            raise type(err)(f"reduced step {n + 1} failed: {err}",
                            step=n + 1, **err.info) from err
        orth_states[n + 1] = y
        alphas[n] = alpha
    states = solve_triangular(data.precond, orth_states.T, lower=False).T
    states[0] = data.u0  # keep the initial projection exactly as computed
    return ReducedTrajectory(mu=mu, states=states, cone_coeffs=alphas)


def reduced_residuals(rt: ReducedTrajectory, data: OnlineData,
                      model: ReducedModel) -> dict:
    """Worst-case reduced feasibility and complementarity over the steps."""
    min_alpha = np.inf
    min_gap = np.inf
    max_comp = 0.0
    for n in range(rt.cone_coeffs.shape[0]):
        alpha = rt.cone_coeffs[n]
        slack = model.b_n.T @ rt.states[n + 1] - data.g_n
        if alpha.size:
            min_alpha = min(min_alpha, float(alpha.min()))
            min_gap = min(min_gap, float(slack.min()))
            scale = 1.0 + float(np.abs(slack).max()) * float(np.abs(alpha).max())
            max_comp = max(max_comp, abs(float(alpha @ slack)) / scale)
    return {"min_cone_coeff": min_alpha, "min_cone_gap": min_gap,
            "max_complementarity": max_comp}


def reconstruct_states(model: ReducedModel, rt: ReducedTrajectory) -> np.ndarray:
    """Nodal states of the reduced trajectory, shape (L+1, H)."""
    return rt.states @ model.psi_matrix.T


def reconstruct_multipliers(model: ReducedModel, rt: ReducedTrajectory) -> np.ndarray:
    """Nodal multiplier reconstruction xi @ alpha per step, shape (L, H)."""
    return rt.cone_coeffs @ model.xi_matrix.T


def reconstruct(model: ReducedModel, rt: ReducedTrajectory, K: float,
                mesh: Mesh1D) -> np.ndarray:
    """Nodal price trajectory: reconstructed states plus the boundary lift."""
    states = reconstruct_states(model, rt)
    if states.shape[1] != mesh.H:
        raise ValueError(f"model has {states.shape[1]} nodes, mesh has {mesh.H}")
    lift = K * (1.0 - mesh.interior_nodes / mesh.s_f)
    return states + lift[None, :]


def error_metrics(truth: Trajectory, reduced_states: np.ndarray,
                  ops: AffineOperatorSet, config: SchemeConfig | None = None) -> float:
    """Space-time error sqrt(dt * sum_n ||u^n - u_N^n||_V^2)."""
    cfg = config if config is not None else truth.config
    reduced_states = np.asarray(reduced_states, dtype=float)
    if truth.states.shape != reduced_states.shape:
        raise ValueError(
            f"mismatched discretizations: {truth.states.shape} vs {reduced_states.shape}")
    if truth.states.shape[0] != cfg.L + 1:
        raise ValueError("trajectory does not match the time grid")
    diff = (truth.states - reduced_states).T  # (H, L+1)
    sq = np.einsum("ij,ij->j", diff, ops.gram @ diff)
    return float(np.sqrt(cfg.delta_t * float(np.sum(np.maximum(sq, 0.0)))))


@dataclass(frozen=True)
class ErrorReport:
    """Per-parameter space-time errors over a test set and their maximum."""

    params: tuple[ParameterVector, ...]
    err_values: np.ndarray
    err_linf: float
    nv_tilde: int
    nw: int
    nv: int
    in_box: tuple[bool, ...] | None = None


def err_linf(model: ReducedModel, test_params, ops: AffineOperatorSet,
             config: SchemeConfig | None = None,
             box: ParameterBox | None = None) -> ErrorReport:
    """Truth-vs-reduced space-time error for every test parameter."""
    cfg = config if config is not None else model.config
    values = []
    flags = []
    for mu in test_params:
        truth = solve_trajectory(mu, ops, obstacle_data(ops.mesh, mu.K), cfg)
        rt = reduced_trajectory(model, mu, cfg)
        values.append(error_metrics(truth, reconstruct_states(model, rt), ops, cfg))
        flags.append(box.contains(mu) if box is not None else True)
    values = np.array(values)
    return ErrorReport(params=tuple(test_params), err_values=values,
                       err_linf=float(values.max()) if values.size else 0.0,
                       nv_tilde=model.nv_tilde, nw=model.nw, nv=model.nv,
                       in_box=tuple(flags) if box is not None else None)


def write_error_report_csv(report: ErrorReport, path) -> None:
    """Columns K, r, q, sigma, err_N with a final ERR_LINF row."""
    def rows():
        for mu, err in zip(report.params, report.err_values):
            yield [mu.K, mu.r, mu.q, mu.sigma, err]
        yield ["ERR_LINF", "", "", "", report.err_linf]

    textio.write_csv(path, ["K", "r", "q", "sigma", "err_N"], rows())


def write_reduced_trajectory_csv(path, model: ReducedModel, rt: ReducedTrajectory,
                                 mesh: Mesh1D) -> None:
    """Reconstructed trajectory export with a source column."""
    states = reconstruct_states(model, rt)
    multipliers = reconstruct_multipliers(model, rt)
    textio.write_csv(path, ["step", "t", "s", "u", "lambda", "price", "source"],
                     state_rows(states, multipliers, mesh, rt.mu.K,
                                model.config.delta_t, "reduced"))


def write_comparison_csv(path, model: ReducedModel, truth: Trajectory,
                         rt: ReducedTrajectory, mesh: Mesh1D) -> None:
    """Truth and reduced trajectories side by side for overlay plots."""
    states = reconstruct_states(model, rt)
    multipliers = reconstruct_multipliers(model, rt)
    delta_t = truth.config.delta_t

    def rows():
        yield from state_rows(truth.states, truth.multipliers, mesh,
                              truth.mu.K, delta_t, "truth")
        yield from state_rows(states, multipliers, mesh, rt.mu.K, delta_t, "reduced")

    textio.write_csv(path, ["step", "t", "s", "u", "lambda", "price", "source"], rows())
