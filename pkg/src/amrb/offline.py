"""Offline reduction phase: snapshots, greedy bases, reduced operators.

The primal space grows by a POD-greedy loop: scan the training set for the
trajectory worst approximated by the current space (true energy-norm
projection errors summed over the time grid), compress that trajectory's
projection-error history to its dominant POD mode, orthonormalize, repeat.
The dual cone grows by an angle-greedy loop over the multiplier snapshots:
pick the snapshot forming the largest principal angle with the span of the
current generators, normalize it in the dual norm, repeat.  Supremizer
lifts of the cone generators are appended to the primal basis so the
reduced primal-dual coupling keeps full column rank.

A ``ReducedModel`` collects the basis matrices, all reduced operator
blocks, the data needed for the online initial projection, and the greedy
diagnostics; it serializes to a single JSON document.
"""

from __future__ import annotations

from dataclasses import dataclass

import json

import numpy as np

from . import textio
from .errors import (
    AmrbError,
    BasisSaturationError,
    ConeSaturationError,
    DegenerateInputError,
    IllConditionedBasisError,
    InfSupFailureError,
    ModelLoadError,
    ModelVersionError,
)
from .fem import (
    AffineOperatorSet,
    DualVector,
    Mesh1D,
    ParameterBox,
    ParameterVector,
    dual_coeffs,
    obstacle_data,
)
from .truth import SchemeConfig, Trajectory, solve_trajectory

SCHEMA_VERSION = 1

NORM_FLOOR = 1e-12       # below this a vector counts as zero in its norm
MIN_GREEDY_ANGLE = 1e-10  # smaller angles mean the snapshot cone is exhausted


def sample_training_set(box: ParameterBox, n: int, seed) -> list[ParameterVector]:
    """Draw n parameter vectors i.i.d. uniform per coordinate in the box.

    ``seed`` may be an int or a numpy SeedSequence, so callers can carve
    labeled substreams out of one master seed.
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    rng = np.random.default_rng(seed)
    lo, hi = box.bounds()
    draws = lo + (hi - lo) * rng.random((n, 4))
    return [ParameterVector(K=row[0], r=row[1], q=row[2], sigma=row[3]) for row in draws]


@dataclass(frozen=True)
class SnapshotStore:
    """Truth trajectories for a set of pairwise distinct parameters."""

    params: tuple[ParameterVector, ...]
    trajectories: tuple[Trajectory, ...]
    obstacles: tuple
    mesh: Mesh1D
    config: SchemeConfig

    def __post_init__(self):
        if len(self.params) != len(self.trajectories):
            raise ValueError("one trajectory per parameter required")
        if len(set(self.params)) != len(self.params):
            raise ValueError("training parameters must be pairwise distinct")
        if any(traj.config != self.config for traj in self.trajectories):
            raise ValueError("all trajectories must share one time grid")
        if any(traj.states.shape[1] != self.mesh.H for traj in self.trajectories):
            raise ValueError("all trajectories must share one mesh")

    @property
    def n_params(self) -> int:
        return len(self.params)

    def primal_matrix(self) -> np.ndarray:
        """All state snapshots as columns, parameter-major, time-minor."""
        return np.column_stack([traj.states.T for traj in self.trajectories])

    def multiplier_matrix(self) -> tuple[np.ndarray, list[tuple[int, int]]]:
        """All multiplier snapshots as columns with their (n, mu_index) labels."""
        cols = []
        labels = []
        for i, traj in enumerate(self.trajectories):
            for n in range(1, self.config.L + 1):
                cols.append(traj.multipliers[n - 1])
                labels.append((n, i))
        return np.column_stack(cols), labels


def generate_snapshots(params, ops: AffineOperatorSet,
                       config: SchemeConfig) -> SnapshotStore:
    """Solve one truth trajectory per parameter (obstacle derived per strike)."""
    trajectories = []
    obstacles = []
    for mu in params:
        obst = obstacle_data(ops.mesh, mu.K)
        try:
            trajectories.append(solve_trajectory(mu, ops, obst, config))
        except AmrbError as err:
            raise type(err)(f"snapshot run failed at mu={mu}: {err}", **err.info) from err
        obstacles.append(obst)
    return SnapshotStore(params=tuple(params), trajectories=tuple(trajectories),
                         obstacles=tuple(obstacles), mesh=ops.mesh, config=config)


def pod1(vectors, ops: AffineOperatorSet) -> np.ndarray:
    """Dominant POD mode of a vector family in the energy inner product.

    Method of snapshots: eigen-decompose the small family Gram matrix,
    lift the dominant eigenvector back, and normalize.  The result
    maximizes the captured energy (the sum of squared inner products with
    the family); its sign is fixed so the largest-magnitude component is
    positive.
    """
    if isinstance(vectors, np.ndarray) and vectors.ndim == 2:
        mat = vectors
    else:
        mat = np.column_stack([np.asarray(v, dtype=float) for v in vectors])
    xmat = ops.gram @ mat
    sq_norms = np.einsum("ij,ij->j", mat, xmat)
    if float(np.max(sq_norms, initial=0.0)) <= NORM_FLOOR ** 2:
        raise DegenerateInputError("all input vectors vanish in the energy norm")
    gram = mat.T @ xmat
    gram = 0.5 * (gram + gram.T)
    _, eigvecs = np.linalg.eigh(gram)
    mode = mat @ eigvecs[:, -1]
    nrm = ops.v_norm(mode)
    if nrm <= NORM_FLOOR:
        raise DegenerateInputError("dominant mode vanishes in the energy norm")
    mode = mode / nrm
    peak = int(np.argmax(np.abs(mode)))
    if mode[peak] < 0:
        mode = -mode
    return mode


def pod_greedy(store: SnapshotStore, n_v_tilde: int,
               ops: AffineOperatorSet) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Greedy primal basis construction.

    Start from the normalized initial state of the first training
    parameter.  At basis size k, evaluate for every training parameter the
    summed squared projection errors of its trajectory onto the current
    space, record the square root of the maximum, and grow the basis with
    the dominant POD mode of the worst trajectory's error history,
    orthonormalized against the basis (ties break to the smallest index).

    Returns (orthonormal basis columns, error decay, selected indices).
    Raises BasisSaturationError (carrying the partial result in ``info``)
    once the snapshots cannot supply a further independent direction.
    """
    if n_v_tilde < 1:
        raise ValueError(f"need a positive basis budget, got {n_v_tilde}")
    if store.n_params == 0:
        raise ValueError("empty snapshot store")
    snaps = store.primal_matrix()
    xsnaps = ops.gram @ snaps
    width = store.config.L + 1

    first = store.trajectories[0].states[0]
    nrm = ops.v_norm(first)
    if nrm <= NORM_FLOOR:
        raise DegenerateInputError("initial snapshot vanishes in the energy norm")
    basis = (first / nrm)[:, None]
    selected = [0]
    eps_u: list[float] = []

    def saturation(message: str) -> BasisSaturationError:
        return BasisSaturationError(
            message, achieved=basis.shape[1], vectors=basis.copy(),
            eps_u=np.array(eps_u), selected=list(selected))

    while True:
        k = basis.shape[1]
        proj = basis.T @ xsnaps  # projection coefficients, basis is orthonormal
        resid = snaps - basis @ proj
        # explicit residuals: the norm-subtraction form floors at
        # sqrt(eps_machine) * snapshot scale, far above the greedy's tail
        err_sq = np.maximum(np.einsum("ij,ij->j", resid, ops.gram @ resid), 0.0)
        per_mu = err_sq.reshape(store.n_params, width).sum(axis=1)
        best = int(np.argmax(per_mu))
        eps_u.append(float(np.sqrt(per_mu[best])))
        if k == n_v_tilde:
            break
        block = slice(best * width, (best + 1) * width)
        errors = resid[:, block]
        try:
            mode = pod1(errors, ops)
        except DegenerateInputError as err:
            raise saturation(f"snapshots exhausted at basis size {k}: {err}") from err
        vec = mode
        for _ in range(2):  # modified Gram-Schmidt, re-orthogonalized once
            vec = vec - basis @ (basis.T @ (ops.gram @ vec))
        nrm = ops.v_norm(vec)
        if nrm < NORM_FLOOR:
            raise saturation(f"snapshots exhausted at basis size {k}")
        basis = np.hstack([basis, (vec / nrm)[:, None]])
        selected.append(best)
    return basis, np.array(eps_u), selected


def angle_to_subspace(lam, basis, ops: AffineOperatorSet) -> float:
    """Principal angle between a multiplier and the span of dual vectors.

    The projection is computed in the dual inner product via the basis
    Gram normal equations; the angle comes from atan2 of the residual and
    projection norms, which keeps tiny angles accurate where
    arccos(1 - eps) loses half the digits.  An empty basis gives pi/2.
    """
    c = dual_coeffs(lam)
    y = ops.x_solve(c)
    norm_sq = float(c @ y)
    if norm_sq <= NORM_FLOOR ** 2:
        raise DegenerateInputError("multiplier vanishes in the dual norm")
    cols = [dual_coeffs(b) for b in basis]
    if not cols:
        return float(np.pi / 2)
    xi = np.column_stack(cols)
    xi_y = ops.x_solve(xi)
    gmat = xi.T @ xi_y
    gmat = 0.5 * (gmat + gmat.T)
    rhs = xi.T @ y
    try:
        coef = np.linalg.solve(gmat, rhs)
    except np.linalg.LinAlgError as err:
        raise IllConditionedBasisError(f"dual basis Gram is singular: {err}") from err
    resid = c - xi @ coef
    resid_y = y - xi_y @ coef
    sin_part = np.sqrt(max(float(resid @ resid_y), 0.0))
    cos_part = np.sqrt(max(float(coef @ rhs), 0.0))
    return float(np.arctan2(sin_part, cos_part))


@dataclass(frozen=True)
class DualConeBasis:
    """Normalized multiplier snapshots generating the reduced cone."""

    generators: tuple[DualVector, ...]
    selected: tuple[tuple[int, int], ...]  # (time step, parameter index)
    dim: int

    @property
    def size(self) -> int:
        return len(self.generators)

    def matrix(self) -> np.ndarray:
        if not self.generators:
            return np.zeros((self.dim, 0))
        return np.column_stack([np.asarray(g.coeffs, dtype=float) for g in self.generators])


def _make_cone(xi: np.ndarray, selected: list[tuple[int, int]], dim: int) -> DualConeBasis:
    gens = tuple(DualVector(coeffs=xi[:, j].copy()) for j in range(xi.shape[1]))
    return DualConeBasis(generators=gens, selected=tuple(selected), dim=dim)


def angle_greedy(store: SnapshotStore, n_w: int,
                 ops: AffineOperatorSet) -> tuple[DualConeBasis, np.ndarray]:
    """Greedy dual cone construction.

    Initialize with the first multiplier snapshot of positive dual norm
    (parameter-major, time-minor scan order).  At cone size k, compute the
    angle of every usable snapshot to the span of the current generators,
    record the maximum, and append the normalized maximizer (ties break to
    the smallest parameter index, then the smallest time step).

    Returns (cone, angle decay).  Raises ConeSaturationError (carrying the
    partial cone in ``info``) when no snapshot keeps an angle above the
    floor.
    """
    if n_w < 1:
        raise ValueError(f"need a positive cone budget, got {n_w}")
    lam_matrix, labels = store.multiplier_matrix()
    y = ops.x_solve(lam_matrix)
    w_sq = np.einsum("ij,ij->j", lam_matrix, y)
    w_norm = np.sqrt(np.maximum(w_sq, 0.0))
    valid = w_norm > NORM_FLOOR
    if not valid.any():
        raise ConeSaturationError(
            "no multiplier snapshot has positive dual norm", achieved=0,
            cone=DualConeBasis(generators=(), selected=(), dim=ops.dim),
            eps_lambda=np.zeros(0))

    first = int(np.flatnonzero(valid)[0])
    xi = lam_matrix[:, [first]] / w_norm[first]
    selected = [labels[first]]
    eps_lambda: list[float] = []
    # the span is tracked through an orthonormal companion basis so angle
    # scans stay stable when generators become nearly dependent
    ortho = xi.copy()
    ortho_y = y[:, [first]] / w_norm[first]

    def orthonormal_append(column: np.ndarray) -> bool:
        nonlocal ortho, ortho_y
        vec = column
        for _ in range(2):
            vec = vec - ortho @ (ortho_y.T @ vec)
        vec_y = ops.x_solve(vec)
        nrm = np.sqrt(max(float(vec @ vec_y), 0.0))
        if nrm <= NORM_FLOOR:
            return False
        ortho = np.hstack([ortho, (vec / nrm)[:, None]])
        ortho_y = np.hstack([ortho_y, (vec_y / nrm)[:, None]])
        return True

    while True:
        k = xi.shape[1]
        coef = ortho.T @ y
        resid = lam_matrix - ortho @ coef
        resid_y = y - ortho_y @ coef
        sin_sq = np.maximum(np.einsum("ij,ij->j", resid, resid_y), 0.0)
        cos_sq = np.maximum(np.einsum("ij,ij->j", coef, coef), 0.0)
        angles = np.where(valid, np.arctan2(np.sqrt(sin_sq), np.sqrt(cos_sq)), -1.0)
        best = int(np.argmax(angles))
        eps_lambda.append(float(angles[best]))
        if k == n_w:
            break
        if angles[best] <= MIN_GREEDY_ANGLE or not orthonormal_append(
                lam_matrix[:, best] / w_norm[best]):
            raise ConeSaturationError(
                f"multiplier snapshots exhausted at cone size {k}",
                achieved=k, cone=_make_cone(xi, selected, ops.dim),
                eps_lambda=np.array(eps_lambda))
        xi = np.hstack([xi, lam_matrix[:, [best]] / w_norm[best]])
        selected.append(labels[best])
    return _make_cone(xi, selected, ops.dim), np.array(eps_lambda)


@dataclass(frozen=True)
class PrimalBasis:
    """POD block plus supremizer lifts spanning the reduced primal space."""

    pod_vectors: np.ndarray   # (H, NV_tilde), orthonormal in the energy product
    supremizers: np.ndarray   # (H, kept) lifts, appended unorthonormalized
    combined: np.ndarray      # (H, NV)
    reduced_gram: np.ndarray  # (NV, NV) energy Gram of the combined basis
    dropped: tuple[int, ...] = ()  # generator indices whose lift was dependent


def enrich_with_supremizers(pod_vectors, cone: DualConeBasis,
                            ops: AffineOperatorSet,
                            cond_limit: float = 1e12) -> PrimalBasis:
    """Append the supremizer lift of each cone generator to the POD block.

    A lift that would push the combined Gram condition number past the
    limit is dropped (recorded in ``dropped``) and the enrichment
    continues with the rest.
    """
    if isinstance(pod_vectors, np.ndarray) and pod_vectors.ndim == 2:
        pod = pod_vectors
    else:
        pod = np.column_stack([np.asarray(v, dtype=float) for v in pod_vectors])
    lifts = ops.x_solve(cone.matrix()) if cone.size else np.zeros((pod.shape[0], 0))
    if lifts.ndim == 1:
        lifts = lifts[:, None]
    combined = pod
    kept: list[int] = []
    dropped: list[int] = []
    for j in range(lifts.shape[1]):
        trial = np.hstack([combined, lifts[:, [j]]])
        gram = trial.T @ (ops.gram @ trial)
        gram = 0.5 * (gram + gram.T)
        if np.linalg.cond(gram) >= cond_limit:
            dropped.append(j)
            continue
        combined = trial
        kept.append(j)
    reduced_gram = combined.T @ (ops.gram @ combined)
    reduced_gram = 0.5 * (reduced_gram + reduced_gram.T)
    return PrimalBasis(pod_vectors=pod, supremizers=lifts[:, kept],
                       combined=combined, reduced_gram=reduced_gram,
                       dropped=tuple(dropped))


@dataclass(frozen=True)
class GreedyDiagnostics:
    """Per-iteration greedy decay and the selection records behind it."""

    eps_u: np.ndarray
    eps_lambda: np.ndarray
    selected_params_u: tuple[int, ...]
    selected_pairs_lambda: tuple[tuple[int, int], ...]
    training_params: np.ndarray  # (N, 4) rows of (K, r, q, sigma)


@dataclass(frozen=True)
class ReducedModel:
    """Offline output: bases, reduced operators, and online initial data."""

    mesh_h: int
    mesh_s_f: float
    config: SchemeConfig
    nv_tilde: int
    nw: int
    nv: int
    psi_matrix: np.ndarray        # (H, NV) primal basis columns
    xi_matrix: np.ndarray         # (H, NW) cone generator coefficients
    mass_n: np.ndarray            # (NV, NV)
    a1_n: np.ndarray
    a2_n: np.ndarray
    a3_n: np.ndarray
    f1_n: np.ndarray              # (NV,)
    f2_n: np.ndarray
    b_n: np.ndarray               # (NV, NW) primal-dual coupling
    init_gram: np.ndarray         # (NV, NV) energy Gram for the initial projection
    init_rhs_factor: np.ndarray   # (H, NV) gram @ psi
    diagnostics: GreedyDiagnostics | None = None


def assemble_reduced(basis: PrimalBasis, cone: DualConeBasis,
                     ops: AffineOperatorSet, config: SchemeConfig,
                     diagnostics: GreedyDiagnostics | None = None,
                     rank_floor: float = 1e-10) -> ReducedModel:
    """Project all operator blocks onto the enriched basis.

    Fails with InfSupFailureError if the reduced coupling b_n loses full
    column rank, which would make the reduced saddle-point steps ill
    posed.
    """
    psi = basis.combined
    xi = cone.matrix()
    mass_n = psi.T @ (ops.mass @ psi)
    mass_n = 0.5 * (mass_n + mass_n.T)
    a1_n = psi.T @ (ops.a1 @ psi)
    a2_n = psi.T @ (ops.a2 @ psi)
    b_n = psi.T @ xi
    if cone.size:
        svals = np.linalg.svd(b_n, compute_uv=False)
        if svals[0] <= 0 or svals[-1] <= rank_floor * svals[0]:
            raise InfSupFailureError(
                "reduced coupling lost full column rank; supremizer "
                f"enrichment is broken (smin={svals[-1]:.3e}, smax={svals[0]:.3e})",
                smin=float(svals[-1]), smax=float(svals[0]))
    init_rhs_factor = ops.gram @ psi
    init_gram = psi.T @ init_rhs_factor
    init_gram = 0.5 * (init_gram + init_gram.T)
    model = ReducedModel(
        mesh_h=ops.mesh.H, mesh_s_f=ops.mesh.s_f, config=config,
        nv_tilde=basis.pod_vectors.shape[1], nw=cone.size, nv=psi.shape[1],
        psi_matrix=psi.copy(), xi_matrix=xi.copy(),
        mass_n=mass_n, a1_n=a1_n, a2_n=a2_n, a3_n=mass_n.copy(),
        f1_n=psi.T @ ops.f1, f2_n=psi.T @ ops.f2, b_n=b_n,
        init_gram=init_gram, init_rhs_factor=init_rhs_factor,
        diagnostics=diagnostics,
    )
    verify_model(model, ops, rank_floor=rank_floor)
    return model


def build_reduced_model_from_store(store: SnapshotStore, nv_tilde: int, nw: int,
                                   ops: AffineOperatorSet):
    """Run both greedy loops plus enrichment; saturation degrades gracefully.

    Returns (model, warnings).  A greedy loop that saturates early
    contributes whatever it built; the warning list records each such
    event.
    """
    warnings: list[str] = []
    try:
        vectors, eps_u, selected_u = pod_greedy(store, nv_tilde, ops)
    except BasisSaturationError as err:
        vectors = err.info["vectors"]
        eps_u = err.info["eps_u"]
        selected_u = err.info["selected"]
        warnings.append(f"primal basis saturated at {vectors.shape[1]} of {nv_tilde} vectors")
    try:
        cone, eps_lambda = angle_greedy(store, nw, ops)
    except ConeSaturationError as err:
        cone = err.info["cone"]
        eps_lambda = err.info["eps_lambda"]
        warnings.append(f"dual cone saturated at {cone.size} of {nw} generators")

    while True:
        basis = enrich_with_supremizers(vectors, cone, ops)
        diagnostics = GreedyDiagnostics(
            eps_u=np.asarray(eps_u, dtype=float),
            eps_lambda=np.asarray(eps_lambda, dtype=float)[:cone.size],
            selected_params_u=tuple(int(i) for i in selected_u),
            selected_pairs_lambda=cone.selected,
            training_params=np.array([p.as_array() for p in store.params]),
        )
        try:
            model = assemble_reduced(basis, cone, ops, store.config,
                                     diagnostics=diagnostics)
            break
        except InfSupFailureError:
            # a generator selected at a tiny (but legal) angle can push the
            # coupling below the rank floor; trim from the least independent
            # end, exactly as if the greedy had saturated one step earlier
            if cone.size == 0:
                raise
            warnings.append(
                f"dropped cone generator {cone.size - 1}: coupling rank floor")
            cone = DualConeBasis(generators=cone.generators[:-1],
                                 selected=cone.selected[:-1], dim=cone.dim)
    for j in basis.dropped:
        warnings.append(f"dropped supremizer {j}: direction dependent on the basis")
    return model, warnings


def build_reduced_model(params, ops: AffineOperatorSet, config: SchemeConfig,
                        nv_tilde: int, nw: int):
    """Snapshot generation followed by the full offline reduction."""
    store = generate_snapshots(params, ops, config)
    return build_reduced_model_from_store(store, nv_tilde, nw, ops)


# ---------------------------------------------------------------------------
# model file I/O


def model_document(model: ReducedModel) -> dict:
    diag = model.diagnostics
    diagnostics = {
        "eps_u": diag.eps_u if diag else np.zeros(0),
        "eps_lambda": diag.eps_lambda if diag else np.zeros(0),
        "selections": {
            "pod_train_indices": list(diag.selected_params_u) if diag else [],
            "angle_pairs": [list(p) for p in diag.selected_pairs_lambda] if diag else [],
            "training_params": diag.training_params if diag else np.zeros((0, 4)),
        },
    }
    return {
        "schema_version": SCHEMA_VERSION,
        "mesh": {"H": model.mesh_h, "s_f": model.mesh_s_f},
        "time": {"T": model.config.T, "L": model.config.L, "theta": model.config.theta},
        "NV_tilde": model.nv_tilde,
        "NW": model.nw,
        "NV": model.nv,
        "psi_matrix": model.psi_matrix,
        "xi_matrix": model.xi_matrix,
        "Mass_N": model.mass_n,
        "A1_N": model.a1_n,
        "A2_N": model.a2_n,
        "A3_N": model.a3_n,
        "f1_N": model.f1_n,
        "f2_N": model.f2_n,
        "B_N": model.b_n,
        "init_gram": model.init_gram,
        "init_rhs_factor": model.init_rhs_factor,
        "diagnostics": diagnostics,
    }


def save_model(model: ReducedModel, path) -> None:
    textio.write_json(path, model_document(model))


def _need(data: dict, key: str):
    if key not in data:
        raise ModelLoadError(f"model file is missing field {key!r}")
    return data[key]


def _array(data, key: str, shape: tuple) -> np.ndarray:
    try:
        arr = np.array(_need(data, key) if isinstance(data, dict) else data, dtype=float)
    except (TypeError, ValueError) as err:
        raise ModelLoadError(f"field {key!r} is not a numeric array: {err}") from err
    if arr.size == 0:
        arr = arr.reshape(shape)
    if arr.shape != shape:
        raise ModelLoadError(f"field {key!r} has shape {arr.shape}, expected {shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ModelLoadError(f"field {key!r} contains non-finite values")
    return arr


def load_model(path, rank_floor: float = 1e-10) -> ReducedModel:
    """Parse and validate a model file; rejects corrupted coupling blocks."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as err:
        raise ModelLoadError(f"cannot read model file {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ModelLoadError(f"model file {path} is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ModelLoadError("model file must hold a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ModelVersionError(
            f"unsupported model schema version {version!r}, expected {SCHEMA_VERSION}")
    try:
        mesh = _need(data, "mesh")
        h = int(mesh["H"])
        s_f = float(mesh["s_f"])
        time = _need(data, "time")
        config = SchemeConfig(T=float(time["T"]), L=int(time["L"]), theta=float(time["theta"]))
        nv_tilde = int(_need(data, "NV_tilde"))
        nw = int(_need(data, "NW"))
        nv = int(_need(data, "NV"))
    except (KeyError, TypeError, ValueError) as err:
        raise ModelLoadError(f"model header is malformed: {err}") from err
    if h < 2 or nv < 1 or nw < 0 or nv_tilde < 1:
        raise ModelLoadError(f"model sizes are out of range: H={h}, NV={nv}, NW={nw}")

    psi = _array(data, "psi_matrix", (h, nv))
    xi = _array(data, "xi_matrix", (h, nw))
    mass_n = _array(data, "Mass_N", (nv, nv))
    a1_n = _array(data, "A1_N", (nv, nv))
    a2_n = _array(data, "A2_N", (nv, nv))
    a3_n = _array(data, "A3_N", (nv, nv))
    f1_n = _array(data, "f1_N", (nv,))
    f2_n = _array(data, "f2_N", (nv,))
    b_n = _array(data, "B_N", (nv, nw))
    init_gram = _array(data, "init_gram", (nv, nv))
    init_rhs_factor = _array(data, "init_rhs_factor", (h, nv))

    if nw:
        svals = np.linalg.svd(b_n, compute_uv=False)
        if svals[0] <= 0 or svals[-1] <= rank_floor * svals[0]:
            raise ModelLoadError(
                "model coupling block fails the full-rank check "
                f"(smin={svals[-1]:.3e}, smax={svals[0]:.3e}); file is corrupt")

    diag_data = data.get("diagnostics") or {}
    selections = diag_data.get("selections") or {}
    try:
        train = np.array(selections.get("training_params", []), dtype=float).reshape(-1, 4)
        diagnostics = GreedyDiagnostics(
            eps_u=np.array(diag_data.get("eps_u", []), dtype=float),
            eps_lambda=np.array(diag_data.get("eps_lambda", []), dtype=float),
            selected_params_u=tuple(int(i) for i in selections.get("pod_train_indices", [])),
            selected_pairs_lambda=tuple((int(a), int(b))
                                        for a, b in selections.get("angle_pairs", [])),
            training_params=train,
        )
    except (TypeError, ValueError) as err:
        raise ModelLoadError(f"model diagnostics are malformed: {err}") from err

    return ReducedModel(
        mesh_h=h, mesh_s_f=s_f, config=config,
        nv_tilde=nv_tilde, nw=nw, nv=nv,
        psi_matrix=psi, xi_matrix=xi,
        mass_n=mass_n, a1_n=a1_n, a2_n=a2_n, a3_n=a3_n,
        f1_n=f1_n, f2_n=f2_n, b_n=b_n,
        init_gram=init_gram, init_rhs_factor=init_rhs_factor,
        diagnostics=diagnostics,
    )


def verify_model(model: ReducedModel, ops: AffineOperatorSet | None = None,
                 rtol: float = 1e-12, rank_floor: float = 1e-10) -> None:
    """Recompute every reduced block from the stored bases and compare.

    Raises ModelCorruptionError on the first violated invariant.  When no
    operator set is passed, the full-order operators are reassembled from
    the stored mesh descriptor.
    """
    from .errors import ModelCorruptionError
    from .fem import assemble_operators, build_mesh

    if ops is None:
        ops = assemble_operators(build_mesh(model.mesh_h, model.mesh_s_f))
    if ops.mesh.H != model.mesh_h:
        raise ModelCorruptionError("operator set does not match the model mesh")
    psi = model.psi_matrix
    xi = model.xi_matrix

    def close(name: str, stored: np.ndarray, recomputed: np.ndarray) -> None:
        scale = 1.0 + float(np.linalg.norm(recomputed))
        if float(np.linalg.norm(stored - recomputed)) > rtol * scale:
            raise ModelCorruptionError(f"reduced block {name} does not match its recomputation")

    close("Mass_N", model.mass_n, psi.T @ (ops.mass @ psi))
    close("A1_N", model.a1_n, psi.T @ (ops.a1 @ psi))
    close("A2_N", model.a2_n, psi.T @ (ops.a2 @ psi))
    close("A3_N", model.a3_n, psi.T @ (ops.a3 @ psi))
    close("f1_N", model.f1_n, psi.T @ ops.f1)
    close("f2_N", model.f2_n, psi.T @ ops.f2)
    close("B_N", model.b_n, psi.T @ xi)
    close("init_rhs_factor", model.init_rhs_factor, ops.gram @ psi)
    close("init_gram", model.init_gram, psi.T @ (ops.gram @ psi))
    if model.nw:
        svals = np.linalg.svd(model.b_n, compute_uv=False)
        if svals[0] <= 0 or svals[-1] <= rank_floor * svals[0]:
            raise ModelCorruptionError("reduced coupling block lost full column rank")
    try:
        np.linalg.cholesky(model.mass_n)
    except np.linalg.LinAlgError as err:
        raise ModelCorruptionError(f"reduced mass matrix is not SPD: {err}") from err
    diag = model.diagnostics
    if diag is not None:
        for name, seq in (("eps_u", diag.eps_u), ("eps_lambda", diag.eps_lambda)):
            if seq.size and np.any(np.diff(seq) > 1e-12 * (1.0 + seq[:-1])):
                raise ModelCorruptionError(f"diagnostic sequence {name} is not non-increasing")


# ---------------------------------------------------------------------------
# diagnostics artifacts


def write_greedy_csvs(diagnostics: GreedyDiagnostics, pod_path, angle_path) -> None:
    """Per-iteration decay CSVs with the selected snapshot coordinates."""
    train = diagnostics.training_params

    def pod_rows():
        for k, eps in enumerate(diagnostics.eps_u):
            idx = diagnostics.selected_params_u[k] if k < len(diagnostics.selected_params_u) else -1
            coords = train[idx] if 0 <= idx < len(train) else [float("nan")] * 4
            yield [k + 1, eps, *coords]

    def angle_rows():
        for k, eps in enumerate(diagnostics.eps_lambda):
            if k < len(diagnostics.selected_pairs_lambda):
                n, idx = diagnostics.selected_pairs_lambda[k]
            else:
                n, idx = -1, -1
            coords = train[idx] if 0 <= idx < len(train) else [float("nan")] * 4
            yield [k + 1, eps, n, *coords]

    textio.write_csv(pod_path, ["iteration", "eps_u", "K", "r", "q", "sigma"], pod_rows())
    textio.write_csv(angle_path, ["iteration", "eps_lambda", "n", "K", "r", "q", "sigma"],
                     angle_rows())


def write_params_csv(params, path) -> None:
    textio.write_csv(path, ["K", "r", "q", "sigma"],
                     ([p.K, p.r, p.q, p.sigma] for p in params))
