import numpy as np
import pytest

from amrb import (
    ParameterBox,
    ParameterVector,
    SchemeConfig,
    assemble_operators,
    build_mesh,
    build_reduced_model_from_store,
    generate_snapshots,
    sample_training_set,
)
from amrb.cli import test_stream, train_stream


@pytest.fixture(scope="session")
def default_mesh():
    return build_mesh(99, 300.0)


@pytest.fixture(scope="session")
def default_ops(default_mesh):
    return assemble_operators(default_mesh)


@pytest.fixture(scope="session")
def default_scheme():
    return SchemeConfig(T=1.0, L=20, theta=0.5)


@pytest.fixture(scope="session")
def default_box():
    return ParameterBox(K0=100.0, r0=0.05, q0=0.0015, sigma0=0.5, eps=0.1)


@pytest.fixture(scope="session")
def mu0():
    return ParameterVector(K=100.0, r=0.05, q=0.0015, sigma=0.5)


@pytest.fixture(scope="session")
def store16(default_ops, default_scheme, default_box):
    params = sample_training_set(default_box, 16, train_stream(0))
    return generate_snapshots(params, default_ops, default_scheme)


@pytest.fixture(scope="session")
def test_params10(default_box):
    return sample_training_set(default_box, 10, test_stream(0))


@pytest.fixture(scope="session")
def model_4_4(store16, default_ops):
    model, _ = build_reduced_model_from_store(store16, 4, 4, default_ops)
    return model


@pytest.fixture(scope="session")
def model_8_8(store16, default_ops):
    model, _ = build_reduced_model_from_store(store16, 8, 8, default_ops)
    return model


@pytest.fixture(scope="session")
def model_16_16(store16, default_ops):
    model, _ = build_reduced_model_from_store(store16, 16, 16, default_ops)
    return model


@pytest.fixture(scope="session")
def small_setup():
    """Cheap configuration for algebra-level tests."""
    mesh = build_mesh(40, 300.0)
    ops = assemble_operators(mesh)
    scheme = SchemeConfig(T=1.0, L=8, theta=0.5)
    box = ParameterBox(K0=100.0, r0=0.05, q0=0.0015, sigma0=0.5, eps=0.1)
    return mesh, ops, scheme, box


@pytest.fixture(scope="session")
def small_store(small_setup):
    mesh, ops, scheme, box = small_setup
    params = sample_training_set(box, 5, train_stream(3))
    return generate_snapshots(params, ops, scheme)


@pytest.fixture(scope="session")
def small_model(small_store, small_setup):
    _, ops, _, _ = small_setup
    model, _ = build_reduced_model_from_store(small_store, 5, 5, ops)
    return model


def identity_operator_set(n: int):
    """Operator set with identity matrices; dual norms become Euclidean."""
    import scipy.sparse as sp
    from scipy.linalg import cholesky_banded

    from amrb.fem import AffineOperatorSet, build_mesh as _bm

    eye = sp.identity(n, format="csr")
    ab = np.zeros((2, n))
    ab[1] = 1.0
    chol = cholesky_banded(ab, lower=False)
    return AffineOperatorSet(mesh=_bm(n, float(n + 1)), gram=eye, mass=eye,
                             a1=eye, a2=eye, a3=eye,
                             f1=np.zeros(n), f2=np.zeros(n), gram_chol=chol)
