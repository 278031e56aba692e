import numpy as np
import pytest

from lqpnp.operators import LinearOperator


def dense_matrix_op(mat, domain_shape=None, range_shape=None):
    """Wrap a dense matrix as a LinearOperator for reference testing."""
    mat = np.asarray(mat, dtype=np.float64)
    m, n = mat.shape
    domain_shape = domain_shape or (n, 1, 1)
    range_shape = range_shape or (m, 1, 1)
    return LinearOperator(domain_shape, range_shape,
                          apply=lambda x: mat @ np.asarray(x, dtype=np.float64),
                          adjoint=lambda u: mat.T @ np.asarray(u, dtype=np.float64))


def densify(op):
    """Materialize an operator by applying it to the standard basis."""
    cols = [op.apply(e) for e in np.eye(op.domain_size)]
    return np.column_stack(cols)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
