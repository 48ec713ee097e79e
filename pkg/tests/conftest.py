import numpy as np
import pytest

from fedabc.rng import RngHandle


@pytest.fixture
def separable_fixture():
    """100 two-feature rows, classes separated by a margin of 2 on axis 0."""
    gen = RngHandle(seed=90210).generator()
    neg = np.column_stack([gen.uniform(-3.0, -1.0, 50), gen.standard_normal(50)])
    pos = np.column_stack([gen.uniform(1.0, 3.0, 50), gen.standard_normal(50)])
    x = np.vstack([neg, pos])
    y = np.concatenate([np.zeros(50), np.ones(50)])
    order = gen.permutation(100)
    return x[order], y[order]
