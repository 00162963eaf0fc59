import numpy as np
import pytest

from chad.data import CategoricalField, ContinuousField, Dataset, Schema


def make_schema(arities=(3, 12, 2), r=5):
    cats = tuple(CategoricalField(f"c{j}", tuple(f"v{i}" for i in range(a))) for j, a in enumerate(arities))
    cont = tuple(ContinuousField(f"x{j}", 0.0, 1.0) for j in range(r))
    return Schema(cats, cont)


def make_dataset(schema, n=64, seed=0, labels=None):
    rng = np.random.default_rng(seed)
    cat = np.column_stack([rng.integers(0, a, n) for a in schema.arities]) if schema.k \
        else np.zeros((n, 0), np.int64)
    return Dataset(schema, cat.astype(np.int64), rng.random((n, schema.r)), labels)


@pytest.fixture
def schema():
    return make_schema()


@pytest.fixture
def dataset(schema):
    return make_dataset(schema)
