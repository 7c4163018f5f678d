import numpy as np
import pytest

from statdistill.tensor import Tensor

SEEDS = (0, 1, 2, 3, 4)


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def t64(arr, requires_grad: bool = False) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)


def t32(arr, requires_grad: bool = False) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float32), requires_grad=requires_grad)


def rand64(rng, shape, lo=-1.0, hi=1.0, requires_grad=False) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=requires_grad)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
