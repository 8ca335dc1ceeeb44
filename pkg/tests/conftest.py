import numpy as np
import pytest

from minmt import tensor


@pytest.fixture(autouse=True)
def _reset_dtype():
    # every test starts and ends in the default training precision
    tensor.set_default_dtype("float32")
    yield
    tensor.set_default_dtype("float32")


@pytest.fixture
def f64():
    tensor.set_default_dtype("float64")
    yield np.float64
    tensor.set_default_dtype("float32")
