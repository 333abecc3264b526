import numpy as np
import pytest

from assistlab.kernels import _ref

try:
    from assistlab.kernels import _core
except ImportError:
    _core = None

KERNEL_BACKENDS = [pytest.param(_ref, id="python")]
if _core is not None:
    KERNEL_BACKENDS.append(pytest.param(_core, id="compiled"))


@pytest.fixture(params=KERNEL_BACKENDS)
def kernels(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
