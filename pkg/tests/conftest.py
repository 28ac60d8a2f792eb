import pytest

from slotstream import _kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # JIT-compile everything once so per-test timings reflect the math.
    _kernels.warm_up()
