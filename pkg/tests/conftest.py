import pytest

from dinctr import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the JIT kernels once so timed tests measure compute, not compilation."""
    kernels.warmup()
