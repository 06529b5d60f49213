import numpy as np
import pytest

from motok import kernels


@pytest.fixture(params=["python", "compiled"] if kernels.HAVE_COMPILED else ["python"])
def kernel_backend(request):
    """Run kernel-sensitive tests under both backends when available."""
    prev = kernels.backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


def gh_expect(fn, mu, log_sigma, n=200):
    """Gauss-Hermite quadrature of E[fn(sigmoid(u))], u ~ N(mu, e^{2 log_sigma}).

    Independent oracle: no policy-module code involved.
    """
    x, w = np.polynomial.hermite.hermgauss(n)
    u = mu + np.exp(log_sigma) * np.sqrt(2.0) * x
    return float(np.sum(w * fn(1.0 / (1.0 + np.exp(-u)))) / np.sqrt(np.pi))
