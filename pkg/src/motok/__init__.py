"""Motion-focused video tokenization with a learned selection threshold,
a packed-attention classifier, a pseudo-label adaptation trainer, and an
efficiency harness."""

__version__ = "0.1.0"

from .kernels import HAVE_COMPILED, backend  # noqa: F401
