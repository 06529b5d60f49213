"""Kernel backend selection: compiled extension if importable, numpy otherwise.

`set_backend("python")` forces the fallback (used by tests and the
kernel benchmark); `set_backend("compiled")` raises if the extension
was not built.
"""

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _ext
except ImportError:
    _ext = None

HAVE_COMPILED = _ext is not None
_impl = _ext if HAVE_COMPILED else _kernels_py


def backend():
    return "compiled" if _impl is _ext else "python"


def set_backend(name):
    global _impl
    if name == "python":
        _impl = _kernels_py
    elif name == "compiled":
        if _ext is None:
            raise RuntimeError("compiled kernels are not available")
        _impl = _ext
    else:
        raise ValueError(f"unknown backend {name!r}")


def motion_energy(video, p, t_p):
    video = np.ascontiguousarray(video)
    if video.dtype not in (np.float32, np.float64):
        video = video.astype(np.float32)
    return _impl.motion_energy(video, int(p), int(t_p))


def segment_attention_forward(q, k, v, lengths, scale):
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    return _impl.segment_attention_forward(q, k, v, lengths, float(scale))


def segment_attention_backward(g, q, k, v, probs, lengths, scale):
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    g = np.ascontiguousarray(g, dtype=q.dtype)
    return _impl.segment_attention_backward(g, q, k, v, probs, lengths, float(scale))
