"""Pure-numpy implementations of the hot kernels.

Same contracts as the compiled `_kernels` extension; selected by
`motok.kernels` when the extension is unavailable (or forced).
"""

import numpy as np


def motion_energy(video, p, t_p):
    """Raw per-token motion energies for one video.

    video: [T, C, H, W]. Returns float64 [(T//t_p - 1), H//p, W//p]: the
    mean absolute difference between temporally adjacent tubelet averages,
    pooled over channels and the p x p window.
    """
    t, c, h, w = video.shape
    n_t = t // t_p
    reps = video.reshape(n_t, t_p, c, h // p, p, w // p, p).mean(axis=1, dtype=np.float64)
    diffs = np.abs(np.diff(reps, axis=0))
    return diffs.mean(axis=(1, 3, 5))


def segment_attention_forward(q, k, v, lengths, scale):
    """Per-segment softmax attention over packed heads.

    q, k, v: [h, n, hd]; lengths: per-segment row counts summing to n.
    Returns (out [h, n, hd], probs [h, sum(l_i^2)]): probs stores each
    segment's attention matrix flattened, for the backward pass.
    """
    h, n, hd = q.shape
    out = np.empty_like(q)
    total = int(np.sum(np.square(lengths, dtype=np.int64)))
    probs = np.empty((h, total), dtype=q.dtype)
    s = ps = 0
    for l in lengths:
        e = s + l
        sc = (q[:, s:e] @ k[:, s:e].transpose(0, 2, 1)) * scale
        sc -= sc.max(axis=2, keepdims=True)
        np.exp(sc, out=sc)
        sc /= sc.sum(axis=2, keepdims=True)
        out[:, s:e] = sc @ v[:, s:e]
        probs[:, ps:ps + l * l] = sc.reshape(h, l * l)
        s, ps = e, ps + l * l
    return out, probs


def segment_attention_backward(g, q, k, v, probs, lengths, scale):
    dq = np.empty_like(q)
    dk = np.empty_like(k)
    dv = np.empty_like(v)
    h = q.shape[0]
    s = ps = 0
    for l in lengths:
        e = s + l
        p = probs[:, ps:ps + l * l].reshape(h, l, l)
        gs = g[:, s:e]
        dp = gs @ v[:, s:e].transpose(0, 2, 1)
        ds = p * (dp - np.sum(dp * p, axis=2, keepdims=True))
        dq[:, s:e] = (ds @ k[:, s:e]) * scale
        dk[:, s:e] = (ds.transpose(0, 2, 1) @ q[:, s:e]) * scale
        dv[:, s:e] = p.transpose(0, 2, 1) @ gs
        s, ps = e, ps + l * l
    return dq, dk, dv
