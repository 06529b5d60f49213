"""Motion-focused video tokenization.

A video [T, C, H, W] is cut into non-overlapping tubelets of t_p frames
by p x p pixels, giving an (n_t, n_x, n_y) token grid. Each token's motion
energy is the mean absolute difference between its tubelet's temporal
average and the previous one's; energies are min-max normalized per video
and the first temporal slice is pinned to 1 so it always survives
selection. A token is retained iff its energy strictly exceeds the
threshold tau.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

__all__ = [
    "PatchGrid", "TokenSequence", "partition_video", "reassemble_video",
    "temporal_average", "motion_differences", "patch_energy",
    "normalize_energies", "assemble_energy_tensor", "motion_energy_tensor",
    "select_tokens", "drop_ratio", "gather_tokens", "flatten_grid",
]


@dataclass
class PatchGrid:
    """Tubelet blocks arranged as [n_t, n_x, n_y, t_p, C, p, p]."""
    blocks: np.ndarray

    @property
    def extents(self):
        return self.blocks.shape[:3]

    @property
    def n_tokens(self):
        n_t, n_x, n_y = self.extents
        return n_t * n_x * n_y


@dataclass
class TokenSequence:
    """Retained tokens in (t, x, y) lexicographic order."""
    indices: np.ndarray   # [M, 3] int64 original grid coordinates
    blocks: np.ndarray    # [M, t_p, C, p, p]
    video_id: str = ""

    def __len__(self):
        return self.indices.shape[0]


def _check_divisible(t, h, w, p, t_p):
    if t % t_p or h % p or w % p:
        raise ValueError(
            f"video extents T={t}, H={h}, W={w} not divisible by tubelet {t_p} / patch {p}")


def partition_video(video, p, t_p):
    """Lossless rearrangement into the tubelet grid."""
    t, c, h, w = video.shape
    _check_divisible(t, h, w, p, t_p)
    n_t, n_x, n_y = t // t_p, h // p, w // p
    blocks = (video.reshape(n_t, t_p, c, n_x, p, n_y, p)
              .transpose(0, 3, 5, 1, 2, 4, 6))
    return PatchGrid(np.ascontiguousarray(blocks))


def reassemble_video(grid):
    """Inverse of partition_video (bit-exact)."""
    n_t, n_x, n_y, t_p, c, p, _ = grid.blocks.shape
    video = grid.blocks.transpose(0, 3, 4, 1, 5, 2, 6)
    return np.ascontiguousarray(video).reshape(n_t * t_p, c, n_x * p, n_y * p)


def flatten_grid(grid):
    """Rows of flattened tubelets in (t, x, y) order: [N, t_p*C*p*p]."""
    return grid.blocks.reshape(grid.n_tokens, -1)


def temporal_average(grid):
    """Representative patches: mean over each tubelet's frames (float64)."""
    return grid.blocks.mean(axis=3, dtype=np.float64)


def motion_differences(reps):
    """Adjacent-in-time absolute differences; empty for a single slice."""
    return np.abs(np.diff(reps, axis=0))


def patch_energy(diffs):
    """Mean over channel and spatial dims of each difference map."""
    if diffs.shape[0] == 0:
        return np.zeros(diffs.shape[:3], dtype=np.float64)
    return diffs.mean(axis=(3, 4, 5), dtype=np.float64)


def normalize_energies(raw, scope="video"):
    """Min-max normalize raw energies into [0,1].

    scope="video": one min/max over all (t,x,y) energies of the video.
    scope="location": min/max per spatial location over its time sequence.
    Degenerate spans (max == min) normalize to all zeros.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        return raw.copy()
    if scope == "video":
        lo, hi = raw.min(), raw.max()
        if hi <= lo:
            return np.zeros_like(raw)
        return (raw - lo) / (hi - lo)
    if scope == "location":
        lo = raw.min(axis=0, keepdims=True)
        hi = raw.max(axis=0, keepdims=True)
        span = hi - lo
        out = np.where(span > 0, (raw - lo) / np.where(span > 0, span, 1.0), 0.0)
        return out
    raise ValueError(f"unknown normalize scope {scope!r}")


def assemble_energy_tensor(normed, n_x=None, n_y=None):
    """Prepend the all-ones first slice: [n_t-1, n_x, n_y] -> [n_t, n_x, n_y]."""
    normed = np.asarray(normed, dtype=np.float64)
    if normed.ndim != 3:
        raise ValueError(f"expected [n_t-1, n_x, n_y] energies, got shape {normed.shape}")
    if n_x is not None and normed.shape[1:] != (n_x, n_y):
        raise ValueError(f"energy slice shape {normed.shape[1:]} != grid ({n_x}, {n_y})")
    ones = np.ones((1,) + normed.shape[1:], dtype=np.float64)
    return np.concatenate([ones, normed], axis=0)


def motion_energy_tensor(video, p, t_p, scope="video"):
    """Full pipeline from a raw video to the [n_t, n_x, n_y] energy tensor.

    Uses the fused kernel for the raw-energy reduction; equivalent to
    composing partition/average/difference/energy (tested against it).
    """
    t, c, h, w = video.shape
    _check_divisible(t, h, w, p, t_p)
    raw = kernels.motion_energy(video, p, t_p)
    return assemble_energy_tensor(normalize_energies(raw, scope))


def select_tokens(energy, tau):
    """Binary retention mask: energy strictly greater than tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold must lie in (0,1), got {tau}")
    return energy > tau


def drop_ratio(mask):
    n = mask.size
    return float(n - np.count_nonzero(mask)) / n


def gather_tokens(grid, mask, video_id=""):
    """Retained tokens with their original grid indices, lex-ordered."""
    if mask.shape != grid.extents:
        raise ValueError(f"mask shape {mask.shape} != grid extents {grid.extents}")
    idx = np.argwhere(mask).astype(np.int64)
    flat = grid.blocks[mask]
    return TokenSequence(indices=idx, blocks=flat, video_id=video_id)


def random_drop_mask(extents, ratio, rng):
    """Content-blind mask dropping an exact token count uniformly at random.

    Keeps the full first temporal slice (parity with the motion-based
    selection guarantee), so ratio is capped at 1 - 1/n_t. The achieved
    drop ratio equals the request to within one token.
    """
    n_t, n_x, n_y = extents
    n = n_t * n_x * n_y
    if not 0.0 <= ratio <= 1.0 - 1.0 / n_t:
        raise ValueError(f"drop ratio must lie in [0, {1.0 - 1.0 / n_t:.4f}], got {ratio}")
    keep_total = n - int(round(ratio * n))
    first = n_x * n_y
    mask = np.zeros(n, dtype=bool)
    mask[:first] = True
    extra = max(keep_total - first, 0)
    if extra:
        pool = rng.choice(n - first, size=extra, replace=False)
        mask[first + pool] = True
    return mask.reshape(extents)
