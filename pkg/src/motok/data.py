"""Synthetic two-domain video data.

Class identity is carried purely by sprite motion (8 directions, 45 deg
apart, shared across domains); domains differ only in background
statistics: dark smooth low-frequency fields for the source domain vs
bright high-frequency textures with a slow drift for the target domain.
That construction makes the domain gap background-induced by design.

Also provides the synthetic pseudo-label oracle: noisy class-probability
rows derived from the generator's ground truth, in the same file format
the external labeler emits.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import fileio


@dataclass
class BackgroundSpec:
    brightness: tuple = (0.15, 0.30)   # per-video uniform range
    freq: tuple = (0.5, 2.0)           # spatial cycles over the frame
    drift: float = 0.0                 # pixels per frame of slow translation


@dataclass
class SyntheticSpec:
    n_classes: int = 8
    frames: int = 16
    size: int = 64
    channels: int = 3
    sprite_size: int = 14
    sprite_speed: float = 2.5
    speed_jitter: float = 0.1
    sprite_entry: tuple = (2, 6)   # sprite appears at frame U{lo..hi-1}: the
    # always-retained first tubelet stays class-free, so the class signal
    # lives entirely in motion tokens
    noise_level: float = 0.02
    n_source: int = 400
    n_target: int = 400
    n_val: int = 200
    seed: int = 0
    source_bg: BackgroundSpec = field(default_factory=BackgroundSpec)
    target_bg: BackgroundSpec = field(
        default_factory=lambda: BackgroundSpec(brightness=(0.45, 0.70),
                                               freq=(4.0, 8.0), drift=0.3))

    def bg_for(self, domain):
        return self.source_bg if domain == "source" else self.target_bg


_SPEC_SCALARS = {
    "n_classes": int, "frames": int, "size": int, "channels": int,
    "sprite_size": int, "sprite_speed": float, "speed_jitter": float,
    "noise_level": float, "n_source": int, "n_target": int, "n_val": int,
    "seed": int,
}


def spec_from_dict(d):
    """SyntheticSpec from flat key=value strings; background families use
    keys like source_brightness_lo / target_freq_hi / source_drift."""
    kwargs = {}
    entry = [2, 6]
    bgs = {"source": BackgroundSpec(),
           "target": BackgroundSpec(brightness=(0.45, 0.70), freq=(4.0, 8.0), drift=0.3)}
    for key, val in d.items():
        if key in _SPEC_SCALARS:
            kwargs[key] = _SPEC_SCALARS[key](val)
            continue
        if key == "sprite_entry_lo":
            entry[0] = int(val)
            continue
        if key == "sprite_entry_hi":
            entry[1] = int(val)
            continue
        dom, _, attr = key.partition("_")
        if dom in bgs:
            bg = bgs[dom]
            if attr == "brightness_lo":
                bg.brightness = (float(val), bg.brightness[1])
            elif attr == "brightness_hi":
                bg.brightness = (bg.brightness[0], float(val))
            elif attr == "freq_lo":
                bg.freq = (float(val), bg.freq[1])
            elif attr == "freq_hi":
                bg.freq = (bg.freq[0], float(val))
            elif attr == "drift":
                bg.drift = float(val)
            else:
                raise ValueError(f"unknown dataset config key {key!r}")
            continue
        raise ValueError(f"unknown dataset config key {key!r}")
    return SyntheticSpec(source_bg=bgs["source"], target_bg=bgs["target"],
                         sprite_entry=tuple(entry), **kwargs)


def _sprite_pattern(channels, size):
    """Fixed bright sprite with a directional two-tone gradient."""
    i = np.arange(size)
    gi, gj = np.meshgrid(i, i, indexing="ij")
    grad = (gi + gj) / (2.0 * (size - 1))
    pat = np.empty((channels, size, size), dtype=np.float64)
    for c in range(channels):
        pat[c] = 0.55 + 0.40 * grad * (1.0 if c % 2 == 0 else -1.0) + 0.05 * c
    # dark border ring so the sprite pops against bright backgrounds too
    pat[:, 0, :] = pat[:, -1, :] = pat[:, :, 0] = pat[:, :, -1] = 0.05
    return np.clip(pat, 0.0, 1.0)


def _background_frames(rng, bg, spec):
    """Analytic drifting texture evaluated per frame: [T, C, S, S]."""
    s = spec.size
    amp = rng.uniform(*bg.brightness)
    f1, f2 = rng.uniform(bg.freq[0], bg.freq[1], size=2)
    ph = rng.uniform(0.0, 2.0 * math.pi, size=(spec.channels, 2))
    theta = rng.uniform(0.0, 2.0 * math.pi)
    di, dj = bg.drift * math.sin(theta), bg.drift * math.cos(theta)
    ii, jj = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    out = np.empty((spec.frames, spec.channels, s, s), dtype=np.float64)
    for t in range(spec.frames):
        u = 2.0 * math.pi * f1 * (ii + di * t) / s
        v = 2.0 * math.pi * f2 * (jj + dj * t) / s
        for c in range(spec.channels):
            out[t, c] = amp * (0.5 + 0.5 * np.sin(u + ph[c, 0]) * np.sin(v + ph[c, 1]))
    return out


def class_velocity(label, n_classes, speed):
    angle = 2.0 * math.pi * label / n_classes
    return speed * math.sin(angle), speed * math.cos(angle)  # (di, dj)


def render_video(spec, domain, label, rng, with_sprite=True):
    """One [T, C, S, S] float32 video in [0, 1]."""
    frames = _background_frames(rng, spec.bg_for(domain), spec)
    if with_sprite:
        sp = spec.sprite_size
        speed = spec.sprite_speed * rng.uniform(1.0 - spec.speed_jitter,
                                                1.0 + spec.speed_jitter)
        di, dj = class_velocity(label, spec.n_classes, speed)
        t_enter = int(rng.integers(spec.sprite_entry[0], spec.sprite_entry[1]))
        horizon = spec.frames - 1 - t_enter
        # start range keeping the whole trajectory in bounds (no bouncing:
        # a bounce would flip the direction and corrupt the class)
        lo_i, hi_i = max(0.0, -di * horizon), min(spec.size - sp, spec.size - sp - di * horizon)
        lo_j, hi_j = max(0.0, -dj * horizon), min(spec.size - sp, spec.size - sp - dj * horizon)
        if lo_i > hi_i or lo_j > hi_j:
            raise ValueError("sprite cannot stay in frame; lower sprite_speed or frames")
        pi, pj = rng.uniform(lo_i, hi_i), rng.uniform(lo_j, hi_j)
        pat = _sprite_pattern(spec.channels, sp)
        for t in range(t_enter, spec.frames):
            step = t - t_enter
            i0, j0 = int(round(pi + di * step)), int(round(pj + dj * step))
            frames[t, :, i0:i0 + sp, j0:j0 + sp] = pat
    if spec.noise_level > 0:
        frames += rng.normal(0.0, spec.noise_level, size=frames.shape)
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def _balanced_labels(n, n_classes, rng):
    """Class counts within +/-1 of n / n_classes."""
    reps = np.arange(n, dtype=np.int64) % n_classes
    rng.shuffle(reps)
    return reps


def generate_domain_pair(spec, out_dir):
    """Write videos and manifests for source train / target train / target val.

    Target-train labels are withheld from its manifest (-1) but recorded in
    a truth sidecar for the synthetic pseudo-label oracle. Deterministic
    for a fixed spec.seed.
    """
    videos_dir = os.path.join(out_dir, "videos")
    os.makedirs(videos_dir, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    splits = {
        "source_train": ("source", spec.n_source, "src"),
        "target_train": ("target", spec.n_target, "tgt"),
        "target_val": ("target", spec.n_val, "val"),
    }
    paths = {}
    for split, (domain, count, prefix) in splits.items():
        labels = _balanced_labels(count, spec.n_classes, rng)
        entries, truth = [], []
        for i, label in enumerate(labels):
            vid = f"{prefix}_{i:04d}"
            rel = os.path.join("videos", vid + ".vten")
            fileio.write_vten(os.path.join(out_dir, rel),
                              render_video(spec, domain, int(label), rng))
            public = -1 if split == "target_train" else int(label)
            entries.append((rel, public, domain))
            truth.append((rel, int(label), domain))
        mpath = os.path.join(out_dir, split + ".tsv")
        fileio.write_manifest(mpath, entries)
        paths[split] = mpath
        if split == "target_train":
            tpath = os.path.join(out_dir, "truth_target_train.tsv")
            fileio.write_manifest(tpath, truth)
            paths["truth_target_train"] = tpath
    return paths


def video_id_for(path):
    return os.path.splitext(os.path.basename(path))[0]


def oracle_probabilities(truth_manifest, out_path, noise_temp, seed, noise_scale=1.0):
    """Synthetic stand-in for an external zero-shot labeler.

    Emits one probability row per video: softmax(one_hot(true)/noise_temp
    + noise_scale * N(0,1)). noise_temp -> 0 with zero noise recovers exact
    one-hot rows.
    """
    entries = fileio.read_manifest(truth_manifest)
    labels = [e[1] for e in entries]
    n_classes = max(labels) + 1
    rng = np.random.default_rng(seed)
    signal = 1.0 / noise_temp if noise_temp > 0 else 1e300
    rows = []
    for path, label, _domain in entries:
        z = noise_scale * rng.standard_normal(n_classes)
        z[label] += signal
        z -= z.max()
        p = np.exp(z)
        p /= p.sum()
        rows.append((video_id_for(path), p))
    fileio.write_probs(out_path, rows)
    return out_path


def load_video(path):
    """Read a .vten video; exact round-trip with the writer."""
    return fileio.read_vten(path)
