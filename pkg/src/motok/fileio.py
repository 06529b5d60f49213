"""File formats shared across commands and with external tools.

- .vten video: magic "LMFT", version u32, T C H W u32, then T*C*H*W
  float32 little-endian values in t-major (then c, h, w) order.
- manifest: one video per line, "path<TAB>label<TAB>domain" (label -1 = unlabeled).
- pseudo-label file: line-delimited JSON objects {"video_id": str, "probs": [C floats]}.
- mask dump: one line per video, "id<TAB>n_t n_x n_y<TAB>bitstring" in (t,x,y) order.
- config: flat key=value lines, '#' comments.
- PPM (P6) images for visualization output.
"""

import json
import os
import struct

import numpy as np

VTEN_MAGIC = b"LMFT"
VTEN_VERSION = 1

# guards against absurd headers on corrupt files
_MAX_ELEMENTS = 1 << 32


class VtenFormatError(ValueError):
    """Bad magic or malformed header."""


class VtenTruncatedError(VtenFormatError):
    """Header-declared payload exceeds the file contents."""


def write_vten(path, video):
    video = np.ascontiguousarray(video, dtype="<f4")
    if video.ndim != 4:
        raise ValueError(f"expected [T,C,H,W] video, got shape {video.shape}")
    with open(path, "wb") as f:
        f.write(VTEN_MAGIC)
        f.write(struct.pack("<5I", VTEN_VERSION, *video.shape))
        f.write(video.tobytes())


def read_vten(path):
    with open(path, "rb") as f:
        header = f.read(24)
        if len(header) < 24 or header[:4] != VTEN_MAGIC:
            raise VtenFormatError(f"not a .vten file: {path}")
        version, t, c, h, w = struct.unpack_from("<5I", header, 4)
        if version != VTEN_VERSION:
            raise VtenFormatError(f"unsupported .vten version {version} in {path}")
        count = int(t) * int(c) * int(h) * int(w)
        if count <= 0 or count > _MAX_ELEMENTS:
            raise VtenFormatError(f"implausible extents {(t, c, h, w)} in {path}")
        payload = f.read(4 * count)
    if len(payload) < 4 * count:
        raise VtenTruncatedError(
            f"declared {count} values but payload holds {len(payload) // 4}: {path}")
    return np.frombuffer(payload, dtype="<f4").reshape(t, c, h, w).astype(np.float32)


def write_manifest(path, entries):
    """entries: iterable of (video_path, label, domain)."""
    with open(path, "w") as f:
        for vp, label, domain in entries:
            f.write(f"{vp}\t{int(label)}\t{domain}\n")


def read_manifest(path):
    entries = []
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            vp, label, domain = line.split("\t")
            if not os.path.isabs(vp):
                vp = os.path.join(base, vp)
            entries.append((vp, int(label), domain))
    return entries


def write_probs(path, rows):
    """rows: iterable of (video_id, probs array)."""
    with open(path, "w") as f:
        for vid, probs in rows:
            rec = {"video_id": vid, "probs": [float(x) for x in probs]}
            f.write(json.dumps(rec) + "\n")


def read_probs(path):
    rows = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            probs = np.asarray(rec["probs"], dtype=np.float64)
            if probs.ndim != 1 or probs.size == 0:
                raise ValueError(f"{path}:{ln}: malformed probability vector")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-5:
                raise ValueError(f"{path}:{ln}: probabilities must be nonnegative and sum to 1")
            rows.append((rec["video_id"], probs))
    return rows


def mask_dump_line(video_id, mask):
    n_t, n_x, n_y = mask.shape
    bits = "".join("1" if b else "0" for b in mask.ravel())
    return f"{video_id}\t{n_t} {n_x} {n_y}\t{bits}"


def parse_config_text(text):
    """Flat key=value lines; '#' starts a comment; values stay strings."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def read_config(path):
    with open(path) as f:
        return parse_config_text(f.read())


def write_config(path, pairs):
    with open(path, "w") as f:
        for k, v in pairs.items():
            f.write(f"{k}={v}\n")


def write_ppm(path, image):
    """image: float [H, W, 3] in [0,1] or uint8."""
    if image.dtype != np.uint8:
        image = (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w, c = image.shape
    if c != 3:
        raise ValueError("PPM output needs 3 channels")
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(image.tobytes())
