"""Checkpoint I/O.

Parameter file (.lmck): magic "LMCK", format version u32, then per
parameter: name length u32, name bytes (utf-8), rank u32, extents u32
each, float32 little-endian values. Records run to end of file.

A checkpoint is a directory: params.lmck plus meta.json holding the
policy state (mu, log_sigma, baseline, tau_hat, tau_hat seed; JSON
numbers are 64-bit), the model/tokenizer config, and run metadata.
"""

import json
import os
import struct

import numpy as np

MAGIC = b"LMCK"
VERSION = 1

PARAMS_FILE = "params.lmck"
META_FILE = "meta.json"


class CheckpointError(ValueError):
    pass


def write_lmck(path, params):
    """params: dict name -> numpy array (cast to float32 on disk)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, arr in params.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def read_lmck(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    params = {}
    off = 8
    while off < len(blob):
        try:
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            end = off + 4 * count
            if end > len(blob):
                raise struct.error("payload")
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
            off = end
        except (struct.error, UnicodeDecodeError) as e:
            raise CheckpointError(f"truncated or corrupt checkpoint {path}: {e}") from e
        params[name] = arr.astype(np.float32)
    return params


def save_checkpoint(ckpt_dir, params, meta):
    os.makedirs(ckpt_dir, exist_ok=True)
    write_lmck(os.path.join(ckpt_dir, PARAMS_FILE), params)
    with open(os.path.join(ckpt_dir, META_FILE), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(ckpt_dir):
    params = read_lmck(os.path.join(ckpt_dir, PARAMS_FILE))
    with open(os.path.join(ckpt_dir, META_FILE)) as f:
        meta = json.load(f)
    return params, meta
