"""Small pre-norm ViT classifier over variable-length token sequences.

Videos keep different token counts after pruning, so a batch is packed by
concatenating sequences without padding; attention is confined to each
video's segment (block-diagonal structure), and classification mean-pools
each segment before the linear head. Positional information is a factorized
additive embedding looked up by the token's original (t, x, y) grid index,
so pruning never scrambles positions.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass
class ViTConfig:
    embed_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    mlp_ratio: int = 2
    n_classes: int = 8
    patch: int = 16
    tubelet: int = 2
    channels: int = 3
    grid: tuple = (8, 4, 4)   # (n_t, n_x, n_y)
    dropout: float = 0.0

    def __post_init__(self):
        if self.embed_dim % self.n_heads:
            raise ValueError("embed_dim must be divisible by n_heads")
        self.grid = tuple(int(g) for g in self.grid)

    @property
    def token_dim(self):
        return self.tubelet * self.channels * self.patch * self.patch

    def to_dict(self):
        return {
            "embed_dim": self.embed_dim, "n_layers": self.n_layers,
            "n_heads": self.n_heads, "mlp_ratio": self.mlp_ratio,
            "n_classes": self.n_classes, "patch": self.patch,
            "tubelet": self.tubelet, "channels": self.channels,
            "grid": list(self.grid), "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["grid"] = tuple(d["grid"])
        return cls(**d)


@dataclass
class PackedBatch:
    """Concatenated token rows of all videos in a batch."""
    tokens: np.ndarray    # [n_total, token_dim] float32
    idx_t: np.ndarray     # [n_total] original grid coordinates
    idx_x: np.ndarray
    idx_y: np.ndarray
    lengths: np.ndarray   # [B] per-video segment lengths
    labels: np.ndarray = None

    @property
    def n_videos(self):
        return len(self.lengths)


@dataclass
class BlockDiagonalMask:
    """Segment boundaries; (i,j) attention is allowed iff same segment."""
    lengths: np.ndarray
    starts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        self.starts = np.concatenate(([0], np.cumsum(self.lengths)[:-1]))

    def count_allowed(self):
        return int(np.sum(self.lengths ** 2))

    def dense(self):
        n = int(self.lengths.sum())
        m = np.zeros((n, n), dtype=bool)
        for s, l in zip(self.starts, self.lengths):
            m[s:s + l, s:s + l] = True
        return m


def build_block_diagonal_mask(lengths):
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.size == 0 or lengths.min() <= 0:
        raise ValueError("segment lengths must be positive")
    return BlockDiagonalMask(lengths)


def init_params(cfg, seed=0, dtype=np.float32):
    """Fresh parameter arrays (dict name -> ndarray)."""
    rng = np.random.default_rng(seed)
    d = cfg.embed_dim
    n_t, n_x, n_y = cfg.grid

    def w(*shape):
        return rng.normal(0.0, 0.02, size=shape).astype(dtype)

    params = {
        "embed.w": w(cfg.token_dim, d),
        "pos_t": w(n_t, d),
        "pos_x": w(n_x, d),
        "pos_y": w(n_y, d),
    }
    for i in range(cfg.n_layers):
        pre = f"blocks.{i}."
        params[pre + "ln1.g"] = np.ones(d, dtype=dtype)
        params[pre + "ln1.b"] = np.zeros(d, dtype=dtype)
        for name in ("wq", "wk", "wv", "wo"):
            params[pre + "attn." + name] = w(d, d)
            params[pre + "attn." + name.replace("w", "b")] = np.zeros(d, dtype=dtype)
        params[pre + "ln2.g"] = np.ones(d, dtype=dtype)
        params[pre + "ln2.b"] = np.zeros(d, dtype=dtype)
        hidden = d * cfg.mlp_ratio
        params[pre + "mlp.w1"] = w(d, hidden)
        params[pre + "mlp.b1"] = np.zeros(hidden, dtype=dtype)
        params[pre + "mlp.w2"] = w(hidden, d)
        params[pre + "mlp.b2"] = np.zeros(d, dtype=dtype)
    params["ln_f.g"] = np.ones(d, dtype=dtype)
    params["ln_f.b"] = np.zeros(d, dtype=dtype)
    params["head.w"] = w(d, cfg.n_classes)
    params["head.b"] = np.zeros(cfg.n_classes, dtype=dtype)
    return params


def as_tensors(params, requires_grad=False):
    return {k: T.Tensor(v, requires_grad=requires_grad, dtype=v.dtype)
            for k, v in params.items()}


def pack_sequences(seqs, labels=None, dtype=np.float32):
    """Concatenate TokenSequences into one PackedBatch (no padding)."""
    if not seqs:
        raise ValueError("cannot pack an empty batch")
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if lengths.min() <= 0:
        raise ValueError("zero-length segment")
    idx = np.concatenate([s.indices for s in seqs], axis=0)
    tokens = np.concatenate(
        [s.blocks.reshape(len(s), -1) for s in seqs], axis=0).astype(dtype, copy=False)
    return PackedBatch(
        tokens=tokens, idx_t=idx[:, 0], idx_x=idx[:, 1], idx_y=idx[:, 2],
        lengths=lengths,
        labels=None if labels is None else np.asarray(labels, dtype=np.int64))


def embed_packed(batch, cfg, params):
    """Bias-free token projection plus factorized positional embedding."""
    n_t, n_x, n_y = cfg.grid
    if (batch.idx_t.max(initial=0) >= n_t or batch.idx_x.max(initial=0) >= n_x
            or batch.idx_y.max(initial=0) >= n_y):
        raise IndexError("token grid index outside the configured extents")
    tok = T.Tensor(batch.tokens, dtype=params["embed.w"].dtype)
    e = T.matmul(tok, params["embed.w"])
    e = T.add(e, T.gather_rows(params["pos_t"], batch.idx_t))
    e = T.add(e, T.gather_rows(params["pos_x"], batch.idx_x))
    e = T.add(e, T.gather_rows(params["pos_y"], batch.idx_y))
    return e


def embed_tokens(seq, cfg, params):
    """Embeddings for a single TokenSequence (lookup by original index)."""
    return embed_packed(pack_sequences([seq]), cfg, params)


def forward_classify(batch, cfg, params, dropout_rng=None):
    """Per-video logits [B, n_classes] for a packed batch.

    Attention is evaluated per segment, so a video's logits are exactly
    independent of every other video in the pack.
    """
    mask = build_block_diagonal_mask(batch.lengths)
    rate = cfg.dropout if dropout_rng is not None else 0.0
    x = embed_packed(batch, cfg, params)
    for i in range(cfg.n_layers):
        pre = f"blocks.{i}."
        h = T.layernorm(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        q = T.add(T.matmul(h, params[pre + "attn.wq"]), params[pre + "attn.bq"])
        k = T.add(T.matmul(h, params[pre + "attn.wk"]), params[pre + "attn.bk"])
        v = T.add(T.matmul(h, params[pre + "attn.wv"]), params[pre + "attn.bv"])
        a = T.masked_attention(q, k, v, mask.lengths, cfg.n_heads)
        a = T.add(T.matmul(a, params[pre + "attn.wo"]), params[pre + "attn.bo"])
        if rate > 0.0:
            a = T.dropout(a, rate, dropout_rng)
        x = T.add(x, a)
        h = T.layernorm(x, params[pre + "ln2.g"], params[pre + "ln2.b"])
        h = T.gelu(T.add(T.matmul(h, params[pre + "mlp.w1"]), params[pre + "mlp.b1"]))
        h = T.add(T.matmul(h, params[pre + "mlp.w2"]), params[pre + "mlp.b2"])
        if rate > 0.0:
            h = T.dropout(h, rate, dropout_rng)
        x = T.add(x, h)
    x = T.layernorm(x, params["ln_f.g"], params["ln_f.b"])
    pooled = T.segment_mean(x, mask.lengths)
    return T.add(T.matmul(pooled, params["head.w"]), params["head.b"])
