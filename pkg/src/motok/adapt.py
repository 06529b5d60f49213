"""Joint source/target training loop with pseudo-label self-training and
the reinforcement-learned selection threshold.

Each iteration samples one threshold tau shared by the source and target
batches, tokenizes every video of the iteration with it, takes one AdamW
step on L_s + lambda_t * L_t, and gives the policy one update with reward
R = (-lambda_l * L_s - (1 - rho_s)) + (-lambda_l * L_t - (1 - rho_t)).
An empty filtered target set degenerates to source-only training with
L_t = 0 and rho_t = 0.
"""

import os
import time
from dataclasses import dataclass, fields

import numpy as np

from . import checkpoint as ckpt_io
from . import fileio, model, optim
from . import policy as policy_mod
from . import tensor as T
from . import tokenize
from .data import load_video, video_id_for

METRIC_COLUMNS = ["iter", "loss_s", "loss_t", "loss_da", "tau",
                  "rho_s", "rho_t", "r_total", "baseline"]


@dataclass
class TrainConfig:
    # tokenization
    n_t: int = 8
    patch: int = 16
    tubelet: int = 2
    normalize_scope: str = "video"
    # model
    embed_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    mlp_ratio: int = 2
    dropout: float = 0.0
    # optimization
    epochs: int = 10
    batch_size: int = 16
    model_lr: float = 1e-4
    weight_decay: float = 0.05
    policy_step: float = 1e-2
    # adaptation
    gamma_c: float = 0.8
    lambda_t: float = 0.5
    lambda_l: float = 10.0
    # token dropping
    drop_mode: str = "lmft"      # lmft | random | none
    drop_ratio: float = 0.5      # requested ratio for random mode
    tau_override: float = None   # fixed tau bypassing the policy
    mc_samples: int = 100        # draws for the deterministic threshold
    seed: int = 0
    # inputs
    source_manifest: str = ""
    target_manifest: str = ""
    val_manifest: str = ""
    probs_file: str = ""

    def __post_init__(self):
        if not 0.0 <= self.gamma_c <= 1.0:
            raise ValueError("gamma_c must lie in [0,1]")
        if self.lambda_t <= 0 or self.lambda_l <= 0:
            raise ValueError("lambda_t and lambda_l must be positive")
        if self.drop_mode not in ("lmft", "random", "none"):
            raise ValueError(f"unknown drop_mode {self.drop_mode!r}")
        if self.tau_override is not None and not 0.0 <= self.tau_override < 1.0:
            raise ValueError("tau_override must lie in [0,1); 0 keeps every token")


def config_from_dict(d):
    """Build a TrainConfig from flat string key=value pairs."""
    kwargs = {}
    known = {f.name: f for f in fields(TrainConfig)}
    for key, val in d.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        if key == "tau_override":
            kwargs[key] = None if val.lower() in ("", "none") else float(val)
            continue
        typ = type(getattr(TrainConfig, key))
        kwargs[key] = typ(val) if typ in (int, float, str) else val
    return TrainConfig(**kwargs)


def config_to_dict(cfg):
    out = {}
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        out[f.name] = "none" if v is None else str(v)
    return out


@dataclass
class PseudoLabelRecord:
    video_id: str
    probs: np.ndarray
    assigned_label: int = None   # argmax, present only after passing the gate


@dataclass
class FilteredTargetSet:
    entries: list  # (video_id, assigned_label)

    @property
    def size(self):
        return len(self.entries)

    def as_dict(self):
        return dict(self.entries)


@dataclass
class RewardBreakdown:
    loss_s: float
    loss_t: float
    rho_s: float
    rho_t: float
    r_src: float
    r_tgt: float
    r_total: float


def read_pseudolabels(path):
    return [PseudoLabelRecord(vid, probs) for vid, probs in fileio.read_probs(path)]


def filter_pseudolabels(records, gamma_c):
    """Keep records whose max probability strictly exceeds gamma_c.

    The kept label is the argmax (lowest index on ties)."""
    entries = []
    for rec in records:
        p = np.asarray(rec.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-5:
            raise ValueError(f"malformed probability vector for {rec.video_id}")
        if float(p.max()) > gamma_c:
            label = int(np.argmax(p))
            rec.assigned_label = label
            entries.append((rec.video_id, label))
    return FilteredTargetSet(entries)


def da_loss(source_logits, source_labels, target_logits, target_labels, lambda_t):
    """(L_s, L_t, L_da) with L_da = L_s + lambda_t * L_t; empty target -> L_t = 0."""
    loss_s = T.cross_entropy(source_logits, source_labels)
    if target_logits is None:
        return loss_s, None, loss_s
    loss_t = T.cross_entropy(target_logits, target_labels)
    return loss_s, loss_t, T.add(loss_s, T.scale(loss_t, lambda_t))


def compute_reward(loss_s, loss_t, rho_s, rho_t, lambda_l):
    if not (np.isfinite(loss_s) and np.isfinite(loss_t)):
        raise FloatingPointError("non-finite loss in reward computation")
    r_src = -lambda_l * loss_s - (1.0 - rho_s)
    r_tgt = -lambda_l * loss_t - (1.0 - rho_t)
    return RewardBreakdown(loss_s=loss_s, loss_t=loss_t, rho_s=rho_s, rho_t=rho_t,
                           r_src=r_src, r_tgt=r_tgt, r_total=r_src + r_tgt)


def _rng_stream(seed, stream):
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), stream)))


# stream ids for the independent per-purpose generators
(_STREAM_INIT, _STREAM_POLICY, _STREAM_SOURCE, _STREAM_TARGET,
 _STREAM_DROP, _STREAM_DROPOUT, _STREAM_EVAL) = range(7)


class Trainer:
    """Owns the model parameters, policy, caches, and metric log."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.source = [(p, l) for p, l, _ in fileio.read_manifest(cfg.source_manifest)]
        if any(l < 0 for _, l in self.source):
            raise ValueError("source manifest must be fully labeled")
        self.target_paths = [p for p, _, _ in fileio.read_manifest(cfg.target_manifest)] \
            if cfg.target_manifest else []

        if cfg.probs_file:
            records = read_pseudolabels(cfg.probs_file)
            self.filtered = filter_pseudolabels(records, cfg.gamma_c)
        else:
            self.filtered = FilteredTargetSet([])
        kept = self.filtered.as_dict()
        self.target = [(p, kept[video_id_for(p)]) for p in self.target_paths
                       if video_id_for(p) in kept]

        probe = load_video(self.source[0][0])
        t_use = cfg.n_t * cfg.tubelet
        if probe.shape[0] < t_use:
            raise ValueError(f"videos have {probe.shape[0]} frames; config needs {t_use}")
        n_classes = max(l for _, l in self.source) + 1
        self.model_cfg = model.ViTConfig(
            embed_dim=cfg.embed_dim, n_layers=cfg.n_layers, n_heads=cfg.n_heads,
            mlp_ratio=cfg.mlp_ratio, n_classes=n_classes, patch=cfg.patch,
            tubelet=cfg.tubelet, channels=probe.shape[1],
            grid=(cfg.n_t, probe.shape[2] // cfg.patch, probe.shape[3] // cfg.patch),
            dropout=cfg.dropout)

        self.tape = T.Tape()
        for name, arr in model.init_params(self.model_cfg, seed=_rng_stream(cfg.seed, _STREAM_INIT)
                                           .integers(2**31)).items():
            self.tape.parameter(name, arr)
        self.optimizer = optim.AdamW(self.tape.params, lr=cfg.model_lr,
                                     weight_decay=cfg.weight_decay)
        self.policy = policy_mod.ThresholdPolicy(step_size=cfg.policy_step)
        self.rng_policy = _rng_stream(cfg.seed, _STREAM_POLICY)
        self.rng_source = _rng_stream(cfg.seed, _STREAM_SOURCE)
        self.rng_target = _rng_stream(cfg.seed, _STREAM_TARGET)
        self.rng_drop = _rng_stream(cfg.seed, _STREAM_DROP)
        self.rng_dropout = _rng_stream(cfg.seed, _STREAM_DROPOUT)
        self.eval_seed = int(_rng_stream(cfg.seed, _STREAM_EVAL).integers(2**31))

        self._cache = {}
        self._grid_indices = None
        self.metrics = []
        self.iteration = 0
        self.tau_hat = None
        self.wall_clock = 0.0
        self.last_logits = None

    # -- tokenization ------------------------------------------------------

    def _tokens_and_energy(self, path):
        hit = self._cache.get(path)
        if hit is None:
            cfg = self.cfg
            video = load_video(path)[:cfg.n_t * cfg.tubelet]
            grid = tokenize.partition_video(video, cfg.patch, cfg.tubelet)
            flat = np.ascontiguousarray(tokenize.flatten_grid(grid), dtype=np.float32)
            energy = tokenize.motion_energy_tensor(video, cfg.patch, cfg.tubelet,
                                                   cfg.normalize_scope)
            hit = (flat, energy)
            self._cache[path] = hit
        return hit

    def _mask_for(self, energy, tau, rng_drop):
        mode = self.cfg.drop_mode
        if mode == "lmft":
            # tau == 0 is the no-drop limit of the strict > rule
            if tau <= 0.0:
                return np.ones(energy.shape, dtype=bool)
            return tokenize.select_tokens(energy, tau)
        if mode == "random":
            return tokenize.random_drop_mask(energy.shape, self.cfg.drop_ratio, rng_drop)
        return np.ones(energy.shape, dtype=bool)

    def _sequences(self, paths, tau, rng_drop):
        if self._grid_indices is None:
            grid = self.model_cfg.grid
            self._grid_indices = np.indices(grid).reshape(3, -1).T.astype(np.int64)
        seqs, rhos = [], []
        for path in paths:
            flat, energy = self._tokens_and_energy(path)
            mask = self._mask_for(energy, tau, rng_drop)
            keep = mask.ravel()
            seqs.append(tokenize.TokenSequence(indices=self._grid_indices[keep],
                                               blocks=flat[keep],
                                               video_id=video_id_for(path)))
            rhos.append(tokenize.drop_ratio(mask))
        return seqs, rhos

    # -- training ----------------------------------------------------------

    def train_iteration(self, source_batch, target_batch):
        """One model step + one policy update; returns the metrics row."""
        cfg = self.cfg
        sample = None
        tau = None
        if cfg.drop_mode == "lmft":
            if cfg.tau_override is not None:
                tau = cfg.tau_override
            else:
                sample = policy_mod.sample_threshold(self.policy, self.rng_policy)
                tau = sample.tau

        src_paths = [p for p, _ in source_batch]
        src_labels = np.array([l for _, l in source_batch], dtype=np.int64)
        src_seqs, rho_s_list = self._sequences(src_paths, tau, self.rng_drop)
        tgt_seqs, rho_t_list, tgt_labels = [], [], None
        if target_batch:
            tgt_paths = [p for p, _ in target_batch]
            tgt_labels = np.array([l for _, l in target_batch], dtype=np.int64)
            tgt_seqs, rho_t_list = self._sequences(tgt_paths, tau, self.rng_drop)

        drng = self.rng_dropout if cfg.dropout > 0 else None
        with self.tape:
            src_logits = model.forward_classify(model.pack_sequences(src_seqs),
                                                self.model_cfg, self.tape.params, drng)
            tgt_logits = None
            if tgt_seqs:
                tgt_logits = model.forward_classify(model.pack_sequences(tgt_seqs),
                                                    self.model_cfg, self.tape.params, drng)
            loss_s, loss_t, loss_da = da_loss(src_logits, src_labels,
                                              tgt_logits, tgt_labels, cfg.lambda_t)
            self.tape.backward(loss_da)
        self.optimizer.step()
        self.optimizer.zero_grad()
        self.tape.reset()
        self.last_logits = (src_logits.data.copy(), src_labels,
                            None if tgt_logits is None else tgt_logits.data.copy(), tgt_labels)

        rho_s = float(np.mean(rho_s_list))
        rho_t = float(np.mean(rho_t_list)) if rho_t_list else 0.0
        reward = compute_reward(float(loss_s.data), 0.0 if loss_t is None else float(loss_t.data),
                                rho_s, rho_t, cfg.lambda_l)
        if sample is not None:
            policy_mod.reinforce_update(self.policy, sample, reward.r_total)

        row = {
            "iter": self.iteration,
            "loss_s": reward.loss_s,
            "loss_t": reward.loss_t,
            "loss_da": float(loss_da.data),
            "tau": float("nan") if tau is None else float(tau),
            "rho_s": rho_s,
            "rho_t": rho_t,
            "r_total": reward.r_total,
            "baseline": self.policy.baseline,
        }
        self.iteration += 1
        self.metrics.append(row)
        return row

    def _target_batches(self):
        """Endless target batches, reshuffled on every pass through the set."""
        while True:
            order = self.rng_target.permutation(len(self.target))
            for start in range(0, len(order), self.cfg.batch_size):
                yield [self.target[i] for i in order[start:start + self.cfg.batch_size]]

    def run(self):
        cfg = self.cfg
        start = time.perf_counter()
        target_iter = self._target_batches() if self.target else None
        for _epoch in range(cfg.epochs):
            order = self.rng_source.permutation(len(self.source))
            for s in range(0, len(order), cfg.batch_size):
                src_batch = [self.source[i] for i in order[s:s + cfg.batch_size]]
                tgt_batch = next(target_iter) if target_iter is not None else []
                self.train_iteration(src_batch, tgt_batch)
        if cfg.drop_mode == "lmft":
            if cfg.tau_override is not None:
                self.tau_hat = float(cfg.tau_override)
            else:
                self.tau_hat = policy_mod.deterministic_threshold(
                    self.policy, k=cfg.mc_samples, seed=policy_mod.TAU_HAT_SEED)
        self.wall_clock = time.perf_counter() - start
        return self.metrics

    # -- persistence -------------------------------------------------------

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        params = {k: t.data for k, t in self.tape.params.items()}
        meta = {
            "model": self.model_cfg.to_dict(),
            "tokenize": {"n_t": self.cfg.n_t, "patch": self.cfg.patch,
                         "tubelet": self.cfg.tubelet,
                         "normalize_scope": self.cfg.normalize_scope},
            "policy": {"mu": self.policy.mu, "log_sigma": self.policy.log_sigma,
                       "baseline": self.policy.baseline,
                       "step_size": self.policy.step_size},
            "tau_hat": self.tau_hat,
            "tau_hat_seed": policy_mod.TAU_HAT_SEED,
            "mc_samples": self.cfg.mc_samples,
            "drop_mode": self.cfg.drop_mode,
            "drop_ratio": self.cfg.drop_ratio,
            "eval_seed": self.eval_seed,
            "seed": self.cfg.seed,
            "train_wall_clock": self.wall_clock,
            "filtered_target_size": self.filtered.size,
        }
        ckpt_io.save_checkpoint(out_dir, params, meta)
        write_metrics(os.path.join(out_dir, "metrics.csv"), self.metrics)
        fileio.write_config(os.path.join(out_dir, "config.cfg"), config_to_dict(self.cfg))


def write_metrics(path, rows):
    with open(path, "w") as f:
        f.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(_fmt(row[c]) for c in METRIC_COLUMNS) + "\n")


def _fmt(v):
    return str(v) if isinstance(v, int) else repr(float(v))


@dataclass
class EvalResult:
    accuracy: float
    mean_drop_ratio: float
    mean_retained: float
    tokens_full: int
    n_videos: int
    tau: float = None
    predictions: list = None


def evaluate(manifest, ckpt_dir, tau_override=None, batch_size=32, collect_predictions=False):
    """Deterministic evaluation with the checkpoint's stored threshold.

    drop_mode lmft uses tau_hat (or the explicit override), random re-draws
    masks from the checkpoint's fixed eval seed, none keeps all tokens.
    """
    params_np, meta = ckpt_io.load_checkpoint(ckpt_dir)
    cfg = model.ViTConfig.from_dict(meta["model"])
    params = model.as_tensors(params_np)
    tok = meta["tokenize"]
    mode = meta["drop_mode"]
    tau = tau_override
    if mode == "lmft" and tau is None:
        tau = meta.get("tau_hat")
        if tau is None:
            raise ValueError("checkpoint has no tau_hat; evaluation needs one")
    rng_drop = np.random.default_rng(meta["eval_seed"])

    entries = fileio.read_manifest(manifest)
    grid_idx = np.indices(cfg.grid).reshape(3, -1).T.astype(np.int64)
    n_full = int(np.prod(cfg.grid))
    correct = 0
    retained = []
    preds = []
    for start in range(0, len(entries), batch_size):
        chunk = entries[start:start + batch_size]
        seqs, labels = [], []
        for path, label, _dom in chunk:
            video = load_video(path)[:tok["n_t"] * tok["tubelet"]]
            grid = tokenize.partition_video(video, tok["patch"], tok["tubelet"])
            flat = np.ascontiguousarray(tokenize.flatten_grid(grid), dtype=np.float32)
            if mode == "lmft":
                energy = tokenize.motion_energy_tensor(video, tok["patch"], tok["tubelet"],
                                                       tok["normalize_scope"])
                mask = tokenize.select_tokens(energy, tau) if 0.0 < tau < 1.0 else \
                    np.ones(cfg.grid, dtype=bool)
            elif mode == "random":
                mask = tokenize.random_drop_mask(cfg.grid, meta["drop_ratio"], rng_drop)
            else:
                mask = np.ones(cfg.grid, dtype=bool)
            keep = mask.ravel()
            seqs.append(tokenize.TokenSequence(indices=grid_idx[keep], blocks=flat[keep],
                                               video_id=video_id_for(path)))
            retained.append(int(np.count_nonzero(keep)))
            labels.append(label)
        logits = model.forward_classify(model.pack_sequences(seqs), cfg, params).data
        batch_preds = np.argmax(logits, axis=1)
        preds.extend(int(p) for p in batch_preds)
        correct += int(np.sum(batch_preds == np.asarray(labels)))

    retained = np.asarray(retained, dtype=np.float64)
    return EvalResult(
        accuracy=correct / len(entries),
        mean_drop_ratio=float(np.mean((n_full - retained) / n_full)),
        mean_retained=float(retained.mean()),
        tokens_full=n_full,
        n_videos=len(entries),
        tau=tau,
        predictions=preds if collect_predictions else None)
