"""Inference-efficiency harness: analytic FLOP estimates as a function of
retained tokens, paired throughput measurement, and a per-method report
(full tokenization vs. random dropping vs. motion-based selection).
"""

import contextlib
import json
import os
import platform
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .tokenize import random_drop_mask  # noqa: F401  (re-export: harness surface)


def estimate_flops(cfg, n_tokens):
    """Analytic per-clip FLOP count for a ViT forward over n tokens.

    Closed form (multiply+add counted as 2 FLOPs, d = embed_dim,
    r = mlp_ratio, L = n_layers, n = retained tokens):

        embed:      2 * n * token_dim * d
        per layer:  attention  8*n*d^2 + 4*n^2*d   (q,k,v,o projections
                    plus the two n x n score/apply products)
                    mlp        4*n*d^2*r
        head:       2 * d * n_classes

    Deterministic model-level count, not a hardware measurement.
    """
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    n = float(n_tokens)
    d = cfg.embed_dim
    embed = 2.0 * n * cfg.token_dim * d
    attn = 8.0 * n * d * d + 4.0 * n * n * d
    mlp = 4.0 * n * d * d * cfg.mlp_ratio
    head = 2.0 * d * cfg.n_classes
    return embed + cfg.n_layers * (attn + mlp) + head


@dataclass
class ThroughputResult:
    clips_per_s: float      # median over repeats
    ci_low: float
    ci_high: float
    repeats: int
    n_clips: int
    env: dict


def measure_throughput(ckpt_dir, manifest, repeats=5, tau_override=None, warmup=1):
    """Median clips/s over full evaluation passes; warm-up passes excluded."""
    from . import adapt  # local import: the harness sits on top of the trainer

    rates = []
    n_clips = None
    for i in range(warmup + repeats):
        t0 = time.perf_counter()
        result = adapt.evaluate(manifest, ckpt_dir, tau_override=tau_override)
        dt = time.perf_counter() - t0
        n_clips = result.n_videos
        if i >= warmup:
            rates.append(n_clips / dt)
    rates = np.asarray(rates)
    return ThroughputResult(
        clips_per_s=float(np.median(rates)),
        ci_low=float(rates.min()),
        ci_high=float(rates.max()),
        repeats=repeats,
        n_clips=n_clips,
        env={"platform": platform.platform(), "python": platform.python_version(),
             "numpy": np.__version__, "kernel_backend": kernels.backend()})


@dataclass
class EfficiencyReport:
    method: str
    accuracy: float
    mean_retained: float
    flops_per_clip: float
    relative_cost: float     # method FLOPs / full-tokenization FLOPs
    clips_per_s: float
    train_wall_clock: float

    def to_dict(self):
        return {
            "method": self.method,
            "accuracy": self.accuracy,
            "mean_retained_tokens": self.mean_retained,
            "flops_per_clip": self.flops_per_clip,
            "relative_cost": self.relative_cost,
            "clips_per_s": self.clips_per_s,
            "train_wall_clock_s": self.train_wall_clock,
        }


@contextlib.contextmanager
def _shadow_checkpoint(ckpt_dir, meta, mode, drop_ratio=None):
    """Same parameters, altered drop mode: lets one trained checkpoint be
    evaluated under full / random / motion-based selection."""
    with tempfile.TemporaryDirectory() as tmp:
        shadow = dict(meta)
        shadow["drop_mode"] = mode
        if drop_ratio is not None:
            shadow["drop_ratio"] = drop_ratio
        os.symlink(os.path.abspath(os.path.join(ckpt_dir, "params.lmck")),
                   os.path.join(tmp, "params.lmck"))
        with open(os.path.join(tmp, "meta.json"), "w") as f:
            json.dump(shadow, f)
        yield tmp


def run_report(ckpt_dir, manifest, repeats=3, tau_override=None,
               methods=("full", "random", "lmft")):
    """Evaluate one checkpoint under each token-selection method.

    The random row's requested drop ratio is matched to the motion-based
    row's achieved mean ratio (fair matched-budget comparison); relative
    cost is each row's estimated FLOPs over the full-tokenization row's.
    """
    from . import adapt, checkpoint, model

    _, meta = checkpoint.load_checkpoint(ckpt_dir)
    cfg = model.ViTConfig.from_dict(meta["model"])
    wall = meta.get("train_wall_clock", float("nan"))
    n_t = cfg.grid[0]
    full_tokens = int(np.prod(cfg.grid))
    full_flops = estimate_flops(cfg, full_tokens)

    with _shadow_checkpoint(ckpt_dir, meta, "lmft") as tmp:
        lmft_eval = adapt.evaluate(manifest, tmp, tau_override=tau_override)
    matched_ratio = min(max(lmft_eval.mean_drop_ratio, 0.0), 1.0 - 1.0 / n_t)

    plans = {
        "full": ("none", None, None),
        "random": ("random", matched_ratio, None),
        "lmft": ("lmft", None, tau_override),
    }
    reports = []
    for method in methods:
        mode, ratio, override = plans[method]
        with _shadow_checkpoint(ckpt_dir, meta, mode, ratio) as tmp:
            ev = lmft_eval if method == "lmft" else \
                adapt.evaluate(manifest, tmp, tau_override=override)
            tput = measure_throughput(tmp, manifest, repeats=repeats,
                                      tau_override=override)
        flops = estimate_flops(cfg, max(ev.mean_retained, 1.0))
        reports.append(EfficiencyReport(
            method=method,
            accuracy=ev.accuracy,
            mean_retained=ev.mean_retained,
            flops_per_clip=flops,
            relative_cost=flops / full_flops,
            clips_per_s=tput.clips_per_s,
            train_wall_clock=wall))
    return reports


def format_table(reports):
    headers = ["method", "accuracy", "retained", "GFLOPs", "cost", "clips/s", "train_s"]
    rows = [[r.method, f"{r.accuracy:.4f}", f"{r.mean_retained:.1f}",
             f"{r.flops_per_clip / 1e9:.4f}", f"{r.relative_cost:.3f}x",
             f"{r.clips_per_s:.2f}", f"{r.train_wall_clock:.1f}"] for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def write_report_csv(path, reports):
    cols = ["method", "accuracy", "mean_retained_tokens", "flops_per_clip",
            "relative_cost", "clips_per_s", "train_wall_clock_s"]
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for r in reports:
            d = r.to_dict()
            f.write(",".join(str(d[c]) for c in cols) + "\n")
