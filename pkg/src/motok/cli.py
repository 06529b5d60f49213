"""Command-line entry point.

Subcommands: synth | label-oracle | train | eval | bench | viz.
Exit codes: 0 success, 1 user error (bad flags/files), 2 internal error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import adapt, bench, checkpoint, data, fileio, model, tokenize


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through exit code 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser():
    p = Parser(prog="motok", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate the synthetic two-domain dataset")
    sp.add_argument("--spec", help="dataset config file (flat key=value)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)

    lp = sub.add_parser("label-oracle", help="emit noisy oracle pseudo-label probabilities")
    lp.add_argument("--truth", required=True, help="ground-truth manifest (from synth)")
    lp.add_argument("--out", required=True)
    lp.add_argument("--noise-temp", type=float, default=0.4)
    lp.add_argument("--noise-scale", type=float, default=1.0)
    lp.add_argument("--seed", type=int, default=0)

    tp = sub.add_parser("train", help="run the adaptation training loop")
    tp.add_argument("--config", required=True)
    tp.add_argument("--out", required=True)
    tp.add_argument("--seed", type=int)
    tp.add_argument("--gamma-c", type=float)
    tp.add_argument("--lambda-t", type=float)
    tp.add_argument("--lambda-L", dest="lambda_l", type=float)
    tp.add_argument("--tau-override", type=float)
    tp.add_argument("--drop-mode", choices=["lmft", "random", "none"])
    tp.add_argument("--drop-ratio", type=float)

    ep = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    ep.add_argument("--ckpt", required=True)
    ep.add_argument("--manifest", required=True)
    ep.add_argument("--tau-override", type=float)
    ep.add_argument("--json", action="store_true")

    bp = sub.add_parser("bench", help="efficiency report: full vs random vs motion-based")
    bp.add_argument("--ckpt", required=True)
    bp.add_argument("--manifest", required=True)
    bp.add_argument("--repeats", type=int, default=3)
    bp.add_argument("--tau-override", type=float)
    bp.add_argument("--out", help="also write the report as CSV")
    bp.add_argument("--json", action="store_true")

    vp = sub.add_parser("viz", help="per-frame visualization of the selection")
    vp.add_argument("--video", required=True)
    vp.add_argument("--ckpt", required=True)
    vp.add_argument("--out", required=True)
    vp.add_argument("--tau-override", type=float)
    return p


def cmd_synth(args):
    cfg = {}
    if args.spec:
        cfg = fileio.read_config(args.spec)
    spec = data.spec_from_dict(cfg)
    if args.seed is not None:
        spec.seed = args.seed
    paths = data.generate_domain_pair(spec, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_label_oracle(args):
    out = data.oracle_probabilities(args.truth, args.out, noise_temp=args.noise_temp,
                                    seed=args.seed, noise_scale=args.noise_scale)
    print(f"pseudo-label probabilities written to {out}")
    return 0


def cmd_train(args):
    raw = fileio.read_config(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    for key in ("source_manifest", "target_manifest", "val_manifest", "probs_file"):
        if raw.get(key) and not os.path.isabs(raw[key]):
            raw[key] = os.path.join(base, raw[key])
    overrides = {
        "seed": args.seed, "gamma_c": args.gamma_c, "lambda_t": args.lambda_t,
        "lambda_l": args.lambda_l, "tau_override": args.tau_override,
        "drop_mode": args.drop_mode, "drop_ratio": args.drop_ratio,
    }
    for key, val in overrides.items():
        if val is not None:
            raw[key] = str(val)
    cfg = adapt.config_from_dict(raw)
    trainer = adapt.Trainer(cfg)
    trainer.run()
    trainer.save(args.out)
    last = trainer.metrics[-1] if trainer.metrics else {}
    print(f"trained {len(trainer.metrics)} iterations in {trainer.wall_clock:.1f}s; "
          f"final loss_da={last.get('loss_da', float('nan')):.4f} "
          f"tau_hat={trainer.tau_hat}")
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_eval(args):
    res = adapt.evaluate(args.manifest, args.ckpt, tau_override=args.tau_override)
    payload = {
        "accuracy": res.accuracy,
        "mean_drop_ratio": res.mean_drop_ratio,
        "mean_retained_tokens": res.mean_retained,
        "tokens_full": res.tokens_full,
        "n_videos": res.n_videos,
        "tau": res.tau,
    }
    if args.json:
        print(json.dumps(payload))
    else:
        for k, v in payload.items():
            print(f"{k}: {v}")
    return 0


def cmd_bench(args):
    reports = bench.run_report(args.ckpt, args.manifest, repeats=args.repeats,
                               tau_override=args.tau_override)
    if args.json:
        for r in reports:
            print(json.dumps(r.to_dict()))
    else:
        print(bench.format_table(reports))
    if args.out:
        bench.write_report_csv(args.out, reports)
    return 0


_HEAT_DIM = 0.3  # brightness multiplier for dropped patches


def render_frames(video, energy, mask, patch, tubelet):
    """Three-row frame images: original | energy heat | selection-dimmed."""
    t_use = energy.shape[0] * tubelet
    frames = []
    for t in range(t_use):
        sl = t // tubelet
        frame = video[t]
        c = frame.shape[0]
        if c >= 3:
            rgb = frame[:3].transpose(1, 2, 0)
        else:
            rgb = np.repeat(frame[:1].transpose(1, 2, 0), 3, axis=2)
        heat_small = energy[sl]
        heat = np.kron(heat_small, np.ones((patch, patch)))
        heat_rgb = np.stack([heat, 0.25 + 0.5 * heat, 1.0 - heat], axis=2)
        dim = np.kron(np.where(mask[sl], 1.0, _HEAT_DIM), np.ones((patch, patch)))
        masked_rgb = rgb * dim[:, :, None]
        sep = np.ones((2, rgb.shape[1], 3))
        frames.append(np.concatenate([rgb, sep, heat_rgb, sep, masked_rgb], axis=0))
    return frames


def cmd_viz(args):
    video = data.load_video(args.video)
    _, meta = checkpoint.load_checkpoint(args.ckpt)
    tok = meta["tokenize"]
    t_use = tok["n_t"] * tok["tubelet"]
    video = video[:t_use]
    energy = tokenize.motion_energy_tensor(video, tok["patch"], tok["tubelet"],
                                           tok["normalize_scope"])
    tau = args.tau_override
    if tau is None:
        tau = meta.get("tau_hat")
        if tau is None:
            raise UsageError("checkpoint has no tau_hat; pass --tau-override")
    mask = tokenize.select_tokens(energy, tau) if tau > 0.0 else np.ones(energy.shape, bool)
    os.makedirs(args.out, exist_ok=True)
    frames = render_frames(video, energy, mask, tok["patch"], tok["tubelet"])
    for t, img in enumerate(frames):
        fileio.write_ppm(os.path.join(args.out, f"frame_{t:03d}.ppm"), img)
    vid = data.video_id_for(args.video)
    with open(os.path.join(args.out, "masks.txt"), "w") as f:
        f.write(fileio.mask_dump_line(vid, mask) + "\n")
    print(f"{len(frames)} frames written to {args.out} "
          f"(tau={tau:.4f}, drop_ratio={tokenize.drop_ratio(mask):.4f})")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "label-oracle": cmd_label_oracle,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "viz": cmd_viz,
}


def run(argv):
    """Dispatch argv (without the program name); returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # internal failure
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main():
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
