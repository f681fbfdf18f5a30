"""Command-line front end.

Subcommands:
  train            run one experiment (train + evaluations) into a directory
  eval             evaluate a saved checkpoint on the config's test split
  sweep            snr / codebook / ablation sweeps
  channels-gen     draw and store a channel realization
  codebook-inspect summarize the tracked codebook of one surface
  dataset-synth    generate and store the synthetic dataset

Exit codes: 0 success, 1 runtime failure (message on stderr as
"error: <category>: ..."), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import analog as an
from . import channel as ch
from . import data as D
from . import experiments as ex
from .layers import load_checkpoint


class CliError(Exception):
    def __init__(self, category, message):
        super().__init__(f"error: {category}: {message}")
        self.category = category


def _load_config(args):
    if args.config:
        try:
            cfg = ex.ExperimentConfig.from_json(args.config)
        except FileNotFoundError:
            raise CliError("config", f"no such file: {args.config}")
        except (ValueError, TypeError, json.JSONDecodeError) as e:
            raise CliError("config", str(e))
    else:
        cfg = ex.ExperimentConfig()
    overrides = {}
    for field in ("seed", "stage1_epochs", "stage2_epochs", "codebook_size",
                  "learning_rate", "n_train", "n_val", "n_test"):
        v = getattr(args, field, None)
        if v is not None:
            overrides[field] = v
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


def _add_common(p):
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--out", required=True, help="output directory")


def cmd_train(args):
    cfg = _load_config(args)
    result, _ = ex.run_experiment(cfg, args.out)
    final = result.final_val
    print(f"trained {cfg.name}: psnr={final['psnr']:.3f} dB "
          f"ssim={final['ssim']:.4f} accuracy={final['accuracy']:.4f}")
    return 0


def cmd_eval(args):
    cfg = _load_config(args)
    try:
        net, extra = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise CliError("checkpoint", f"no such file: {args.checkpoint}")
    except ValueError as e:
        raise CliError("checkpoint", str(e))
    ds = ex.prepare_dataset(cfg)
    real, bundle = ex.prepare_channel(cfg)
    if net.fingerprint and bundle.fingerprint != net.fingerprint:
        raise CliError("channel", "config's channel does not match the checkpoint")
    snr = None if args.snr is None or args.snr == "inf" else float(args.snr)
    m, _ = ex.evaluate_baseline(net, real, bundle, ds.test_images,
                                ds.test_labels, args.baseline, snr_db=snr,
                                noise_seed=cfg.seed, index_seed=cfg.seed)
    for k in ("mse", "psnr", "ssim", "accuracy"):
        print(f"{k}={m[k]:.10g}")
    return 0


def cmd_sweep(args):
    cfg = _load_config(args)
    if args.kind == "snr":
        ex.run_snr_sweep(cfg, args.out)
    elif args.kind == "codebook":
        sizes = [int(s) for s in args.sizes.split(",")]
        ex.run_codebook_sweep(cfg, sizes, args.out)
    elif args.kind == "ablation":
        seeds = [int(s) for s in args.seeds.split(",")]
        ex.run_ablation(cfg, args.out, snr_db=args.snr_db, noise_seeds=seeds)
    print(f"sweep '{args.kind}' written to {args.out}")
    return 0


def cmd_channels_gen(args):
    geo = ch.SystemGeometry.build(ris_per_group=args.k, elements_x=args.mx,
                                  elements_y=args.my, seed=args.geometry_seed)
    real = ch.sample_channel(geo, ch.ChannelModelParams(), args.channel_seed)
    ch.channel_to_json(real, args.out)
    h = ch.channel_hash(geo, real.params, args.channel_seed)
    print(f"channel written to {args.out} (hash {h[:16]})")
    return 0


def cmd_codebook_inspect(args):
    try:
        real = ch.channel_from_json(args.channel)
    except FileNotFoundError:
        raise CliError("io", f"no such file: {args.channel}")
    except ValueError as e:
        raise CliError("channel", str(e))
    try:
        raw = ch.enumerate_codebook(real.panels[args.group][args.index],
                                    real.params)
        fws = ch.track_and_rotate(raw, args.group, args.index)
        if args.restrict:
            fws = fws.restrict(args.restrict)
    except (IndexError, ValueError, ch.DegenerateChannelError) as e:
        raise CliError("channel", str(e))
    ent = fws.entries
    print(f"group {args.group} surface {args.index}: {ent.shape[0]} entries")
    print(f"baseline entry: {ent[0].real:+.6f}{ent[0].imag:+.6f}j")
    mods = np.abs(ent)
    print(f"modulus range: [{mods.min():.6f}, {mods.max():.6f}]")
    print(f"precoder: {fws.precoder.real:+.6g}{fws.precoder.imag:+.6g}j")
    for i in range(min(4, ent.shape[0])):
        print(f"  [{i}] {ent[i].real:+.6f}{ent[i].imag:+.6f}j")
    return 0


def cmd_dataset_synth(args):
    ds = D.make_synthetic(n_train=args.n_train, n_val=args.n_val,
                          n_test=args.n_test, size=args.size, seed=args.seed or 0)
    np.savez(args.out,
             train_images=ds.train_images, train_labels=ds.train_labels,
             val_images=ds.val_images, val_labels=ds.val_labels,
             test_images=ds.test_images, test_labels=ds.test_labels)
    print(f"dataset written to {args.out} ({ds.summary()})")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="airode",
        description="complex-valued dual-task transceiver with an "
                    "over-the-air ODE block",
    )
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train and evaluate one experiment")
    _add_common(t)
    t.add_argument("--stage1-epochs", type=int, dest="stage1_epochs")
    t.add_argument("--stage2-epochs", type=int, dest="stage2_epochs")
    t.add_argument("--learning-rate", type=float, dest="learning_rate")
    t.add_argument("--codebook-size", type=int, dest="codebook_size")
    t.add_argument("--n-train", type=int, dest="n_train")
    t.add_argument("--n-val", type=int, dest="n_val")
    t.add_argument("--n-test", type=int, dest="n_test")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--config", help="experiment config JSON")
    e.add_argument("--seed", type=int)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--baseline", default="digital",
                   choices=list(ex.BASELINES))
    e.add_argument("--snr", help="SNR in dB, or 'inf' for noiseless")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sweep", help="run a sweep")
    _add_common(s)
    s.add_argument("--kind", required=True, choices=["snr", "codebook", "ablation"])
    s.add_argument("--sizes", default="512,256,64",
                   help="codebook sizes (comma separated)")
    s.add_argument("--seeds", default="0,1,2",
                   help="noise seeds for the ablation")
    s.add_argument("--snr-db", type=float, default=20.0, dest="snr_db")
    s.add_argument("--stage1-epochs", type=int, dest="stage1_epochs")
    s.add_argument("--stage2-epochs", type=int, dest="stage2_epochs")
    s.set_defaults(fn=cmd_sweep)

    g = sub.add_parser("channels-gen", help="draw a channel realization")
    g.add_argument("--geometry-seed", type=int, default=0)
    g.add_argument("--channel-seed", type=int, default=1)
    g.add_argument("--k", type=int, default=3, help="surfaces per group")
    g.add_argument("--mx", type=int, default=3)
    g.add_argument("--my", type=int, default=3)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_channels_gen)

    i = sub.add_parser("codebook-inspect", help="summarize one surface's codebook")
    i.add_argument("--channel", required=True, help="channel JSON file")
    i.add_argument("--group", type=int, default=0)
    i.add_argument("--index", type=int, default=0)
    i.add_argument("--restrict", type=int)
    i.set_defaults(fn=cmd_codebook_inspect)

    d = sub.add_parser("dataset-synth", help="generate the synthetic dataset")
    d.add_argument("--out", required=True, help="output .npz path")
    d.add_argument("--n-train", type=int, default=2000, dest="n_train")
    d.add_argument("--n-val", type=int, default=500, dest="n_val")
    d.add_argument("--n-test", type=int, default=500, dest="n_test")
    d.add_argument("--size", type=int, default=14)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(fn=cmd_dataset_synth)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (ch.DegenerateChannelError, an.CodebookMismatchError) as e:
        print(f"error: channel: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: runtime: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
