"""Batch CLI for the evasion-attack experiment suite.

Subcommands mirror the experiment pipeline: describe, gen-data,
train-eavesdropper, train-amn, sweep-snr, sweep-gamma, psd, trace.
Exit codes: 0 ok, 2 configuration error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import amn as amn_mod
from . import eavesdropper as eav
from . import harness, phy
from .amn import AmnDiverged, AmnHyper, AmnModel, FrameSpec, LossWeights
from .fec import CODECS
from .harness import ConfigError


def _add_config_flags(p):
    p.add_argument("--config", help="INI config file (overridden by flags)")
    p.add_argument("--scheme", choices=phy.SCHEMES)
    p.add_argument("--codec", choices=sorted(CODECS))
    p.add_argument("--gamma", type=float)
    p.add_argument("--amn-mode", choices=["aae", "p_atn"], dest="amn_mode")
    p.add_argument("--amn-steps", type=int, dest="amn_steps")
    p.add_argument("--amn-batch", type=int, dest="amn_batch")
    p.add_argument("--amn-lr", type=float, dest="amn_lr")
    p.add_argument("--frames-per-point", type=int, dest="frames_per_point")
    p.add_argument("--snr-grid", dest="snr_grid", help="comma-separated dB values")
    p.add_argument("--seed-classifier", type=int, dest="seed_classifier")
    p.add_argument("--seed-amn", type=int, dest="seed_amn")
    p.add_argument("--seed-eval", type=int, dest="seed_eval")
    p.add_argument("--classifier-epochs", type=int, dest="classifier_epochs")
    p.add_argument("--count-per-class", type=int, dest="count_per_class")


def _config_from(args):
    overrides = {
        k: getattr(args, k, None)
        for k in (
            "scheme", "codec", "gamma", "amn_mode", "amn_steps", "amn_batch", "amn_lr",
            "frames_per_point", "seed_classifier", "seed_amn", "seed_eval",
            "classifier_epochs", "count_per_class",
        )
    }
    if getattr(args, "snr_grid", None):
        overrides["snr_grid"] = [float(v) for v in args.snr_grid.split(",")]
    return harness.make_config(args.config, **overrides)


def cmd_describe(args):
    cfg = _config_from(args)
    f = phy.make_rrc_filter(cfg.rolloff, cfg.filter_span, cfg.sps)
    print(f"RRC filter: rolloff={f.rolloff} span={f.span_symbols} symbols "
          f"sps={f.sps} taps={f.taps.size}")
    rc = np.convolve(f.taps, f.taps)[:: cfg.sps]
    isi = np.abs(np.delete(rc, rc.size // 2)).max()
    print(f"  worst symbol-instant ISI: {isi:.3e}")
    print(f"power convention: mean |sample|^2 = 1/sps (unit energy per symbol period)")
    for scheme in phy.SCHEMES:
        c = phy.CONSTELLATIONS[scheme]
        print(f"\n{scheme}: {c.bits_per_symbol} bits/symbol")
        for lab, pt in enumerate(c.points):
            bits = format(lab, f"0{c.bits_per_symbol}b")
            print(f"  {bits} -> {pt.real:+.4f}{pt.imag:+.4f}j")
    for name, spec in CODECS.items():
        print(f"\ncodec {name}: n={spec.n} k={spec.k} rate={spec.k / spec.n:.3f}")
    return 0


def cmd_gen_data(args):
    cfg = _config_from(args)
    rng = np.random.default_rng(cfg.seed_classifier)
    data = eav.generate_dataset(cfg.count_per_class, rng=rng, window=cfg.window, sps=cfg.sps)
    X = np.stack([w.iq for w in data])
    y = np.array([w.label for w in data])
    snr = np.array([w.es_n0_db for w in data])
    np.savez(args.out, iq=X, label=y, es_n0_db=snr, class_order=eav.CLASS_ORDER)
    print(f"wrote {len(data)} windows to {args.out}")
    return 0


def cmd_train_eavesdropper(args):
    cfg = _config_from(args)
    rng = np.random.default_rng(cfg.seed_classifier)
    if args.data:
        z = np.load(args.data)
        data = [eav.LabeledWindow(iq, int(lab), float(s))
                for iq, lab, s in zip(z["iq"], z["label"], z["es_n0_db"])]
    else:
        data = eav.generate_dataset(cfg.count_per_class, rng=rng, window=cfg.window, sps=cfg.sps)
    model = eav.train_classifier(
        data, epochs=cfg.classifier_epochs, batch_size=cfg.classifier_batch,
        lr=cfg.classifier_lr, rng=rng,
        log=lambda ep, l: print(f"epoch {ep}: loss {l:.4f}"),
    )
    model.save(args.out, manifest_path=args.out + ".json", seed=cfg.seed_classifier)
    print(f"saved classifier to {args.out}")
    return 0


def cmd_train_amn(args):
    cfg = _config_from(args)
    classifier = eav.ClassifierModel.load(args.classifier).freeze()
    spec = FrameSpec.build(cfg.scheme, cfg.codec, cfg.window, cfg.sps)
    w = LossWeights.from_gamma(cfg.gamma, cfg.alpha_frac, cfg.beta_frac)
    hyper = AmnHyper(steps=cfg.amn_steps, batch_size=cfg.amn_batch,
                     learning_rate=cfg.amn_lr, window=cfg.window)
    rows = []
    model = amn_mod.train_amn(
        spec, classifier, w, hyper, seed=cfg.seed_amn, mode=cfg.amn_mode,
        trace=lambda step, parts: rows.append((step, parts)),
    )
    model.save(args.out, manifest_path=args.out + ".json", frame_spec=spec, seed=cfg.seed_amn)
    if args.trace_out:
        with open(args.trace_out, "w") as f:
            f.write(harness.training_trace_csv(rows))
    print(f"saved AMN ({cfg.amn_mode}, gamma={cfg.gamma}) to {args.out}")
    return 0


def _load_amn(path):
    with open(path + ".json") as f:
        meta = json.load(f)
    return AmnModel.load(path, mode=meta["mode"]), meta


def cmd_sweep_snr(args):
    cfg = _config_from(args)
    classifier = eav.ClassifierModel.load(args.classifier).freeze()
    model, _ = _load_amn(args.amn)
    records = harness.sweep_snr(cfg, model, classifier)
    with open(args.out, "w") as f:
        f.write(harness.records_to_csv(records))
    print(f"wrote {len(records)} rows to {args.out}")
    return 0


def cmd_sweep_gamma(args):
    cfg = _config_from(args)
    classifier = eav.ClassifierModel.load(args.classifier).freeze()
    models = {}
    for pair in args.model:
        gamma, path = pair.split("=", 1)
        models[float(gamma)] = _load_amn(path)[0]
    records = harness.sweep_gamma(cfg, models, classifier, fixed_snr_db=args.snr)
    with open(args.out, "w") as f:
        f.write(harness.records_to_csv(records))
    print(f"wrote {len(records)} rows to {args.out}")
    return 0


def _reference_frames(cfg, count=32):
    spec = FrameSpec.build(cfg.scheme, cfg.codec, cfg.window, cfg.sps)
    rng = np.random.default_rng(cfg.seed_eval)
    _, frames = amn_mod.make_frames(spec, rng, count)
    return spec, frames


def cmd_psd(args):
    cfg = _config_from(args)
    spec, frames = _reference_frames(cfg)
    freqs, base = harness.psd(list(frames))
    cols = {"original_db": base}
    for pair in args.model or []:
        name, path = pair.split("=", 1)
        model, _ = _load_amn(path)
        from . import tensor as T

        out = model.forward(T.Tensor(frames), spec.sps).data
        cols[f"{name}_db"] = harness.psd(list(out))[1]
    with open(args.out, "w") as f:
        f.write("freq," + ",".join(cols) + "\n")
        for i, fr in enumerate(freqs):
            f.write(f"{fr:.10g}," + ",".join(f"{v[i]:.10g}" for v in cols.values()) + "\n")
    print(f"wrote PSD ({len(freqs)} bins) to {args.out}")
    return 0


def cmd_trace(args):
    from . import tensor as T

    cfg = _config_from(args)
    spec, frames = _reference_frames(cfg, count=1)
    aae, _ = _load_amn(args.aae)
    patn, _ = _load_amn(args.p_atn)
    x_aae = aae.forward(T.Tensor(frames), spec.sps).data[0]
    x_patn = patn.forward(T.Tensor(frames), spec.sps).data[0]
    with open(args.out, "w") as f:
        f.write(harness.export_time_trace(frames[0], x_aae, x_patn, channel_index=args.channel))
    print(f"wrote time trace to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="rfevade", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("describe", help="print constellation/filter/codec conventions")
    _add_config_flags(sp)
    sp.set_defaults(fn=cmd_describe)

    sp = sub.add_parser("gen-data", help="generate a labeled classifier dataset (.npz)")
    _add_config_flags(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train-eavesdropper", help="train the AMC classifier")
    _add_config_flags(sp)
    sp.add_argument("--data", help="dataset .npz from gen-data (else generated)")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.set_defaults(fn=cmd_train_eavesdropper)

    sp = sub.add_parser("train-amn", help="train an adversarial mutation network")
    _add_config_flags(sp)
    sp.add_argument("--classifier", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--trace-out", dest="trace_out", help="training-trace CSV path")
    sp.set_defaults(fn=cmd_train_amn)

    sp = sub.add_parser("sweep-snr", help="BER/accuracy vs SNR sweep CSV")
    _add_config_flags(sp)
    sp.add_argument("--classifier", required=True)
    sp.add_argument("--amn", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_sweep_snr)

    sp = sub.add_parser("sweep-gamma", help="BER/accuracy vs gamma sweep CSV")
    _add_config_flags(sp)
    sp.add_argument("--classifier", required=True)
    sp.add_argument("--model", action="append", required=True, metavar="GAMMA=PATH")
    sp.add_argument("--snr", type=float, default=12.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_sweep_gamma)

    sp = sub.add_parser("psd", help="Welch PSD CSV for original and perturbed signals")
    _add_config_flags(sp)
    sp.add_argument("--model", action="append", metavar="NAME=PATH")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_psd)

    sp = sub.add_parser("trace", help="time-domain CSV: original vs AAE vs P-ATN")
    _add_config_flags(sp)
    sp.add_argument("--aae", required=True)
    sp.add_argument("--p-atn", dest="p_atn", required=True)
    sp.add_argument("--channel", type=int, default=1, choices=[0, 1])
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_trace)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except AmnDiverged as e:
        print(f"divergence: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
