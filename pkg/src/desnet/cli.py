"""Command-line entry point: ``desnet <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

import argparse
import csv
import os
import sys

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _config(args):
    from desnet.config import ToolkitConfig, load_config
    return load_config(args.config) if getattr(args, "config", None) else ToolkitConfig()


def _corpus(cfg, rate):
    from desnet import datasim
    manifests = {}
    for key in ("speech_manifest", "noise_manifest", "rir_manifest"):
        path = cfg.get("datasim", key)
        manifests[key.split("_")[0]] = datasim.read_manifest(path) if path else ()
    return datasim.Corpus(rate, cfg.geometry(), manifests["speech"], manifests["noise"], manifests["rir"])


def _wav_out(path, samples, rate):
    from desnet.fileio import write_wav
    from desnet.stft import Waveform
    write_wav(path, Waveform(samples, rate))


# -- simulate ---------------------------------------------------------------------------

def cmd_simulate(args):
    from desnet import datasim
    from desnet.datasim import ChunkDraw, ManifestEntry
    from desnet.losses import TrackLabel

    cfg = _config(args)
    track = TrackLabel.parse(args.track)
    rate = cfg.get("stft", "sample_rate", 8000)
    corpus = _corpus(cfg, rate)
    seconds = args.seconds or cfg.get("datasim", "chunk_seconds", 1.0)
    rir_id = cfg.get("datasim", "rir_id", "plane")
    # level ranges from the last curriculum stage that contains this track
    stage = [st for st in datasim.TABLE_STAGES if track in st.tracks][-1]
    rng = np.random.default_rng(args.seed)
    specs, conds = [], []
    for _ in range(args.count):
        draw = datasim._draw_for(track, stage, rng)
        draw = ChunkDraw(track, args.snr if args.snr is not None and track.noisy else draw.snr_db,
                         args.sdr if args.sdr is not None and track.num_speakers == 2 else draw.sdr_db)
        specs.append(datasim.draw_spec(draw, corpus, rng, seconds, rir_id, iso_noise=not args.no_iso))
        level = draw.snr_db if track is TrackLabel.SE else draw.sdr_db
        conds.append("%s%g" % ("snr" if track is TrackLabel.SE else "sdr", round(level)))
    results = datasim.simulate_many(specs, corpus, args.workers)
    os.makedirs(args.out_dir, exist_ok=True)
    entries = []
    for i, (res, cond) in enumerate(zip(results, conds)):
        uid = "%s%04d" % (track.value, i)
        mix = uid + "_mix.wav"
        _wav_out(os.path.join(args.out_dir, mix), res.mixture.samples, rate)
        attrs = {"track": track.value, "condition": cond,
                 "doas": ",".join("%.2f" % d for d in res.spec.doas)}
        for k, v in res.measured.items():
            attrs[k] = "%.6f" % v
        for j in range(len(res.references)):
            for kind, data in (("ref", res.references), ("early", res.early)):
                name = "%s_%s%d.wav" % (uid, kind, j)
                _wav_out(os.path.join(args.out_dir, name), data[j], rate)
                attrs["%s%d" % (kind, j)] = name
        entries.append(ManifestEntry(uid, mix, len(res.mixture) / rate, attrs))
    datasim.write_manifest(os.path.join(args.out_dir, "manifest.txt"), entries)
    print("wrote %d %s mixtures to %s" % (len(entries), track.name, args.out_dir))
    return EXIT_OK


# -- wpe ------------------------------------------------------------------------------

def cmd_wpe(args):
    from desnet.fileio import read_wav, write_wav
    from desnet.losses import si_snr
    from desnet.stft import istft, stft
    from desnet.wpe import WpeConfig, iterative_wpe

    wave = read_wav(args.input)
    wcfg = WpeConfig(taps=args.taps, delay=args.delay, iterations=args.iters, diagonal_loading=args.loading,
                     psd_context=args.context)
    spec = stft(wave, args.fft_size, args.hop)
    out_spec, _ = iterative_wpe(spec, wcfg)
    out = istft(out_spec, len(wave))
    write_wav(args.output, out)
    if args.reference:
        ref = read_wav(args.reference).samples[0]
        n = min(ref.size, len(wave))
        before = si_snr(wave.samples[0, :n], ref[:n])
        after = si_snr(out.samples[0, :n], ref[:n])
        print("SI-SNR channel 0: input %.2f dB, output %.2f dB, improvement %.2f dB"
              % (before, after, after - before))
    return EXIT_OK


# -- features ---------------------------------------------------------------------------

def _parse_pairs(text):
    try:
        from desnet.config import _pairs
        pairs = _pairs(text)
    except ValueError:
        raise UsageError("bad --pairs %r, expected e.g. 0-1,0-2" % text) from None
    if not pairs:
        raise UsageError("--pairs is empty")
    return pairs


def cmd_features(args):
    from desnet import spatial
    from desnet.fileio import read_wav, write_dump
    from desnet.geometry import DoaGrid
    from desnet.stft import stft

    cfg = _config(args)
    wave = read_wav(args.input)
    geom = cfg.geometry()
    if wave.num_channels != geom.num_mics:
        raise ValueError("input has %d channels, geometry has %d mics" % (wave.num_channels, geom.num_mics))
    spec = stft(wave, args.fft_size, args.hop)
    if args.beams:
        bank = spatial.design_das_bank(geom, DoaGrid.uniform(args.num_beams), spec.num_bins, wave.sample_rate)
        data = spatial.beamform(spec.bins, bank)
    else:
        data = spatial.angle_features(spec.bins, geom, DoaGrid.uniform(args.num_angles),
                                      _parse_pairs(args.pairs), wave.sample_rate).features
    write_dump(args.output, data, args.hop, args.fft_size, wave.sample_rate)
    print("wrote %s features %s" % ("beam" if args.beams else "angle", "x".join(map(str, data.shape))))
    return EXIT_OK


# -- train / separate / evaluate / att-dump -------------------------------------------------

def cmd_train(args):
    from desnet.training import train

    cfg = _config(args)
    overrides = {"seed": args.seed, "workers": args.workers}
    if args.category:
        overrides["category"] = args.category
    if args.epochs:
        overrides["epochs"] = args.epochs
    tcfg = cfg.train_config(**overrides)
    if args.ablate:
        tcfg = tcfg.ablate(*[a.replace("-", "_") for a in args.ablate])
    corpus = _corpus(cfg, tcfg.model.sample_rate)
    res = train(tcfg, corpus, args.out_dir, resume=args.resume, max_steps=args.steps,
                log=None if args.quiet else print)
    if res.checkpoints:
        print("last checkpoint: %s" % res.checkpoints[-1])
    return EXIT_OK


def cmd_separate(args):
    from desnet.fileio import read_wav
    from desnet.training import load_model

    model, _ = load_model(args.checkpoint, _config(args).geometry())
    wave = read_wav(args.input)
    if wave.sample_rate != model.cfg.sample_rate:
        raise ValueError("input is %d Hz, model expects %d Hz" % (wave.sample_rate, model.cfg.sample_rate))
    est = model.separate(wave.samples)
    for c, sig in enumerate(est):
        path = "%s_%d.wav" % (args.out_prefix, c)
        _wav_out(path, sig, wave.sample_rate)
        print(path)
    return EXIT_OK


def load_eval_items(manifest_path):
    from desnet.datasim import read_manifest
    from desnet.fileio import read_wav
    from desnet.losses import TrackLabel
    from desnet.training import EvalItem

    items = []
    base = os.path.dirname(os.path.abspath(manifest_path))
    for e in read_manifest(manifest_path):
        if "track" not in e.attrs or "ref0" not in e.attrs:
            raise ValueError("%s: entry %s lacks track/ref0 attributes" % (manifest_path, e.id))
        refs = []
        j = 0
        while "ref%d" % j in e.attrs:
            p = e.attrs["ref%d" % j]
            refs.append(read_wav(p if os.path.isabs(p) else os.path.join(base, p)).samples[0])
            j += 1
        items.append(EvalItem(e.id, read_wav(e.path).samples, np.stack(refs), TrackLabel.parse(e.attrs["track"]),
                              e.attrs.get("condition", "")))
    return items


def cmd_evaluate(args):
    from desnet.training import evaluate, load_model

    items = load_eval_items(args.manifest)
    if args.checkpoint == "oracle":
        refs = iter([it.references for it in items])
        table = evaluate(lambda mix: next(refs), items)
    else:
        model, _ = load_model(args.checkpoint, _config(args).geometry())
        table = evaluate(model.separate, items)
    for uid, track, cond, si, mix in table.rows:
        print("%-12s %-4s %-8s %8.2f dB  (mixture %6.2f dB)" % (uid, track, cond, si, mix))
    print(table.text())
    if args.csv:
        table.write_csv(args.csv)
    return EXIT_OK


def cmd_att_dump(args):
    from desnet import attention
    from desnet.fileio import read_wav
    from desnet.geometry import DoaGrid
    from desnet.training import load_model

    model, _ = load_model(args.checkpoint, _config(args).geometry())
    wave = read_wav(args.input)
    model.eval()
    _, info = model.forward(wave.samples[None], return_details=True)
    cfg = model.cfg
    if args.beams:
        grid = DoaGrid.uniform(cfg.num_beams)
        if not cfg.beam_feature:
            raise ValueError("checkpoint was trained without the beam feature")
    else:
        grid = DoaGrid.uniform(cfg.num_angles)
    header = ["%.1f" % a for a in grid.azimuths]
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        if args.chunked:
            mask = info["mask_mag"][0].astype(np.float64)
            W_p = model.W_p.data.astype(np.float64)
            if args.beams:
                from desnet import spatial
                bins = model.analyse(wave.samples[None])[0][0]
                feats = np.abs(spatial.beamform(bins, model._bank))
                W_f = model.W_b.data.astype(np.float64)
            else:
                feats = info["angle_features"][0].astype(np.float64)
                W_f = model.W_a.data.astype(np.float64)
            cw = attention.chunked_weights(mask @ W_p, feats @ W_f, args.chunked)
            w.writerow(["chunk", "speaker"] + header)
            for k in range(cw.weights.shape[0]):
                for c in range(cw.weights.shape[1]):
                    w.writerow([k, c] + ["%.6f" % v for v in cw.weights[k, c]])
        else:
            weights = info["beam_weights" if args.beams else "angle_weights"][0]
            w.writerow(["speaker"] + header)
            for c, row in enumerate(weights):
                w.writerow([c] + ["%.6f" % v for v in row])
    print("wrote %s" % args.output)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _global_flags(p, seed, workers, config):
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--workers", type=int, default=workers, help="cap on parallel simulation workers")
    p.add_argument("--config", default=config, help="toolkit config file")


def build_parser():
    p = _Parser(prog="desnet", description="Multi-channel dereverberation, enhancement and separation.")
    _global_flags(p, 0, 1, None)
    # the same flags after the subcommand; SUPPRESS keeps them from clobbering earlier values
    common = _Parser(add_help=False)
    _global_flags(common, argparse.SUPPRESS, argparse.SUPPRESS, argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    add = sub.add_parser
    sub.add_parser = lambda name, **kw: add(name, parents=[common], **kw)

    s = sub.add_parser("simulate", help="render mixtures, references and a manifest")
    s.add_argument("out_dir")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--track", default="css", choices=["se", "css", "nss"])
    s.add_argument("--snr", type=float)
    s.add_argument("--sdr", type=float)
    s.add_argument("--seconds", type=float)
    s.add_argument("--no-iso", action="store_true", help="skip the isotropic noise floor")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("wpe", help="iterative WPE dereverberation of a WAV file")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--taps", type=int, default=10)
    s.add_argument("--delay", type=int, default=3)
    s.add_argument("--iters", type=int, default=3)
    s.add_argument("--fft-size", type=int, default=512)
    s.add_argument("--hop", type=int, default=256)
    s.add_argument("--loading", type=float, default=1e-5, help="diagonal loading relative to the trace")
    s.add_argument("--context", type=int, default=1, help="frames each side in the variance average")
    s.add_argument("--reference", help="clean reference WAV for an SI-SNR report")
    s.set_defaults(func=cmd_wpe)

    s = sub.add_parser("features", help="dump angle features or fixed beams")
    s.add_argument("input")
    s.add_argument("output")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--angles", action="store_true", help="angle features (default)")
    g.add_argument("--beams", action="store_true", help="fixed delay-and-sum beams")
    s.add_argument("--num-angles", type=int, default=36)
    s.add_argument("--num-beams", type=int, default=18)
    s.add_argument("--pairs", default="0-1,0-2,1-3", help="microphone pairs for angle features")
    s.add_argument("--fft-size", type=int, default=512)
    s.add_argument("--hop", type=int, default=256)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", help="train with the staged curriculum")
    s.add_argument("out_dir")
    s.add_argument("--category", choices=["non-dereverb", "dereverb"])
    s.add_argument("--ablate", nargs="*", default=[],
                   choices=["staged_snr", "symphonic", "beam_feature", "wpe",
                            "staged-snr", "beam-feature"])
    s.add_argument("--epochs", type=int)
    s.add_argument("--steps", type=int, help="stop after this many optimiser steps")
    s.add_argument("--resume", help="checkpoint prefix to continue from")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("separate", help="run a trained model on one WAV file")
    s.add_argument("checkpoint")
    s.add_argument("input")
    s.add_argument("out_prefix")
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("evaluate", help="SI-SNR table over a simulated test manifest")
    s.add_argument("checkpoint", help="checkpoint prefix, or 'oracle' to score the references themselves")
    s.add_argument("manifest")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("att-dump", help="attention weights (speakers x directions) as CSV")
    s.add_argument("checkpoint")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--chunked", type=int, metavar="FRAMES", help="per-chunk weights with this chunk length")
    s.add_argument("--beams", action="store_true", help="beam-attention weights instead of angles")
    s.set_defaults(func=cmd_att_dump)
    return p


def main(argv=None):
    from desnet.config import ConfigError
    from desnet.training import NumericalError
    from desnet.wpe import ConditioningError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("missing subcommand")
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print("desnet: error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print("desnet: config error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ConditioningError, FloatingPointError) as exc:
        print("desnet: numerical failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        print("desnet: data error: %s" % exc, file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
