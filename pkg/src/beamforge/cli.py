"""Command line for beamforge: simulate, train, enhance, evaluate and info.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, DataError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

logger = logging.getLogger("beamforge")


def _snr_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad SNR list {text!r}") from exc


def _overrides(args) -> dict:
    o: dict = {}
    if getattr(args, "seed", None) is not None:
        o["dataset"] = {"seed": args.seed}
        o["model"] = {"seed": args.seed}
    if getattr(args, "snr_list", None) is not None:
        o.setdefault("eval", {})["snr_list"] = args.snr_list
    if getattr(args, "method", None):
        o.setdefault("eval", {})["methods"] = list(args.method)
    return o


def _config(args) -> dict:
    from .config import load_config
    return load_config(args.config, _overrides(args))


def _corpora(ds: dict):
    from .sources import Corpus
    speech = Corpus(ds["speech_corpus"]) if ds["speech_corpus"] else None
    noise = Corpus(ds["noise_corpus"]) if ds["noise_corpus"] else None
    return speech, noise


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def cmd_simulate(args) -> int:
    from .config import dump_config
    from .dataset import simulate_dataset
    cfg = _config(args)
    ds = cfg["dataset"]
    out = _out_dir(args.out)
    speech, noise = _corpora(ds)
    counts = {k: v for k, v in ds["counts"].items() if v > 0}
    if not counts:
        raise ConfigError("dataset.counts requests no scenes")
    manifest = simulate_dataset(
        out, seed=ds["seed"], dataset=ds["type"], counts=counts, length=ds["length"],
        snr_list=cfg["eval"]["snr_list"], moving=ds["moving"],
        speech_corpus=speech, noise_corpus=noise, num_mics=ds["num_mics"],
        max_order=ds["max_order"], workers=args.workers, wav_format=ds["wav_format"])
    dump_config(cfg, out / "config.json")
    print(f"wrote {sum(counts.values())} scenes; manifest {manifest}")
    return EXIT_OK


def _train_config(cfg: dict):
    from .nn.train import TrainConfig
    t = dict(cfg["train"])
    return TrainConfig(seed=cfg["dataset"]["seed"], dataset=cfg["dataset"]["type"],
                       max_order=cfg["dataset"]["max_order"], **t)


def cmd_train(args) -> int:
    from .config import dump_config
    from .dsp import StftConfig
    from .nn.model import build_model
    from .nn.train import train
    cfg = _config(args)
    out = _out_dir(args.out)
    tcfg = _train_config(cfg)
    m = cfg["model"]
    model = build_model(m["kind"], cfg["dataset"]["num_mics"], m["width_scale"], seed=m["seed"],
                        stft_config=StftConfig(**cfg["stft"]))
    speech, noise = _corpora(cfg["dataset"])
    dump_config(cfg, out / "config.json")
    result = train(model, tcfg, out, speech_corpus=speech, noise_corpus=noise,
                   workers=args.workers, resume=args.resume, extra={"config": cfg})
    print(f"trained to step {result.last_step}; best val loss {result.best_val:.6g} at step {result.best_step}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    from .dsp import MultichannelWave
    from .pipeline import enhance_wave
    from .wavio import read_wav, write_wav
    method = args.method[0] if args.method else "noisy"
    if len(args.method or []) > 1:
        raise ConfigError("enhance takes exactly one --method")
    if method.endswith(".ckpt") and not method.startswith("model:"):
        method = "model:" + method
    mixture = read_wav(args.input)
    reference = read_wav(args.reference).samples[0] if args.reference else None
    out = enhance_wave(method, mixture, reference, args.mask)
    write_wav(args.output, MultichannelWave(out.samples, out.sample_rate), "float32")
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .config import dump_config
    from .dataset import load_eval_items
    from .metrics import evaluate_batch
    from .pipeline import make_method
    cfg = _config(args)
    out = _out_dir(args.out)
    ev = cfg["eval"]
    items = load_eval_items(args.manifest)
    split_items = [it for it in items if it.record.get("split") == ev["split"]]
    items = split_items or items
    if ev["snr_list"]:
        wanted = [float(s) for s in ev["snr_list"]]
        items = [it for it in items if any(abs(float(it.record["snr_db"]) - s) < 1e-9 for s in wanted)]
    if not items:
        raise DataError("no scenes in the manifest match the requested split/SNRs")
    methods = [(name, make_method(name, args.mask)) for name in ev["methods"]]
    report = evaluate_batch(items, methods, workers=args.workers)
    report.write_csv(out / "rows.csv", out / "summary.csv")
    dump_config(cfg, out / "config.json")
    for row in report.summary():
        print(f"{row['method']:>20s} {row['condition']:>18s} n={row['count']:<4d} "
              f"failed={row['failed']:<3d} SI-SNR {row['si_snr']:7.2f} dB  STOI {row['stoi']:.3f}")
    return EXIT_OK


def cmd_info(args) -> int:
    from .nn.checkpoint import read_metadata
    from .nn.model import ModelKind, model_blocks
    if args.checkpoint:
        meta = read_metadata(args.checkpoint)
        meta.get("extra", {}).pop("config", None)
        print(json.dumps(meta, indent=2, sort_keys=True))
        return EXIT_OK
    for kind in ModelKind:
        blocks = model_blocks(kind, args.mics, args.width_scale)
        total = sum(b.num_params() for b in blocks.values())
        bn = sum(sum(int(s[0]) for n, s in b.param_shapes(p).items() if ".bn." in n)
                 for p, b in blocks.items())
        print(f"{kind.value:>15s}: {total:,d} parameters ({bn:,d} batch-norm affine)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="beamforge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, workers=True):
        sp.add_argument("--config", help="JSON run configuration")
        if seed:
            sp.add_argument("--seed", type=int)
        if workers:
            sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("simulate", help="synthesize a scene dataset")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--snr-list", type=_snr_list)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="train a filter-estimation network")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("enhance", help="enhance one multichannel WAV")
    sp.add_argument("--method", action="append",
                    help="noisy | passthrough:chK | ibm | mvdr | gev | model:<ckpt>")
    sp.add_argument("--mask", help="mask file driving ibm/mvdr/gev")
    sp.add_argument("--reference", help="clean reference WAV for oracle masks")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.set_defaults(func=cmd_enhance)

    sp = sub.add_parser("evaluate", help="score methods on a simulated dataset")
    common(sp, seed=False)
    sp.add_argument("manifest", help="manifest.jsonl or its dataset directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--method", action="append")
    sp.add_argument("--mask")
    sp.add_argument("--snr-list", type=_snr_list)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("info", help="checkpoint metadata or parameter counts")
    sp.add_argument("checkpoint", nargs="?")
    sp.add_argument("--mics", type=int, default=6)
    sp.add_argument("--width-scale", type=float, default=1.0)
    sp.set_defaults(func=cmd_info)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
