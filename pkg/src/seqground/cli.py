"""Command-line entry point: gen-data, align, train, eval, analyze, viz-attn.

Exit codes: 0 on success, 1 for invalid input (bad flags, configs, manifests
or missing files), 2 for failures while running.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .types import ConfigError, FormatError, LossWeights, ModelConfig, SeqGroundError, ValidationError

log = logging.getLogger("seqground")

CONFIG_VERSION = 1
SNAPSHOT = "resolved_config.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _clean(obj):
    """JSON-safe copy: NaN and infinities become None, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(doc), indent=1, sort_keys=True))
    return path


def load_config(path, allowed):
    """Reads a JSON config with a ``version`` field; rejects keys outside ``allowed``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if "version" not in doc:
        raise ConfigError(f"{path}: missing 'version' field", field="version")
    if doc["version"] != CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version {doc['version']!r}", field="version")
    unknown = sorted(set(doc) - set(allowed) - {"version"})
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}", field=unknown[0])
    return doc


def _snapshot(out_dir, command, args, resolved):
    flags = {k: v for k, v in vars(args).items() if not callable(v)}
    doc = {"command": command, "seqground_version": __version__, "args": flags, "config": resolved}
    return _write_json(Path(out_dir) / SNAPSHOT, doc)


def _load_samples(path):
    from .io import load_samples

    return load_samples(path)


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    from .io import write_dataset
    from .synthetic import SynthConfig, generate_dataset

    doc = load_config(args.config, {"synth", "val_samples", "val_seed"})
    synth = SynthConfig.from_dict(doc.get("synth", {}))
    if args.seed is not None:
        synth.seed = args.seed
    val_n = int(doc.get("val_samples", 0))
    val_seed = int(doc.get("val_seed", synth.seed + 1_000_000))
    out = Path(args.out)
    write_dataset(generate_dataset(synth), out)
    resolved = {"synth": synth.to_dict(), "val_samples": val_n, "val_seed": val_seed}
    if val_n > 0:
        val_cfg = SynthConfig.from_dict(dict(synth.to_dict(), num_samples=val_n, seed=val_seed, id_prefix=f"{synth.id_prefix}_val"))
        write_dataset(generate_dataset(val_cfg), out, manifest_name="val_manifest.json")
    _snapshot(out, "gen-data", args, resolved)
    log.info("wrote %d samples to %s", synth.num_samples, out)
    return 0


ALIGN_KEYS = {"dim", "sprf_dim", "hidden_dim", "epochs", "learning_rate", "temperature", "seed"}


def cmd_align(args):
    from .alignment import ProjectionPair, contrastive_pretrain, positive_negative_similarity
    from .trainer import save_projection, set_threads

    doc = load_config(args.config, ALIGN_KEYS) if args.config else {"version": CONFIG_VERSION}
    opts = {"dim": 256, "sprf_dim": 0, "hidden_dim": None, "epochs": 5, "learning_rate": 1e-3, "temperature": 0.07, "seed": 0}
    opts.update({k: v for k, v in doc.items() if k != "version"})
    if args.seed is not None:
        opts["seed"] = args.seed
    set_threads()
    samples = _load_samples(args.manifest)
    if not samples:
        raise ValidationError("manifest has no samples", field="manifest")
    torch.manual_seed(opts["seed"])
    proj = ProjectionPair(
        samples[0].video.clips.shape[1], samples[0].diagrams.diagrams.shape[1], opts["dim"], opts["sprf_dim"], opts["hidden_dim"]
    )
    history = []
    contrastive_pretrain(
        samples, proj, temperature=opts["temperature"], epochs=opts["epochs"], lr=opts["learning_rate"], seed=opts["seed"], history=history
    )
    out = Path(args.out)
    save_projection(proj, out / "projection")
    pos, neg = positive_negative_similarity(proj, samples[: min(len(samples), 20)], seed=opts["seed"])
    _write_json(out / "align_log.json", {"epoch_loss": history, "positive_similarity": pos, "negative_similarity": neg})
    _snapshot(out, "align", args, opts)
    return 0


TRAIN_KEYS = {"model", "train", "loss", "sampler"}


def resolve_train_config(doc):
    from .trainer import SamplerConfig, TrainConfig

    return (
        ModelConfig.from_dict(doc.get("model", {})),
        TrainConfig.from_dict(doc.get("train", {})),
        LossWeights.from_dict(doc.get("loss", {})),
        SamplerConfig.from_dict(doc.get("sampler", {})),
    )


def cmd_train(args):
    from .trainer import load_projection, save_model, train

    doc = load_config(args.config, TRAIN_KEYS) if args.config else {"version": CONFIG_VERSION}
    model_cfg, train_cfg, weights, sampler = resolve_train_config(doc)
    if args.seed is not None:
        train_cfg.seed = args.seed
    train_samples = _load_samples(args.manifest)
    val_samples = _load_samples(args.val_manifest) if args.val_manifest else None
    if val_samples is not None and Path(args.val_manifest).resolve() == Path(args.manifest).resolve():
        raise ValidationError("validation manifest must differ from the training manifest", field="val_manifest")
    projection = load_projection(args.projection) if args.projection else None
    out = Path(args.out)
    resolved = {
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "loss": weights.to_dict(),
        "sampler": sampler.to_dict(),
    }
    _snapshot(out, "train", args, resolved)
    res = train(train_samples, model_cfg, train_cfg, weights, val_samples, sampler, out_dir=out, projection=projection)
    if not val_samples:
        save_model(res.model, out / "checkpoints" / "best", {"epoch": res.best_epoch})
    _write_json(out / "summary.json", {"best_epoch": res.best_epoch, "best_val_miou": res.best_val_miou})
    return 0


def _report_doc(model, samples, seed):
    from .metrics import baseline_full_duration, baseline_random
    from .trainer import evaluate_model

    report = evaluate_model(model, samples).to_dict()
    report["baselines"] = {
        "random": {k: v for k, v in baseline_random(samples, seed).to_dict().items() if k != "per_sample"},
        "full_duration": {k: v for k, v in baseline_full_duration(samples).to_dict().items() if k != "per_sample"},
    }
    return report


def cmd_eval(args):
    from .trainer import load_model, set_threads

    set_threads()
    model = load_model(args.checkpoint)
    samples = _load_samples(args.manifest)
    report = _report_doc(model, samples, args.seed or 0)
    path = _write_json(args.report, report)
    _snapshot(path.parent, "eval", args, {"model": model.cfg.to_dict()})
    log.info("mIoU %.4f  R@1 %s", report["miou"], report["r_at_1"])
    return 0


def cmd_analyze(args):
    from .metrics import export_bias_data, gt_spans
    from .trainer import load_model, predict, set_threads

    set_threads()
    samples = _load_samples(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"num_samples": len(samples)}
    doc["gt_bias_rows"] = export_bias_data(gt_spans(samples), out / "bias_gt.csv")
    if args.checkpoint:
        model = load_model(args.checkpoint)
        preds = predict(model, samples)
        report = _report_doc(model, samples, args.seed or 0)
        doc.update(
            kendall_tau=report["kendall_tau"],
            mean_overlap=report["mean_overlap"],
            miou=report["miou"],
            per_sample=[{k: r[k] for k in ("id", "kendall_tau", "overlap")} for r in report["per_sample"]],
        )
        top1 = [row for p in preds for row in p.top1()]
        doc["pred_bias_rows"] = export_bias_data(top1, out / "bias_pred.csv")
    _write_json(out / "analysis.json", doc)
    _snapshot(out, "analyze", args, {})
    return 0


def export_attention(model, sample, out_dir):
    """Writes ``<id>.attn.json`` plus cross (T,H,MK,N) and self (T,H,MK,MK) array files."""
    from .io import write_array_file
    from .trainer import collate, forward_batch, prepare

    item = prepare(sample, model.cfg.normalize_video_length)
    model.eval()
    with torch.no_grad():
        out = forward_batch(model, collate([item]), return_attention=True)
    cross = torch.stack([w[0] for w in out.cross_attention]).numpy().astype(np.float32)
    self_ = torch.stack([w[0] for w in out.self_attention]).numpy().astype(np.float32)
    out_dir = Path(out_dir)
    safe = sample.id.replace("/", "_")
    write_array_file(out_dir / f"{safe}.cross.sqga", cross)
    write_array_file(out_dir / f"{safe}.self.sqga", self_)
    k = model.cfg.num_queries
    index = {
        "sample_id": sample.id,
        "num_layers": cross.shape[0],
        "num_heads": cross.shape[1],
        "num_diagrams": sample.num_diagrams,
        "num_queries": k,
        "num_clips": cross.shape[3],
        "rows": [{"row": r, "diagram": r // k, "query": r % k} for r in range(sample.num_diagrams * k)],
        "cross_attention": {"file": f"{safe}.cross.sqga", "shape": list(cross.shape), "axes": ["layer", "head", "row", "clip"]},
        "self_attention": {"file": f"{safe}.self.sqga", "shape": list(self_.shape), "axes": ["layer", "head", "row", "row"]},
        "final_spans": out.final.spans[0].tolist(),
        "final_scores": out.final.scores[0].tolist(),
    }
    return _write_json(out_dir / f"{safe}.attn.json", index)


def cmd_viz_attn(args):
    from .trainer import load_model

    model = load_model(args.checkpoint)
    samples = {s.id: s for s in _load_samples(args.manifest)}
    if args.sample not in samples:
        raise ValidationError(f"sample {args.sample!r} not in {args.manifest}", field="sample", sample_id=args.sample)
    export_attention(model, samples[args.sample], args.out)
    _snapshot(args.out, "viz-attn", args, {"model": model.cfg.to_dict()})
    return 0


# ---------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="seqground", description="Sequential grounding of step diagrams in videos.")
    p.add_argument("--version", action="version", version=f"seqground {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=None)
        return sp

    sp = add("gen-data", cmd_gen_data, "generate a synthetic dataset")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)

    sp = add("align", cmd_align, "contrastively pretrain the feature projections")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train a grounding model")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--val-manifest")
    sp.add_argument("--config")
    sp.add_argument("--projection", help="directory written by `align`")
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "evaluate a checkpoint")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--report", required=True)

    sp = add("analyze", cmd_analyze, "order, overlap and length-bias statistics")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--out", required=True)

    sp = add("viz-attn", cmd_viz_attn, "export attention maps for one sample")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--sample", required=True)
    sp.add_argument("--out", required=True)
    return p


def run(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SeqGroundError, RuntimeError, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
