"""Command-line entry point: ``bfmd <command> [--config PATH] [--seed INT] [--out DIR]``.

Exit codes: 0 ok, 1 domain failure, 2 usage or I/O error.  Every command
stages its files in a private directory under ``--out`` and moves them into
place only on success, so a failed run leaves no partial outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from bfmd.annotations import (
    caption_stats,
    dataset_stats,
    has_errors,
    load_match,
    serialize_match,
    validate_match,
)
from bfmd.errors import BFMDError, SchemaViolation

log = logging.getLogger("bfmd")

PRESETS = ("desk", "full", "tiny")


class UsageError(Exception):
    """Bad flags, configs or paths: exit code 2."""


# -- configuration ------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def read_config(path: Path, _seen: tuple[Path, ...] = ()) -> dict:
    """Load a JSON config, resolving its ``include`` chain (later files win)."""
    path = path.resolve()
    if path in _seen:
        raise UsageError(f"config include cycle at {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must be a JSON object")
    includes = doc.pop("include", [])
    if isinstance(includes, str):
        includes = [includes]
    merged: dict = {}
    for inc in includes:
        merged = _merge(merged, read_config(path.parent / inc, _seen + (path,)))
    merged = _merge(merged, doc)
    # relative paths are anchored at the file that declares them
    if "paths" in doc:
        merged["paths"] = {
            **merged.get("paths", {}),
            **{k: str((path.parent / v).resolve()) for k, v in doc["paths"].items() if v is not None},
        }
    return merged


@dataclass
class RunConfig:
    paths: dict = field(default_factory=dict)  # annotations, modalities, clips, out
    model: dict = field(default_factory=dict)  # {"preset": "desk", ...ModelConfig overrides}
    training: dict = field(default_factory=lambda: {"epochs": 30, "batch": 16, "lr": 1e-4, "seed": None})
    split: tuple[float, float, float] = (0.7, 0.2, 0.1)
    tactics: dict = field(default_factory=dict)  # file, bin_width, sigma
    metrics: dict = field(default_factory=dict)  # batch

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"paths", "model", "training", "split", "tactics", "metrics"}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        rc = cls()
        rc.paths = dict(d.get("paths", {}))
        rc.model = dict(d.get("model", {}))
        rc.training = {**rc.training, **d.get("training", {})}
        rc.split = tuple(d.get("split", rc.split))
        rc.tactics = dict(d.get("tactics", {}))
        rc.metrics = dict(d.get("metrics", {}))
        return rc

    @property
    def seed(self) -> int | None:
        return self.training.get("seed")

    def path(self, key: str, must_exist: bool = True) -> Path:
        value = self.paths.get(key)
        if value is None:
            raise UsageError(f"config has no paths.{key}")
        p = Path(value)
        if must_exist and not p.exists():
            raise UsageError(f"paths.{key} does not exist: {p}")
        return p

    def model_config(self, vocab_size: int):
        from bfmd.model.config import desk_config, tiny_config, ModelConfig

        opts = dict(self.model)
        preset = opts.pop("preset", "desk")
        if preset not in PRESETS:
            raise UsageError(f"model.preset must be one of {PRESETS}")
        try:
            if preset == "desk":
                return desk_config(vocab_size, **opts)
            if preset == "tiny":
                return tiny_config(vocab_size, **opts)
            return ModelConfig(vocab_size=vocab_size, **opts)
        except TypeError as exc:
            raise UsageError(f"bad model override: {exc}") from exc


def load_run_config(args) -> RunConfig:
    raw = read_config(Path(args.config)) if args.config else {}
    rc = RunConfig.from_dict(raw)
    if args.seed is not None:
        rc.training["seed"] = args.seed
    if args.out is not None:
        rc.paths["out"] = str(Path(args.out).resolve())
    return rc


# -- helpers ------------------------------------------------------------


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def annotation_files(paths: list[str]) -> list[Path]:
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob("*.json")))
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"no such file or directory: {p}")
    if not files:
        raise UsageError("no annotation files found")
    return files


def load_matches(files: list[Path]):
    out = []
    for f in files:
        try:
            out.append(load_match(f))
        except OSError as exc:
            raise UsageError(f"cannot read {f}: {exc.strerror}") from exc
    return out


class Staging:
    """Write outputs into a scratch directory; publish them on success."""

    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))

    def publish(self) -> None:
        for item in sorted(self.dir.iterdir()):
            target = self.out / item.name
            if target.is_dir() and item.is_dir():
                shutil.rmtree(target)
            elif target.exists():
                target.unlink()
            item.replace(target)
        self.dir.rmdir()

    def discard(self) -> None:
        shutil.rmtree(self.dir, ignore_errors=True)


def out_dir(rc: RunConfig) -> Path:
    if "out" not in rc.paths:
        raise UsageError("an output directory is required (--out or paths.out)")
    return Path(rc.paths["out"])


def require_seed(rc: RunConfig) -> int:
    if rc.seed is None:
        raise UsageError("a seed is required (--seed or training.seed)")
    return int(rc.seed)


def corpus_from_config(rc: RunConfig):
    """Matches, vocabulary and singles shot samples described by the config paths."""
    from bfmd.pipeline.samples import samples_from_dirs
    from bfmd.pipeline.vocab import Vocabulary

    matches = load_matches(annotation_files([str(rc.path("annotations"))]))
    vocab = Vocabulary.build(h.shot.caption for m in matches for r in m.rallies for h in r.hits)
    try:
        samples = samples_from_dirs(matches, rc.path("modalities"), rc.path("clips"), vocab)
    except OSError as exc:
        raise UsageError(f"cannot read modality or clip file: {exc}") from exc
    if not samples:
        raise BFMDError("no singles shot samples in the corpus")
    return matches, vocab, samples


def _checkpoint_path(args, rc: RunConfig) -> Path:
    p = Path(args.checkpoint) if args.checkpoint else out_dir(rc) / "checkpoints" / "best.ckpt"
    if not p.exists():
        raise UsageError(f"checkpoint not found: {p}")
    return p


# -- commands -----------------------------------------------------------


def cmd_validate(args, rc: RunConfig, stage: Staging | None) -> int:
    files = annotation_files(args.paths)
    report, failed = [], False
    for f in files:
        try:
            m = load_match(f)
        except OSError as exc:
            raise UsageError(f"cannot read {f}: {exc.strerror}") from exc
        except BFMDError as exc:
            path = exc.path if isinstance(exc, SchemaViolation) else ""
            viol = [{"severity": "error", "rule_id": "schema", "path": path, "message": str(exc)}]
            report.append({"file": f.name, "violations": viol})
            failed = True
            continue
        vs = validate_match(m)
        failed |= has_errors(vs)
        report.append({"file": f.name, "match_id": m.match_id, "violations": [v.to_dict() for v in vs]})
    doc = {"ok": not failed, "files": report}
    if stage is not None:
        dump_json(doc, stage.dir / "validation.json")
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 1 if failed else 0


def cmd_stats(args, rc: RunConfig, stage: Staging | None) -> int:
    matches = load_matches(annotation_files(args.paths))
    report = dataset_stats(matches)
    caps = caption_stats(matches)
    print(report.to_table())
    if stage is not None:
        dump_json({"table": report.to_dict(), "captions": caps.to_dict()}, stage.dir / "stats.json")
    return 0


def cmd_tactics(args, rc: RunConfig, stage: Staging | None) -> int:
    from bfmd.tactics import DEFAULT_BIN_WIDTH, DEFAULT_SIGMA, load_tactics, match_curves, plot_curves, write_curves_csv

    if stage is None:
        raise UsageError("tactics needs an output directory (--out)")
    matches = load_matches(annotation_files(args.paths))
    file = args.tactics or rc.tactics.get("file")
    mapping, patterns = load_tactics(file)
    bin_width = args.bin_width or rc.tactics.get("bin_width", DEFAULT_BIN_WIDTH)
    sigma = args.sigma or rc.tactics.get("sigma", DEFAULT_SIGMA)
    for m in matches:
        curves = match_curves(m, mapping, patterns, bin_width, sigma)
        write_curves_csv(curves, stage.dir / f"{m.match_id}_tactics.csv")
        plot_curves(curves, stage.dir / f"{m.match_id}_tactics.svg", title=m.match_id)
        print(f"{m.match_id}: " + ", ".join(f"{c.pattern_id}={c.mass():.0f}" for c in curves))
    return 0


def cmd_synth(args, rc: RunConfig, stage: Staging | None) -> int:
    from bfmd.pipeline.clipio import write_clip
    from bfmd.pipeline.modality import save_sidecar
    from bfmd.pipeline.samples import clip_filename
    from bfmd.pipeline.synth import synth_generate

    if stage is None:
        raise UsageError("synth needs an output directory (--out)")
    seed = require_seed(rc)
    corpus = synth_generate(seed=seed, n=args.n)
    ann, mod, clips = (stage.dir / d for d in ("annotations", "modalities", "clips"))
    for d in (ann, mod, clips):
        d.mkdir()
    for m in corpus.matches:
        (ann / f"{m.match_id}.json").write_text(serialize_match(m, indent=1), encoding="utf-8")
    for rid, track in corpus.tracks.items():
        save_sidecar(track, mod / f"{rid}.json")
    for s in corpus.samples:
        write_clip(clips / clip_filename(s.rally_id, s.hit_frame), s.clip.load())
    config = {
        "paths": {"annotations": "annotations", "modalities": "modalities", "clips": "clips", "out": "."},
        "training": {"seed": seed},
    }
    dump_json(config, stage.dir / "run.json")
    print(f"wrote {len(corpus.samples)} samples in {len(corpus.matches)} matches")
    return 0


def _split(rc: RunConfig, samples):
    from bfmd.pipeline.split import split_dataset

    return split_dataset(samples, rc.split, seed=require_seed(rc))


def cmd_train(args, rc: RunConfig, stage: Staging | None) -> int:
    from bfmd.experiments import TrainSettings, fit, seed_everything
    from bfmd.model.captioner import ShotCaptioner
    from bfmd.model.checkpoint import save_checkpoint

    if stage is None:
        raise UsageError("train needs an output directory (--out)")
    seed = require_seed(rc)
    _, vocab, samples = corpus_from_config(rc)
    train, val, _ = _split(rc, samples)
    if not train:
        raise BFMDError("training split is empty")
    t = rc.training
    settings = TrainSettings(
        epochs=int(args.epochs or t["epochs"]), batch=int(t["batch"]), lr=float(t["lr"]), seed=seed,
        weight_decay=float(t.get("weight_decay", 0.0)),
    )
    seed_everything(seed)
    model = ShotCaptioner(rc.model_config(len(vocab)))
    ckdir = stage.dir / "checkpoints"
    ckdir.mkdir()
    res = fit(model, train, val, settings, log_path=stage.dir / "train_log.jsonl")
    if res.frozen_hash_before != res.frozen_hash_after:
        raise BFMDError("frozen backbone parameters changed during training")
    save_checkpoint(ckdir / "last.ckpt", model, vocab, res.trainer.optimizer)
    if res.best_state is not None:
        model.load_state_dict(res.best_state)
    save_checkpoint(ckdir / "best.ckpt", model, vocab, extra={"best_epoch": res.best_epoch})
    summary = {
        "best_epoch": res.best_epoch,
        "selection": "min validation L_total",
        "validation": res.val_history,
        "frozen_sha256": res.frozen_hash_after,
        "steps": len(res.history),
        "splits": {"train": len(train), "val": len(val)},
    }
    dump_json(summary, stage.dir / "train_summary.json")
    last = res.history[-1]
    print(f"trained {len(res.history)} steps; final L_total {last['L_total']:.4f}; best epoch {res.best_epoch}")
    return 0


def cmd_eval(args, rc: RunConfig, stage: Staging | None) -> int:
    from bfmd.experiments import evaluate_captions, seed_everything
    from bfmd.metrics.report import METRICS_VERSION
    from bfmd.model.checkpoint import load_checkpoint

    if stage is None:
        raise UsageError("eval needs an output directory (--out)")
    seed = require_seed(rc)
    seed_everything(seed)
    ckpt = _checkpoint_path(args, rc)
    model, vocab, _ = load_checkpoint(ckpt)
    _, corpus_vocab, samples = corpus_from_config(rc)
    if corpus_vocab != vocab:
        raise BFMDError("checkpoint vocabulary does not match the corpus")
    _, _, test = _split(rc, samples)
    if not test:
        raise BFMDError("test split is empty")
    ev = evaluate_captions(model, test, vocab, batch=int(rc.metrics.get("batch", 32)))
    doc = {
        "metrics": ev.report.to_dict(),
        "semantic_f1": ev.semantic_f1,
        "exact_match": ev.exact,
        "n": len(test),
        "metrics_version": METRICS_VERSION,
    }
    dump_json(doc, stage.dir / "metrics.json")
    with (stage.dir / "captions.jsonl").open("w", encoding="utf-8") as fh:
        for sid, cand, s in zip(ev.sample_ids, ev.candidates, test):
            fh.write(json.dumps({"sample_id": sid, "candidate": cand, "reference": s.caption}, sort_keys=True) + "\n")
    print(ev.report.to_text())
    return 0


def cmd_caption(args, rc: RunConfig, stage: Staging | None) -> int:
    from bfmd.experiments import evaluate_captions
    from bfmd.model.checkpoint import load_checkpoint

    model, vocab, _ = load_checkpoint(_checkpoint_path(args, rc))
    _, _, samples = corpus_from_config(rc)
    chosen = [s for s in samples if s.sample_id == args.sample] if args.sample else samples[:1]
    if not chosen:
        raise BFMDError(f"no sample with id {args.sample!r}")
    seqs = model.generate(_single_batch(chosen, model).inputs)
    text = vocab.detokenize(seqs[0])
    if stage is not None:
        dump_json({"sample_id": chosen[0].sample_id, "caption": text, "reference": chosen[0].caption}, stage.dir / "caption.json")
    print(text)
    return 0


def _single_batch(samples, model):
    from bfmd.model.train import collate

    model.eval()
    return collate(samples, model.cfg)


COMMANDS = {
    "validate": cmd_validate,
    "stats": cmd_stats,
    "tactics": cmd_tactics,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "caption": cmd_caption,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (may include other configs)")
    common.add_argument("--seed", type=int, help="random seed (required by synth, train, eval)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bfmd", description="Badminton shot captioning toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("validate", "stats", "tactics"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("paths", nargs="+", help="annotation files or directories")
        if name == "tactics":
            sp.add_argument("--tactics", help="tactic mapping/pattern JSON (default: bundled)")
            sp.add_argument("--bin-width", type=float, help="seconds per bin")
            sp.add_argument("--sigma", type=float, help="Gaussian kernel sigma in seconds")
    sp = sub.add_parser("synth", parents=[common])
    sp.add_argument("--n", type=int, default=320, help="number of shot samples")
    sp = sub.add_parser("train", parents=[common])
    sp.add_argument("--epochs", type=int, help="override training.epochs")
    for name in ("eval", "caption"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoints/best.ckpt)")
        if name == "caption":
            sp.add_argument("--sample", help="sample id RALLY@FRAME (default: first sample)")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    torch.set_num_threads(max(1, torch.get_num_threads()))
    stage = None
    try:
        rc = load_run_config(args)
        if args.out is not None or args.command in ("tactics", "synth", "train", "eval"):
            stage = Staging(out_dir(rc))
        code = COMMANDS[args.command](args, rc, stage)
    except UsageError as exc:
        code = _fail(2, str(exc))
    except BFMDError as exc:
        code = _fail(1, f"{type(exc).__name__}: {exc}")
    except OSError as exc:
        code = _fail(2, f"I/O error: {exc}")
    except Exception as exc:  # unexpected: still one line, full trace with -v
        log.debug("unexpected failure", exc_info=True)
        code = _fail(1, f"{type(exc).__name__}: {exc}")
    if stage is not None:
        if code == 0 or (args.command == "validate" and code == 1):
            stage.publish()
        else:
            stage.discard()
    return code


def _fail(code: int, message: str) -> int:
    print(f"bfmd: error: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
