"""Command line front-end: ``hyface {prepare,train,convert,eval,selftest}``.

Errors are printed to stderr as one JSON record
(``{"error", "module", "operation", "message"}``) with exit code 2.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from .config import RunConfig, dump_run_config, load_run_config
from .errors import HYFaceError

MANIFEST_NAME = "manifest.jsonl"


def _run_config(args) -> RunConfig:
    run = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        run = dataclasses.replace(run, seed=args.seed)
    content = getattr(args, "content", None)
    if content:
        run = dataclasses.replace(run, paths=dataclasses.replace(run.paths, content=content))
    return run


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _load_cache(cache_dir, run: RunConfig):
    from .content import make_provider
    from .dataset import precompute_features, read_manifest

    cache_dir = Path(cache_dir)
    manifest = read_manifest(cache_dir / MANIFEST_NAME)
    provider = make_provider(run.paths.content, run.model.content_dim, run.dsp)
    return precompute_features(manifest, run.dsp, provider, cache_dir=cache_dir)


def cmd_prepare(args):
    from .content import make_provider
    from .dataset import build_manifest, precompute_features, write_manifest

    run = _run_config(args)
    out = Path(args.out)
    manifest = build_manifest(args.corpus, layout=args.layout, frontal_only=args.frontal_only)
    write_manifest(out / MANIFEST_NAME, manifest)
    provider = make_provider(run.paths.content, run.model.content_dim, run.dsp)
    cache = precompute_features(manifest, run.dsp, provider, cache_dir=out)
    summary = {
        "run_hash": run.content_hash(),
        "n_utterances": len(cache.utterances),
        "speakers": {s: {"avg_f0": i.avg_f0.avg_f0, "n_voiced_frames": i.avg_f0.n_voiced_frames,
                         "gender": i.gender} for s, i in sorted(cache.speakers.items())},
        "cache_hits": cache.hits,
        "cache_misses": cache.misses,
    }
    _write_json(out / "prepare.json", summary)
    (out / "run_config.txt").write_text(dump_run_config(run))
    return summary


def cmd_train(args):
    from .training import run_training

    run = _run_config(args)
    cache = _load_cache(args.cache, run)
    t0 = time.time()
    path = run_training(run, cache, args.mode, args.out, resume=args.resume, max_steps=args.max_steps)
    return {"checkpoint": str(path), "run_hash": run.content_hash(), "mode": args.mode,
            "seconds": round(time.time() - t0, 1)}


def _read_pairs(path):
    pairs = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        if isinstance(obj, dict):
            pairs.append((obj["source_id"], obj["target_id"], int(obj.get("trial", 0))))
        else:
            pairs.append((obj[0], obj[1], int(obj[2]) if len(obj) > 2 else 0))
    return pairs


def cmd_convert(args):
    from .audio_dsp import read_wav, write_wav
    from .dataset import _images_in, load_face_image
    from .errors import BadImageShape
    from .inference import ConversionRecord, Converter, convert_batch, write_results

    out = Path(args.out)
    seed = args.seed if args.seed is not None else 0
    if args.source:
        faces = _images_in(Path(args.faces)) if args.faces else []
        if not faces:
            raise BadImageShape(f"no face images under {args.faces}")
    conv = Converter.from_checkpoints(args.vc, args.af, content=args.content or "toy")
    if args.source:
        src = read_wav(args.source)
        res = conv.convert(src, [load_face_image(p) for p in faces], f0_avg_override=args.f0_avg_override, seed=seed)
        target = Path(args.faces).name
        wav_path = out / target / f"{Path(args.source).stem}_0.wav"
        write_wav(wav_path, res.wav)
        records = [ConversionRecord(
            source_id=Path(args.source).stem, target_id=target, trial=0, source_utt=str(args.source),
            f0_avg=res.f0_avg, face_ids=[str(p) for p in faces], wav_path=str(wav_path),
            seed=seed, f0_avg_source="override" if args.f0_avg_override is not None else "af",
            run_hash=conv.run_hash,
        )]
    else:
        cache = _load_cache(args.cache, conv.run)
        records = convert_batch(_read_pairs(args.batch), cache, conv, out, seed=seed,
                                f0_avg_override=args.f0_avg_override)
    write_results(out / "results.jsonl", records)
    return {"results": str(out / "results.jsonl"), "n_records": len(records), "run_hash": conv.run_hash}


def cmd_eval(args):
    from .evaluation import evaluate_results, format_table, make_embedder
    from .inference import read_results

    run = _run_config(args)
    records = read_results(args.results)
    cache = _load_cache(args.cache, run)
    embedder = make_embedder(args.embedder, run.dsp)
    run_hashes = sorted({r.run_hash for r in records})
    report = evaluate_results(records, cache, embedder, seed=run.seed,
                              provenance={"results": str(args.results), "results_run_hash": run_hashes,
                                          "run_hash": run.content_hash()})
    _write_json(args.out, report.to_dict())
    print(format_table(report), file=sys.stderr)
    return {"report": str(args.out), "run_hash": run.content_hash()}


def cmd_selftest(args):
    from .selftest import run_selftest

    results = run_selftest(seed=args.seed if args.seed is not None else 0)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=sys.stderr)
    summary = {"passed": sum(ok for _, ok, _ in results), "total": len(results)}
    if summary["passed"] != summary["total"]:
        raise SelftestFailed(summary)
    return summary


class SelftestFailed(HYFaceError):
    module = "cli"

    def __init__(self, summary):
        super().__init__(f"{summary['total'] - summary['passed']} of {summary['total']} checks failed")


def build_parser():
    p = argparse.ArgumentParser(prog="hyface", description="Face-conditioned voice conversion toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, content=True):
        sp.add_argument("--config", help="flat key = value run config")
        sp.add_argument("--seed", type=int)
        if content:
            sp.add_argument("--content", help="content provider: toy | file:<dir>")

    sp = sub.add_parser("prepare", help="build manifest and feature cache")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--layout", default="flat", choices=("flat", "lrs3"))
    sp.add_argument("--frontal-only", action="store_true")
    sp.add_argument("--out", required=True, help="cache directory")
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train the VC model or the AF network")
    common(sp)
    sp.add_argument("--mode", choices=("vc", "af"), default="vc")
    sp.add_argument("--cache", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", action="store_true")
    sp.add_argument("--max-steps", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("convert", help="convert one source or a batch of pairs")
    common(sp)
    sp.add_argument("--vc", required=True, help="VC checkpoint directory")
    sp.add_argument("--af", help="AF checkpoint directory")
    sp.add_argument("--source", help="source wav")
    sp.add_argument("--faces", help="directory of target face images")
    sp.add_argument("--batch", help="JSONL of (source_id, target_id, trial)")
    sp.add_argument("--cache", help="feature cache for --batch")
    sp.add_argument("--f0-avg-override", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("eval", help="compute the metric report")
    common(sp)
    sp.add_argument("--results", required=True)
    sp.add_argument("--cache", required=True)
    sp.add_argument("--embedder", default="builtin", help="builtin | file:<dir>")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("selftest", help="run the invariant suite")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "convert" and not args.source and not args.batch:
        parser.error("convert needs --source/--faces or --batch/--cache")
    if args.command == "convert" and args.batch and not args.cache:
        parser.error("--batch needs --cache")
    try:
        out = args.func(args)
    except HYFaceError as e:
        rec = e.to_record()
        rec["operation"] = f"cmd_{args.command}"
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        return 2
    except OSError as e:
        print(json.dumps({"error": type(e).__name__, "module": "cli", "operation": f"cmd_{args.command}",
                          "message": str(e)}, sort_keys=True), file=sys.stderr)
        return 2
    print(json.dumps(out, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
