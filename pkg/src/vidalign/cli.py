"""``vidalign`` command line: one subcommand per workflow.

Every failure exits nonzero with a single stderr line of the form
``error=<Kind> reason=<text>``.
"""
from __future__ import annotations

import argparse
import logging
import sys


from .data import SyntheticSpec, generate_synthetic, load_manifest
from .encoders import NOUN, VERB
from .errors import ConfigError, VidAlignError
from .gradcheck import audit, worst_error
from .retrieval import (
    encode_caption_set,
    evaluate,
    export_highlight,
    highlight,
    index_videos,
    rank,
    rerank,
)
from .training import Checkpoint, TrainConfig, train, write_loss_log
from .validation import check_positive, check_size

log = logging.getLogger("vidalign")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse would print usage over several lines; keep one parsable line
        raise SystemExit(_fail("UsageError", message, code=2))


def _fail(kind: str, message, code=1) -> int:
    text = " ".join(str(message).split())
    print(f"error={kind} reason={text}", file=sys.stderr)
    return code


def cmd_gen_synthetic(args):
    spec = SyntheticSpec.read(args.spec) if args.spec else SyntheticSpec()
    out = generate_synthetic(spec, args.out)
    print(f"wrote={out}")


def cmd_train(args):
    ds = load_manifest(args.data)
    config = TrainConfig.read(args.config) if args.config else TrainConfig()
    ckpt = train(ds, config, on_epoch=lambda e: print(e.line(), flush=True))
    root = ckpt.save(args.out)
    write_loss_log(root / "loss_log.txt", ckpt.history)
    print(f"checkpoint={root}")


def cmd_eval(args):
    ckpt = Checkpoint.load(args.ckpt)
    ds = load_manifest(args.data)
    for key, report in evaluate(ckpt.model, ds, args.rerank, args.median).items():
        sys.stdout.write(report.lines(prefix=f"{key}."))


def cmd_retrieve(args):
    model = Checkpoint.load(args.ckpt).model
    vocab = model.vocab
    ids = []
    for word in args.query.split():
        if word in vocab:
            ids.append(vocab.id(word))
        else:
            log.warning("query token %r is not in the vocabulary; skipped", word)
    if not ids:
        raise ConfigError("query has no in-vocabulary tokens")
    verbs = [i for i in ids if vocab.pos[i] == VERB]
    nouns = [i for i in ids if vocab.pos[i] == NOUN]
    videos = index_videos(model, load_manifest(args.index))
    caps = encode_caption_set(model, [ids], [verbs], [nouns], ["query"])
    joint = rank(videos.joint, caps.joint, "caption_to_video")
    tables = {"joint": joint, "rerank": rerank(joint, videos.pooled_mot, videos.pooled_vis, caps.verbs, caps.nouns)}
    for name, table in tables.items():
        for r, (j, s) in enumerate(table.ranked(0)[: args.topk], 1):
            print(f"{name} rank={r} video_id={videos.video_ids[j]} score={s!r}")


def cmd_highlight(args):
    model = Checkpoint.load(args.ckpt).model
    ds = load_manifest(args.data)
    if args.video not in ds.videos:
        raise ConfigError(f"video {args.video!r} is not in {args.data}")
    slow, fast = ds.volumes(args.video)
    beta = check_positive("beta", args.beta)
    export = highlight(model, slow, fast, args.token, args.pos, beta, check_size(args.size), args.interp, args.video)
    out = export_highlight(export, args.out)
    print(f"map_shape={','.join(map(str, export.display.shape))} out={out}")


def cmd_gradcheck(args):
    config = TrainConfig.read(args.config) if args.config else TrainConfig()
    reports = audit(args.problems, args.seed, config)
    for k, rep in enumerate(reports):
        print(f"problem={k} " + " ".join(f"{c}={r.max_rel_error:.3e}" for c, r in rep.items()))
    worst = worst_error(reports)
    print(f"worst_rel_error={worst!r}")
    return 0 if worst < 1e-4 else 1


def cmd_validate(args):
    ds = load_manifest(args.data)
    print(f"ok records={len(ds)} videos={len(ds.videos)} vocab={len(ds.vocab)}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vidalign", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-synthetic", help="write a synthetic dataset")
    s.add_argument("--spec", help="key=value generator spec (defaults if omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("train", help="train and write a checkpoint directory")
    s.add_argument("--data", required=True, help="manifest.jsonl or its directory")
    s.add_argument("--config", help="key=value training config (defaults if omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="retrieval metrics in both directions")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--rerank", action="store_true")
    s.add_argument("--median", choices=("lower", "midpoint"), default="lower")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("retrieve", help="rank indexed videos for a free-text query")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--query", required=True)
    s.add_argument("--index", required=True, help="dataset whose videos are ranked")
    s.add_argument("--topk", type=int, default=5)
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("highlight", help="export a token-conditioned relevance map")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True, help="dataset holding the video")
    s.add_argument("--video", required=True)
    s.add_argument("--token", required=True)
    s.add_argument("--pos", required=True, choices=(VERB, NOUN))
    s.add_argument("--beta", required=True, type=float)
    s.add_argument("--size", help="output grid T,H,W (native grid if omitted)")
    s.add_argument("--interp", choices=("trilinear", "nearest"), default="trilinear")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_highlight)

    s = sub.add_parser("gradcheck", help="finite-difference audit of the objective")
    s.add_argument("--config", help="key=value training config (loss weights, margin, beta)")
    s.add_argument("--problems", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("validate", help="check a manifest and its feature files")
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args) or 0
    except VidAlignError as e:
        return _fail(type(e).__name__, e)
    except FloatingPointError as e:
        return _fail(type(e).__name__, e)
    except OSError as e:
        return _fail("IOError", e)


if __name__ == "__main__":
    sys.exit(main())
