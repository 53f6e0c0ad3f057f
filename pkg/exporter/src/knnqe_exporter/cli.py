"""Command line entry point.

Two subcommands: ``run`` performs an export with flags mirroring
ExportJob, ``toy-model`` writes a randomly initialized model whose
vocabulary is collected from text files. Exit codes: 0 success, 1 usage
error, 2 export or I/O failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ExportError, UsageError
from .export import ExportJob, run_export
from .toy_model import new_toy_model


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="knnqe-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    run = sub.add_parser("run", help="export a bundle from a model and data")
    run.add_argument("--model", required=True, help="model file (.npz)")
    run.add_argument("--source", required=True, help="source text, one sentence per line")
    run.add_argument("--target", help="reference text, required for --side train")
    run.add_argument("--side", required=True, choices=("train", "test"))
    run.add_argument("--out", required=True, help="output bundle directory")
    run.add_argument("--batch-size", type=int, default=16)
    run.add_argument("--device", default="cpu")
    run.add_argument("--embedding-model", default="hash:64", help="e.g. hash:64")

    toy = sub.add_parser("toy-model", help="write a random toy model for testing")
    toy.add_argument("texts", nargs="+", help="text files whose words form the vocabulary")
    toy.add_argument("--out", required=True, help="model file to write (.npz)")
    toy.add_argument("--dim", type=int, default=32)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--max-len", type=int, default=32)
    return parser


def _cmd_run(args) -> str:
    job = ExportJob(
        model_path=args.model,
        source_path=args.source,
        target_path=args.target,
        side=args.side,
        out_dir=args.out,
        batch_size=args.batch_size,
        device=args.device,
        embedding_model=args.embedding_model,
    )
    result = run_export(job)
    note = f", skipped {len(result.skipped)}" if result.skipped else ""
    return (
        f"exported {result.sentence_count} sentences "
        f"({result.entry_count} entries) to {args.out}{note}"
    )


def _cmd_toy_model(args) -> str:
    words: list[str] = []
    for path in args.texts:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                words.extend(line.split())
    model = new_toy_model(words, dim=args.dim, seed=args.seed, max_len=args.max_len)
    model.save(args.out)
    return f"wrote toy model to {args.out}: {len(model.vocab)} tokens, dim {args.dim}"


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            message = _cmd_run(args)
        else:
            message = _cmd_toy_model(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ExportError, OSError) as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 2
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())
