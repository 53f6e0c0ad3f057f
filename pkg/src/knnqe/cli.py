"""Command line entry points.

Exit codes: 0 success, 1 usage or configuration error, 2 input
validation error, 3 runtime or data error. Every subcommand writes a
run.json into its output directory recording the resolved
configuration, so a result directory is self-describing. Paths given
on the command line resolve against KNNQE_DATA_DIR when that is set.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import datastore as ds
from . import meta_eval as me
from . import qe_metrics as qm
from . import ref_metrics as rm
from . import retrieval as rt
from . import token_eval as te
from .errors import DataError, KnnqeError, UsageError, ValidationError
from .interchange import (
    ScoreFragment,
    load_bundle,
    read_score_table,
    resolve_path,
    validate_bundle,
    write_score_table,
)
from .svg import scatter_svg

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through the
    # shared error mapping instead so usage problems stay exit 1.
    def error(self, message):
        raise UsageError(message)


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("knnqe")
    except Exception:
        return "unknown"


def _write_run_json(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    config = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(args).items()
        if k != "func"
    }
    payload = {
        "command": command,
        "config": config,
        "formats": {"tensor": 1, "datastore": 1},
        "package_version": _package_version(),
    }
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = resolve_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# build


def _cmd_build(args) -> int:
    bundle = load_bundle(args.manifest, args.vectors, args.embeddings)
    store = ds.from_bundle(bundle)
    if args.fraction is not None:
        if args.seed is None:
            raise UsageError("--fraction requires --seed for a reproducible sample")
        store = store.sample(args.fraction, args.seed)
    out = _out_dir(args)
    store.save(out)
    if args.ivf_clusters is not None:
        built = ds.open_store(out)
        index = rt.build_ivf(
            built,
            args.ivf_clusters,
            args.ivf_seed,
            train_size=args.ivf_train_size,
            max_iters=args.ivf_iters,
        )
        rt.save_ivf(index, out)
    _write_run_json(out, "build", args)
    print(
        f"built datastore at {out}: {store.token_count} tokens, "
        f"{store.sentence_count} sentences, dim {store.dim}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# score


def _parse_metrics(raw: str) -> list[str]:
    names = [m.strip() for m in raw.split(",") if m.strip()]
    if not names:
        raise UsageError("--metrics lists no metric names")
    for n in names:
        if n not in qm.METRICS:
            raise UsageError(f"unknown metric {n!r}; known: {sorted(qm.METRICS)}")
    if len(set(names)) != len(names):
        raise UsageError(f"duplicate metric names in --metrics: {raw}")
    return names


def _write_series(out: Path, series: qm.QEMetricSeries, system: str, domain: str,
                  suffix: str = "") -> Path:
    table = out / f"{series.metric}{suffix}.tsv"
    write_score_table(table, series.to_fragment(system, domain))
    if series.token_scores is not None:
        with open(out / f"{series.metric}{suffix}.tokens.jsonl", "w", encoding="utf-8") as fh:
            for sid in sorted(series.token_scores):
                fh.write(
                    json.dumps({"seg_id": sid, "scores": series.token_scores[sid]}) + "\n"
                )
    return table


def _score_once(store, bundle, names, args, index) -> list[qm.QEMetricSeries]:
    out = []
    for name in names:
        out.append(
            qm.score_corpus(
                store,
                bundle,
                name,
                k=args.k,
                mode=args.mode,
                index=index,
                probes=args.probes,
            )
        )
    return out


def _cmd_score(args) -> int:
    names = _parse_metrics(args.metrics)
    if args.ensemble and len(names) < 2:
        raise UsageError("--ensemble needs at least two base metrics")
    if args.sweep_k and args.sweep_fraction:
        raise UsageError("--sweep-k and --sweep-fraction cannot be combined")

    store_dir = resolve_path(args.store)
    store = ds.open_store(store_dir)
    bundle = load_bundle(args.manifest, args.vectors, args.embeddings)

    index = None
    if args.mode == "ivf":
        if not (store_dir / rt.IVF_FILE).exists():
            raise UsageError(
                f"no IVF index at {store_dir / rt.IVF_FILE}; build one via "
                f"'knnqe build --ivf-clusters'"
            )
        if args.probes is None:
            raise UsageError("--mode ivf requires --probes")
        index = rt.load_ivf(store_dir, store)

    out = _out_dir(args)
    summary_rows: list[tuple] = []

    def run_point(sweep: str, value_token: str, point_store, k_override, suffix: str):
        k = k_override if k_override is not None else args.k
        series_list = [
            qm.score_corpus(
                point_store, bundle, name, k=k,
                mode=args.mode, index=index, probes=args.probes,
            )
            for name in names
        ]
        if args.ensemble:
            series_list.append(qm.ensemble(series_list))
        for series in series_list:
            table = _write_series(out, series, args.system, args.domain, suffix)
            vals = list(series.scores.values())
            summary_rows.append(
                (sweep, value_token, series.metric, len(vals), sum(vals) / len(vals), table.name)
            )

    if args.sweep_k:
        tokens = [t.strip() for t in args.sweep_k.split(",") if t.strip()]
        try:
            ks = [int(t) for t in tokens]
        except ValueError:
            raise UsageError(f"--sweep-k must list integers, got {args.sweep_k!r}")
        for tok, k in zip(tokens, ks):
            run_point("k", tok, store, k, f".k{tok}")
    elif args.sweep_fraction:
        if args.seed is None:
            raise UsageError("--sweep-fraction requires --seed for reproducible samples")
        tokens = [t.strip() for t in args.sweep_fraction.split(",") if t.strip()]
        try:
            fractions = [float(t) for t in tokens]
        except ValueError:
            raise UsageError(f"--sweep-fraction must list numbers, got {args.sweep_fraction!r}")
        for tok, frac in zip(tokens, fractions):
            sub = store.sample(frac, args.seed)
            run_point("fraction", tok, sub, None, f".f{tok}")
    else:
        series_list = _score_once(store, bundle, names, args, index)
        for series in series_list:
            _write_series(out, series, args.system, args.domain)
        if args.ensemble:
            _write_series(out, qm.ensemble(series_list), args.system, args.domain)

    if summary_rows:
        with open(out / "sweep_summary.tsv", "w", encoding="utf-8") as fh:
            fh.write("sweep\tvalue\tmetric\tn_segments\tmean_score\ttable\n")
            for row in summary_rows:
                sweep, tok, name, n, mean, fname = row
                fh.write(f"{sweep}\t{tok}\t{name}\t{n}\t{mean!r}\t{fname}\n")

    _write_run_json(out, "score", args)
    print(f"scored {len(bundle.sentences)} segments with {len(names)} metric(s) into {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ref-score


def _read_lines(path) -> list[str]:
    with open(resolve_path(path), "r", encoding="utf-8") as fh:
        return fh.read().splitlines()


def _cmd_ref_score(args) -> int:
    hyp_lines = _read_lines(args.hyp)
    ref_files = [t.strip() for t in args.refs.split(",") if t.strip()]
    if not ref_files:
        raise UsageError("--refs lists no files")
    ref_columns = [_read_lines(f) for f in ref_files]
    for f, col in zip(ref_files, ref_columns):
        if len(col) != len(hyp_lines):
            raise DataError(
                f"{f}: {len(col)} lines, but hypothesis file has {len(hyp_lines)}"
            )
    if not hyp_lines:
        raise DataError(f"{args.hyp}: hypothesis file is empty")

    scores = {}
    for i, hyp in enumerate(hyp_lines):
        refs = [col[i] for col in ref_columns]
        try:
            val = rm.best_reference_score(args.metric, hyp, refs)
        except (DataError, UsageError) as exc:
            raise type(exc)(f"line {i + 1}: {exc}")
        scores[(args.system, args.domain, str(i + 1))] = val

    out_path = resolve_path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_score_table(out_path, ScoreFragment(name=args.metric, scores=scores))
    _write_run_json(out_path.parent, "ref-score", args)
    print(f"wrote {len(scores)} {args.metric} scores to {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# meta-eval


def _parse_named(pairs: list[str], flag: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for raw in pairs:
        name, sep, value = raw.partition("=")
        if not sep or not name or not value:
            raise UsageError(f"{flag} expects NAME=VALUE, got {raw!r}")
        if name in out:
            raise UsageError(f"{flag}: duplicate name {name!r}")
        out[name] = value
    return out


def _cmd_meta_eval(args) -> int:
    qe = _parse_named(args.qe or [], "--qe")
    rb = _parse_named(args.rb or [], "--rb")
    pol = _parse_named(args.polarity or [], "--polarity")
    for name, p in pol.items():
        if p not in ("higher", "lower"):
            raise UsageError(f"--polarity {name}={p}: value must be higher or lower")
    overlap = set(qe) & set(rb) | ({"H"} & (set(qe) | set(rb)))
    if overlap:
        raise UsageError(f"column names must be distinct; reused: {sorted(overlap)}")

    h_frag = read_score_table(args.h_table, name="H", polarity=pol.get("H", "higher"))
    fragments = [h_frag]
    for name, path in qe.items():
        fragments.append(rm.ingest_external(name, read_score_table(path), pol.get(name)))
    for name, path in rb.items():
        fragments.append(rm.ingest_external(name, read_score_table(path), pol.get(name)))

    matrix = me.fragments_to_matrix(fragments)
    reports = me.grouped_evaluate(matrix, list(qe), list(rb), "H", args.group_by)

    out = _out_dir(args)
    payload = reports.to_dict()
    payload["dropped_keys"] = {
        name: [list(k) for k in keys] for name, keys in matrix.dropped.items() if keys
    }
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(out / "report.tsv", "w", encoding="utf-8") as fh:
        fh.write("group_dimension\tgroup_value\trb_metric\tsegment_corr\tranking_corr\n")
        for rep in [reports.overall, *reports.groups]:
            gd = rep.group_dimension or "overall"
            gv = rep.group_value or "all"
            for r in rep.rb_reports:
                fh.write(f"{gd}\t{gv}\t{r.name}\t{r.segment_corr!r}\t{r.ranking_corr!r}\n")

    points = [
        (r.segment_corr, r.ranking_corr, r.name) for r in reports.overall.rb_reports
    ]
    (out / "scatter.svg").write_text(
        scatter_svg(
            points,
            "segment-level correlation with human scores",
            "QE ranking correlation",
            "stand-in metric quality",
        ),
        encoding="utf-8",
    )
    _write_run_json(out, "meta-eval", args)
    for r in reports.overall.rb_reports:
        print(
            f"{r.name}: segment_corr={r.segment_corr:.4f} ranking_corr={r.ranking_corr:.4f}"
        )
    if reports.skipped:
        print(f"skipped {len(reports.skipped)} group(s); see report.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# token-eval


def _read_token_jsonl(path, field: str) -> dict[str, list]:
    out: dict[str, list] = {}
    p = resolve_path(path)
    with open(p, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sid = obj["seg_id"]
                values = obj[field]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{p} line {lineno}: {exc}")
            if not isinstance(values, list):
                raise ValidationError(f"{p} line {lineno}: {field} must be a list")
            if sid in out:
                raise ValidationError(f"{p} line {lineno}: duplicate seg_id {sid!r}")
            out[sid] = values
    return out


def _cmd_token_eval(args) -> int:
    token_scores = _read_token_jsonl(args.scores, "scores")
    labels = _read_token_jsonl(args.labels, "labels")
    polarity = args.polarity or rm.known_polarity(args.metric)
    if polarity is None:
        raise UsageError(
            f"metric {args.metric!r} is not recognized; pass --polarity higher|lower"
        )

    corr = te.token_pearson(token_scores, labels, polarity)
    threshold, f1 = te.best_f1(token_scores, labels, polarity, args.positive_class)
    n_tokens = sum(len(v) for v in token_scores.values())

    out = _out_dir(args)
    with open(out / "report.tsv", "w", encoding="utf-8") as fh:
        fh.write("metric\tn_tokens\tpearson\tbest_threshold\tf1\tpositive_class\n")
        fh.write(
            f"{args.metric}\t{n_tokens}\t{corr!r}\t{threshold!r}\t{f1!r}\t{args.positive_class}\n"
        )
    _write_run_json(out, "token-eval", args)
    print(
        f"{args.metric}: pearson={corr:.4f} best_f1={f1:.4f} at threshold {threshold:.6g}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate


def _cmd_validate(args) -> int:
    if bool(args.store) == bool(args.manifest):
        raise UsageError("validate needs exactly one of --store or --manifest/--vectors")
    out = _out_dir(args)

    if args.store:
        store = ds.open_store(args.store)  # raises ValidationError when inconsistent
        payload = {
            "ok": True,
            "violations": [],
            "token_count": store.token_count,
            "sentence_count": store.sentence_count,
            "dim": store.dim,
        }
        code = EXIT_OK
        print(f"datastore ok: {store.token_count} tokens, {store.sentence_count} sentences")
    else:
        if not args.vectors:
            raise UsageError("--manifest requires --vectors")
        report = validate_bundle(args.manifest, args.vectors, args.embeddings)
        payload = {
            "ok": report.ok,
            "violations": report.violations,
            "sentence_count": report.sentence_count,
            "token_count": report.token_count,
        }
        if report.ok:
            print(
                f"bundle ok: {report.sentence_count} sentences, {report.token_count} tokens"
            )
            code = EXIT_OK
        else:
            for v in report.violations:
                _err(f"violation: {v}")
            code = EXIT_VALIDATION

    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_run_json(out, "validate", args)
    return code


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="knnqe", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("build", help="build a datastore from a train bundle")
    p.add_argument("--manifest", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, help="sentence-level subsample fraction in (0, 1]")
    p.add_argument("--seed", type=int, help="sampling seed, required with --fraction")
    p.add_argument("--ivf-clusters", type=int, help="also build an IVF index with this many clusters")
    p.add_argument("--ivf-seed", type=int, default=0)
    p.add_argument("--ivf-train-size", type=int, help="k-means training subsample size")
    p.add_argument("--ivf-iters", type=int, default=25)
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("score", help="score a test bundle against a datastore")
    p.add_argument("--store", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--metrics", required=True, help="comma-separated metric names")
    p.add_argument("--k", type=int, help="override the per-metric neighborhood size")
    p.add_argument("--mode", choices=("exact", "ivf"), default="exact")
    p.add_argument("--probes", type=int, help="clusters probed per query in ivf mode")
    p.add_argument("--ensemble", action="store_true", help="also write the ensemble series")
    p.add_argument("--sweep-k", help="comma-separated k values to sweep")
    p.add_argument("--sweep-fraction", help="comma-separated datastore fractions to sweep")
    p.add_argument("--seed", type=int, help="sampling seed for --sweep-fraction")
    p.add_argument("--system", default="mt")
    p.add_argument("--domain", default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("ref-score", help="score hypotheses against references")
    p.add_argument("--metric", required=True, choices=("bleu", "chrf"))
    p.add_argument("--hyp", required=True, help="hypothesis file, one segment per line")
    p.add_argument("--refs", required=True, help="comma-separated line-aligned reference files")
    p.add_argument("--system", default="mt")
    p.add_argument("--domain", default="all")
    p.add_argument("--out", required=True, help="output TSV path")
    p.set_defaults(func=_cmd_ref_score)

    p = sub.add_parser("meta-eval", help="meta-evaluate QE metrics")
    p.add_argument("--h-table", required=True, help="human score table (TSV)")
    p.add_argument("--qe", action="append", metavar="NAME=FILE", help="QE score table, repeatable")
    p.add_argument("--rb", action="append", metavar="NAME=FILE",
                   help="reference-based score table, repeatable")
    p.add_argument("--polarity", action="append", metavar="NAME=higher|lower",
                   help="polarity override for unknown metric names, repeatable")
    p.add_argument("--group-by", choices=("system", "domain"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_meta_eval)

    p = sub.add_parser("token-eval", help="token scores vs OK/BAD labels")
    p.add_argument("--scores", required=True, help="token scores JSONL (seg_id, scores)")
    p.add_argument("--labels", required=True, help="labels JSONL (seg_id, labels; 1=OK, 0=BAD)")
    p.add_argument("--metric", required=True, help="metric name, used for polarity lookup")
    p.add_argument("--polarity", choices=("higher", "lower"))
    p.add_argument("--positive-class", choices=("bad", "ok"), default="bad")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_token_eval)

    p = sub.add_parser("validate", help="validate a bundle or datastore")
    p.add_argument("--manifest")
    p.add_argument("--vectors")
    p.add_argument("--embeddings")
    p.add_argument("--store")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        _err(f"usage error: {exc}")
        return EXIT_USAGE
    except ValidationError as exc:
        _err(f"validation error: {exc}")
        return EXIT_VALIDATION
    except DataError as exc:
        _err(f"data error: {exc}")
        return EXIT_RUNTIME
    except OSError as exc:
        _err(f"i/o error: {exc}")
        return EXIT_RUNTIME
    except KnnqeError as exc:
        _err(f"error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
