from __future__ import annotations

import json

import numpy as np
import pytest

from knnqe.cli import main
from knnqe.interchange import ScoreFragment, read_score_table, write_score_table

from corpus import random_bundle


@pytest.fixture()
def corpus(tmp_path):
    """Train and test bundles on disk plus a built datastore."""
    rng = np.random.default_rng(404)
    train = random_bundle(
        tmp_path / "train", rng, n_sentences=10, dim=6, emb_dim=4, side="train"
    )
    test = random_bundle(
        tmp_path / "test", rng, n_sentences=6, dim=6, emb_dim=4, side="test",
        with_probs=True,
    )
    store = tmp_path / "store"
    code = main(
        [
            "build",
            "--manifest", str(train["manifest"]),
            "--vectors", str(train["vectors"]),
            "--embeddings", str(train["embeddings"]),
            "--out", str(store),
        ]
    )
    assert code == 0
    return {"train": train, "test": test, "store": store, "root": tmp_path}


def run_score(corpus, out_name, *extra):
    out = corpus["root"] / out_name
    code = main(
        [
            "score",
            "--store", str(corpus["store"]),
            "--manifest", str(corpus["test"]["manifest"]),
            "--vectors", str(corpus["test"]["vectors"]),
            "--embeddings", str(corpus["test"]["embeddings"]),
            "--out", str(out),
            *extra,
        ]
    )
    return code, out


class TestBuild:
    def test_store_files_and_run_record(self, corpus):
        store = corpus["store"]
        for name in ("vectors.kqe", "entries.kqe", "sentences.jsonl", "meta.json", "run.json"):
            assert (store / name).exists()
        record = json.loads((store / "run.json").read_text())
        assert record["command"] == "build"
        assert record["formats"] == {"datastore": 1, "tensor": 1}
        assert isinstance(record["package_version"], str)
        assert "time" not in json.dumps(record).lower()
        assert record["config"]["fraction"] is None

    def test_fraction_requires_seed(self, corpus, tmp_path):
        code = main(
            [
                "build",
                "--manifest", str(corpus["train"]["manifest"]),
                "--vectors", str(corpus["train"]["vectors"]),
                "--out", str(tmp_path / "s2"),
                "--fraction", "0.5",
            ]
        )
        assert code == 1

    def test_fraction_shrinks_store(self, corpus, tmp_path, capsys):
        out = tmp_path / "half"
        code = main(
            [
                "build",
                "--manifest", str(corpus["train"]["manifest"]),
                "--vectors", str(corpus["train"]["vectors"]),
                "--out", str(out),
                "--fraction", "0.5",
                "--seed", "3",
            ]
        )
        assert code == 0
        meta = json.loads((out / "meta.json").read_text())
        assert meta["sentence_count"] == 5
        assert meta["sampling_chain"][0]["fraction"] == 0.5

    def test_ivf_flag_writes_index(self, corpus, tmp_path):
        out = tmp_path / "with_ivf"
        code = main(
            [
                "build",
                "--manifest", str(corpus["train"]["manifest"]),
                "--vectors", str(corpus["train"]["vectors"]),
                "--out", str(out),
                "--ivf-clusters", "4",
            ]
        )
        assert code == 0
        assert (out / "ivf.kqe").exists()


class TestValidate:
    def test_bundle_ok(self, corpus, tmp_path):
        out = tmp_path / "v"
        code = main(
            [
                "validate",
                "--manifest", str(corpus["train"]["manifest"]),
                "--vectors", str(corpus["train"]["vectors"]),
                "--embeddings", str(corpus["train"]["embeddings"]),
                "--out", str(out),
            ]
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["ok"] is True
        assert report["violations"] == []
        assert report["sentence_count"] == 10

    def test_broken_bundle_exits_2(self, corpus, tmp_path, capsys):
        manifest = corpus["train"]["manifest"]
        lines = manifest.read_text().splitlines()
        (tmp_path / "dup.jsonl").write_text("\n".join([lines[0]] + lines) + "\n")
        out = tmp_path / "v"
        code = main(
            [
                "validate",
                "--manifest", str(tmp_path / "dup.jsonl"),
                "--vectors", str(corpus["train"]["vectors"]),
                "--out", str(out),
            ]
        )
        assert code == 2
        report = json.loads((out / "report.json").read_text())
        assert report["ok"] is False
        assert any("duplicate" in v for v in report["violations"])
        assert "violation" in capsys.readouterr().err

    def test_store_ok(self, corpus, tmp_path):
        code = main(
            ["validate", "--store", str(corpus["store"]), "--out", str(tmp_path / "v")]
        )
        assert code == 0

    def test_both_targets_rejected(self, corpus, tmp_path):
        code = main(
            [
                "validate",
                "--store", str(corpus["store"]),
                "--manifest", str(corpus["train"]["manifest"]),
                "--out", str(tmp_path / "v"),
            ]
        )
        assert code == 1


class TestScore:
    def test_writes_tables_and_token_scores(self, corpus):
        code, out = run_score(
            corpus, "scores", "--metrics", "token_distance,match_count,avg_probability"
        )
        assert code == 0
        frag = read_score_table(out / "token_distance.tsv")
        assert frag.name == "token_distance"
        assert len(frag.scores) == 6
        assert all(k[0] == "mt" and k[1] == "all" for k in frag.scores)
        token_lines = (out / "token_distance.tokens.jsonl").read_text().splitlines()
        assert len(token_lines) == 6
        first = json.loads(token_lines[0])
        assert set(first) == {"seg_id", "scores"}
        assert (out / "run.json").exists()

    def test_ensemble_table(self, corpus):
        code, out = run_score(
            corpus, "ens", "--metrics", "token_distance,match_count", "--ensemble"
        )
        assert code == 0
        frag = read_score_table(out / "ensemble.tsv")
        assert len(frag.scores) == 6

    def test_ensemble_needs_two_metrics(self, corpus):
        code, _ = run_score(corpus, "e1", "--metrics", "token_distance", "--ensemble")
        assert code == 1

    def test_unknown_metric(self, corpus, capsys):
        code, _ = run_score(corpus, "u", "--metrics", "token_distance,wer")
        assert code == 1
        assert "unknown metric" in capsys.readouterr().err

    def test_ivf_needs_index(self, corpus, capsys):
        code, _ = run_score(
            corpus, "ivf", "--metrics", "token_distance", "--mode", "ivf", "--probes", "2"
        )
        assert code == 1
        assert "ivf-clusters" in capsys.readouterr().err

    def test_ivf_mode_matches_exact_at_full_probe(self, corpus, tmp_path):
        store2 = tmp_path / "s_ivf"
        main(
            [
                "build",
                "--manifest", str(corpus["train"]["manifest"]),
                "--vectors", str(corpus["train"]["vectors"]),
                "--embeddings", str(corpus["train"]["embeddings"]),
                "--out", str(store2),
                "--ivf-clusters", "3",
            ]
        )
        out_exact = corpus["root"] / "m_exact"
        out_ivf = corpus["root"] / "m_ivf"
        for mode_args, out in (
            ((), out_exact),
            (("--mode", "ivf", "--probes", "3"), out_ivf),
        ):
            code = main(
                [
                    "score",
                    "--store", str(store2),
                    "--manifest", str(corpus["test"]["manifest"]),
                    "--vectors", str(corpus["test"]["vectors"]),
                    "--out", str(out),
                    "--metrics", "token_distance",
                    *mode_args,
                ]
            )
            assert code == 0
        exact = read_score_table(out_exact / "token_distance.tsv")
        ivf = read_score_table(out_ivf / "token_distance.tsv")
        assert exact.scores == ivf.scores

    def test_sweep_k(self, corpus):
        code, out = run_score(
            corpus, "sweep", "--metrics", "distinct_tokens", "--sweep-k", "1,5"
        )
        assert code == 0
        assert (out / "distinct_tokens.k1.tsv").exists()
        assert (out / "distinct_tokens.k5.tsv").exists()
        rows = (out / "sweep_summary.tsv").read_text().splitlines()
        assert rows[0] == "sweep\tvalue\tmetric\tn_segments\tmean_score\ttable"
        assert len(rows) == 3
        assert rows[1].startswith("k\t1\tdistinct_tokens\t6\t")

    def test_sweep_fraction_requires_seed(self, corpus):
        code, _ = run_score(
            corpus, "sf", "--metrics", "token_distance", "--sweep-fraction", "0.5,1.0"
        )
        assert code == 1

    def test_sweep_fraction(self, corpus):
        code, out = run_score(
            corpus,
            "sf2",
            "--metrics", "token_distance",
            "--sweep-fraction", "0.5,1.0",
            "--seed", "9",
        )
        assert code == 0
        assert (out / "token_distance.f0.5.tsv").exists()
        assert (out / "token_distance.f1.0.tsv").exists()

    def test_sweeps_are_mutually_exclusive(self, corpus):
        code, _ = run_score(
            corpus,
            "sx",
            "--metrics", "token_distance",
            "--sweep-k", "1",
            "--sweep-fraction", "1.0",
            "--seed", "1",
        )
        assert code == 1

    def test_missing_store_is_io_error(self, corpus, capsys):
        code = main(
            [
                "score",
                "--store", str(corpus["root"] / "nowhere"),
                "--manifest", str(corpus["test"]["manifest"]),
                "--vectors", str(corpus["test"]["vectors"]),
                "--metrics", "token_distance",
                "--out", str(corpus["root"] / "x"),
            ]
        )
        assert code == 3


class TestRefScore:
    def test_bleu_table(self, tmp_path, capsys):
        (tmp_path / "hyp.txt").write_text("the cat sat\nbig dog runs\n")
        (tmp_path / "ref.txt").write_text("the cat sat\nsmall dog walks\n")
        out = tmp_path / "bleu.tsv"
        code = main(
            [
                "ref-score",
                "--metric", "bleu",
                "--hyp", str(tmp_path / "hyp.txt"),
                "--refs", str(tmp_path / "ref.txt"),
                "--out", str(out),
            ]
        )
        assert code == 0
        frag = read_score_table(out)
        assert frag.scores[("mt", "all", "1")] == 1.0
        assert frag.scores[("mt", "all", "2")] < 1.0
        assert (tmp_path / "run.json").exists()

    def test_multiple_reference_files(self, tmp_path):
        (tmp_path / "hyp.txt").write_text("aa bb cc\n")
        (tmp_path / "r1.txt").write_text("zz yy xx\n")
        (tmp_path / "r2.txt").write_text("aa bb cc\n")
        out = tmp_path / "chrf.tsv"
        code = main(
            [
                "ref-score",
                "--metric", "chrf",
                "--hyp", str(tmp_path / "hyp.txt"),
                "--refs", f"{tmp_path / 'r1.txt'},{tmp_path / 'r2.txt'}",
                "--out", str(out),
            ]
        )
        assert code == 0
        frag = read_score_table(out)
        assert frag.scores[("mt", "all", "1")] == 1.0

    def test_line_count_mismatch(self, tmp_path, capsys):
        (tmp_path / "hyp.txt").write_text("a\nb\n")
        (tmp_path / "ref.txt").write_text("a\n")
        code = main(
            [
                "ref-score",
                "--metric", "bleu",
                "--hyp", str(tmp_path / "hyp.txt"),
                "--refs", str(tmp_path / "ref.txt"),
                "--out", str(tmp_path / "o.tsv"),
            ]
        )
        assert code == 3

    def test_empty_line_names_position(self, tmp_path, capsys):
        (tmp_path / "hyp.txt").write_text("a\n\n")
        (tmp_path / "ref.txt").write_text("a\nb\n")
        code = main(
            [
                "ref-score",
                "--metric", "bleu",
                "--hyp", str(tmp_path / "hyp.txt"),
                "--refs", str(tmp_path / "ref.txt"),
                "--out", str(tmp_path / "o.tsv"),
            ]
        )
        assert code == 3
        assert "line 2" in capsys.readouterr().err


class TestMetaEval:
    def write_tables(self, tmp_path):
        rng = np.random.default_rng(8)
        keys = [("mt", "all", f"s{i}") for i in range(8)]
        h = {k: float(i) for i, k in enumerate(keys)}
        write_score_table(tmp_path / "h.tsv", ScoreFragment(name="h", scores=h))
        for name, noise in (("qe_a", 0.1), ("qe_b", 3.0)):
            scores = {k: h[k] + float(rng.normal(0, noise)) for k in keys}
            write_score_table(tmp_path / f"{name}.tsv", ScoreFragment(name=name, scores=scores))
        rb = {k: h[k] + float(rng.normal(0, 0.5)) for k in keys}
        write_score_table(tmp_path / "rb.tsv", ScoreFragment(name="rb", scores=rb))

    def test_end_to_end(self, tmp_path):
        self.write_tables(tmp_path)
        out = tmp_path / "report"
        code = main(
            [
                "meta-eval",
                "--h-table", str(tmp_path / "h.tsv"),
                "--qe", f"qe_a={tmp_path / 'qe_a.tsv'}",
                "--qe", f"qe_b={tmp_path / 'qe_b.tsv'}",
                "--rb", f"mybleu={tmp_path / 'rb.tsv'}",
                "--polarity", "qe_a=higher",
                "--polarity", "qe_b=higher",
                "--polarity", "mybleu=higher",
                "--out", str(out),
            ]
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        overall = report["overall"]
        assert overall["n_segments"] == 8
        assert set(overall["gold"]) == {"qe_a", "qe_b"}
        assert len(overall["rb_reports"]) == 1
        rows = (out / "report.tsv").read_text().splitlines()
        assert rows[0].startswith("group_dimension\t")
        assert len(rows) == 2
        svg = (out / "scatter.svg").read_text()
        assert svg.startswith("<svg") and "mybleu" in svg

    def test_known_metric_names_need_no_polarity(self, tmp_path):
        self.write_tables(tmp_path)
        out = tmp_path / "report2"
        code = main(
            [
                "meta-eval",
                "--h-table", str(tmp_path / "h.tsv"),
                "--qe", f"token_distance={tmp_path / 'qe_a.tsv'}",
                "--qe", f"match_count={tmp_path / 'qe_b.tsv'}",
                "--rb", f"bleu={tmp_path / 'rb.tsv'}",
                "--out", str(out),
            ]
        )
        assert code == 0

    def test_unknown_name_needs_polarity(self, tmp_path, capsys):
        self.write_tables(tmp_path)
        code = main(
            [
                "meta-eval",
                "--h-table", str(tmp_path / "h.tsv"),
                "--qe", f"mystery={tmp_path / 'qe_a.tsv'}",
                "--qe", f"match_count={tmp_path / 'qe_b.tsv'}",
                "--rb", f"bleu={tmp_path / 'rb.tsv'}",
                "--out", str(tmp_path / "r"),
            ]
        )
        assert code == 1
        assert "polarity" in capsys.readouterr().err

    def test_duplicate_names_rejected(self, tmp_path):
        self.write_tables(tmp_path)
        code = main(
            [
                "meta-eval",
                "--h-table", str(tmp_path / "h.tsv"),
                "--qe", f"bleu={tmp_path / 'qe_a.tsv'}",
                "--qe", f"chrf={tmp_path / 'qe_b.tsv'}",
                "--rb", f"bleu={tmp_path / 'rb.tsv'}",
                "--out", str(tmp_path / "r"),
            ]
        )
        assert code == 1


class TestTokenEval:
    def write_inputs(self, tmp_path):
        scores = [
            {"seg_id": "s1", "scores": [0.9, 0.8, 0.1]},
            {"seg_id": "s2", "scores": [0.7, 0.2]},
        ]
        labels = [
            {"seg_id": "s1", "labels": [1, 1, 0]},
            {"seg_id": "s2", "labels": [1, 0]},
        ]
        with open(tmp_path / "scores.jsonl", "w") as fh:
            fh.writelines(json.dumps(o) + "\n" for o in scores)
        with open(tmp_path / "labels.jsonl", "w") as fh:
            fh.writelines(json.dumps(o) + "\n" for o in labels)

    def test_end_to_end(self, tmp_path):
        self.write_inputs(tmp_path)
        out = tmp_path / "te"
        code = main(
            [
                "token-eval",
                "--scores", str(tmp_path / "scores.jsonl"),
                "--labels", str(tmp_path / "labels.jsonl"),
                "--metric", "match_count",
                "--out", str(out),
            ]
        )
        assert code == 0
        rows = (out / "report.tsv").read_text().splitlines()
        assert rows[0] == "metric\tn_tokens\tpearson\tbest_threshold\tf1\tpositive_class"
        fields = rows[1].split("\t")
        assert fields[0] == "match_count"
        assert fields[1] == "5"
        assert float(fields[4]) == 1.0  # the fixture is separable

    def test_unknown_metric_needs_polarity(self, tmp_path, capsys):
        self.write_inputs(tmp_path)
        code = main(
            [
                "token-eval",
                "--scores", str(tmp_path / "scores.jsonl"),
                "--labels", str(tmp_path / "labels.jsonl"),
                "--metric", "mystery",
                "--out", str(tmp_path / "te"),
            ]
        )
        assert code == 1
        code = main(
            [
                "token-eval",
                "--scores", str(tmp_path / "scores.jsonl"),
                "--labels", str(tmp_path / "labels.jsonl"),
                "--metric", "mystery",
                "--polarity", "higher",
                "--out", str(tmp_path / "te"),
            ]
        )
        assert code == 0

    def test_duplicate_seg_id_rejected(self, tmp_path):
        self.write_inputs(tmp_path)
        with open(tmp_path / "scores.jsonl", "a") as fh:
            fh.write(json.dumps({"seg_id": "s1", "scores": [0.5]}) + "\n")
        code = main(
            [
                "token-eval",
                "--scores", str(tmp_path / "scores.jsonl"),
                "--labels", str(tmp_path / "labels.jsonl"),
                "--metric", "match_count",
                "--out", str(tmp_path / "te"),
            ]
        )
        assert code == 2


class TestHarness:
    def test_no_subcommand_is_usage_error(self, capsys):
        assert main([]) == 1

    def test_bad_flag_is_usage_error(self, capsys):
        assert main(["build", "--nonsense"]) == 1

    def test_data_dir_env(self, tmp_path, monkeypatch, capsys):
        rng = np.random.default_rng(12)
        random_bundle(tmp_path / "data" / "b", rng, n_sentences=4, dim=4, side="train")
        monkeypatch.setenv("KNNQE_DATA_DIR", str(tmp_path / "data"))
        code = main(
            [
                "validate",
                "--manifest", "b/train.jsonl",
                "--vectors", "b/train.kqe",
                "--out", "v",
            ]
        )
        assert code == 0
        assert (tmp_path / "data" / "v" / "report.json").exists()
