import json
import xml.etree.ElementTree as ET

import pytest

from topicfix import EMBED_DIM, corpus_pipeline, make_test_pairs, make_topic_corpus
from oracles import streaming_means
from ragmark.embed import LocalHashEmbedder
from ragmark.errors import ConfigError, RunAbortedError, TransportError
from ragmark.experiment import (
    BASELINE_ARM,
    ExperimentConfig,
    Means,
    emit_report,
    parse_report_csv,
    read_report_json,
    run_baseline,
    run_sweep,
    summarize,
)
from ragmark.generate import ExtractiveMockClient
from ragmark.index import IndexKind, build_question_index, build_sentence_index
from ragmark.metrics import ScoreRow
from ragmark.qagen import MockQuestionGenClient, build_qa_dataset
from ragmark import testgen

# Published averages the relative-delta conventions are anchored on.
TABLE3 = {
    "baseline": ScoreRow("avg", 0.142117, 0.119251, 0.002770, 0.335299),
    "fine_tuned": ScoreRow("avg", 0.254003, 0.242348, 0.050048, 0.356439),
    "rag_fine_tuned": ScoreRow("avg", 0.229296, 0.195219, 0.029378, 0.305797),
    "rag": ScoreRow("avg", 0.294986, 0.222193, 0.057998, 0.544829),
}


class ReferenceEcho:
    """Stub endpoint that answers every question with its reference text."""

    name = "echo"

    def __init__(self, mapping):
        self.mapping = mapping

    def generate(self, request):
        for question, reference in self.mapping.items():
            if question in request.prompt:
                return reference
        return "no match"


class Flaky:
    name = "flaky"

    def __init__(self, fail_every=2):
        self.calls = 0
        self.fail_every = fail_every

    def generate(self, request):
        self.calls += 1
        if self.calls % self.fail_every == 0:
            raise TransportError("down")
        return "I do not know."


def desk_fixture():
    docs, vocab = make_topic_corpus()
    paragraphs, sentences = corpus_pipeline(docs)
    embedder = LocalHashEmbedder(dim=EMBED_DIM)
    ids = build_sentence_index(sentences, embedder)
    qa = build_qa_dataset(paragraphs, MockQuestionGenClient(seed=3), k=3)
    idq = build_question_index(qa, embedder)
    testset = testgen.TestSet(pairs=make_test_pairs(vocab, sentences), params={"fixture": "topics"})
    cfg = ExperimentConfig(testset_path="unused", embed_endpoint=f"local:{EMBED_DIM}")
    return cfg, testset, ids, idq, embedder


class TestSummarize:
    def test_table3_relative_deltas(self):
        table = summarize({label: [row] for label, row in TABLE3.items()})
        deltas = table.deltas
        assert deltas[("rag", "fine_tuned")]["rouge"] == pytest.approx(0.161, abs=0.001)
        assert deltas[("rag", "fine_tuned")]["bleu"] == pytest.approx(0.159, abs=0.001)
        assert deltas[("rag", "fine_tuned")]["cs"] == pytest.approx(0.529, abs=0.001)
        # both denominator conventions for the meteor gap
        assert deltas[("fine_tuned", "rag")]["meteor"] == pytest.approx(0.091, abs=0.001)
        assert deltas[("rag", "fine_tuned")]["meteor"] == pytest.approx(-0.083, abs=0.001)

    def test_means_match_streaming_oracle(self):
        rows = [ScoreRow(f"q{i}", i / 7, i / 11, i / 13, i / 17) for i in range(100)]
        table = summarize({"arm": rows})
        means = table.arms[0].means
        assert means.rouge == pytest.approx(streaming_means([r.rouge for r in rows]), abs=1e-12)
        assert means.cs == pytest.approx(streaming_means([r.cs for r in rows]), abs=1e-12)

    def test_single_arm_has_no_deltas(self):
        table = summarize({"only": [ScoreRow("q", 0.1, 0.2, 0.3, 0.4)]})
        assert table.deltas == {}

    def test_sweep_arm_best_threshold_ties_take_lower(self):
        rows_same = [ScoreRow("q", 0.1, 0.1, 0.1, 0.5)]
        table = summarize({}, {"arm": {0.2: rows_same, 0.5: rows_same, 0.8: rows_same}})
        assert table.arms[0].best_threshold == 0.2

    def test_sweep_arm_headline_at_best_threshold(self):
        table = summarize(
            {},
            {
                "arm": {
                    0.0: [ScoreRow("q", 0.1, 0.1, 0.1, 0.2)],
                    0.5: [ScoreRow("q", 0.9, 0.9, 0.9, 0.8)],
                    1.0: [ScoreRow("q", 0.4, 0.4, 0.4, 0.4)],
                }
            },
        )
        arm = table.arms[0]
        assert arm.best_threshold == 0.5
        assert arm.means.cs == pytest.approx(0.8)
        assert set(arm.per_threshold) == {0.0, 0.5, 1.0}

    def test_zero_denominator_delta_is_none(self):
        table = summarize(
            {
                "a": [ScoreRow("q", 0.5, 0.5, 0.5, 0.5)],
                "b": [ScoreRow("q", 0.0, 0.5, 0.5, 0.5)],
            }
        )
        assert table.deltas[("a", "b")]["rouge"] is None


class TestRuns:
    def test_baseline_mock_refusal_scores_near_zero(self):
        cfg, testset, *_ = desk_fixture()
        embedder = LocalHashEmbedder(dim=EMBED_DIM)
        rows = run_baseline(cfg, testset=testset, gen_client=ExtractiveMockClient(),
                            embedder=embedder)
        assert len(rows) == len(testset.pairs)
        assert all(r.cs < 0.2 and r.rouge < 0.2 for r in rows)

    def test_baseline_echo_reference_is_identity(self):
        cfg, testset, _, _, embedder = desk_fixture()
        echo = ReferenceEcho({p.question: p.answer_text for p in testset.pairs})
        rows = run_baseline(cfg, testset=testset, gen_client=echo, embedder=embedder)
        for row in rows:
            assert row.rouge == pytest.approx(1.0, abs=1e-6)
            assert row.bleu == pytest.approx(1.0, abs=1e-6)
            assert row.cs == pytest.approx(1.0, abs=1e-6)

    def test_row_count_matches_questions(self):
        cfg, testset, ids, _, embedder = desk_fixture()
        by_threshold = run_sweep(cfg, IndexKind.SENTENCES, testset=testset, index=ids,
                                 gen_client=ExtractiveMockClient(), embedder=embedder)
        assert set(by_threshold) == set(cfg.thresholds)
        assert all(len(rows) == len(testset.pairs) for rows in by_threshold.values())

    def test_failure_budget_aborts(self):
        cfg, testset, *_ = desk_fixture()
        embedder = LocalHashEmbedder(dim=EMBED_DIM)
        with pytest.raises(RunAbortedError):
            run_baseline(cfg, testset=testset, gen_client=Flaky(fail_every=2),
                         embedder=embedder)

    def test_kind_mismatch_surfaced(self):
        cfg, testset, ids, _, embedder = desk_fixture()
        with pytest.raises(ConfigError):
            run_sweep(cfg, IndexKind.QUESTIONS, testset=testset, index=ids,
                      gen_client=ExtractiveMockClient(), embedder=embedder)

    def test_sweep_cs_at_half_beats_baseline_and_top_threshold_matches_baseline(self):
        cfg, testset, ids, idq, embedder = desk_fixture()
        mock = ExtractiveMockClient()
        baseline = run_baseline(cfg, testset=testset, gen_client=mock, embedder=embedder)
        base_cs = sum(r.cs for r in baseline) / len(baseline)
        for index in (ids, idq):
            sweep = run_sweep(cfg, index.kind, testset=testset, index=index,
                              gen_client=mock, embedder=embedder)
            cs_at_half = sum(r.cs for r in sweep[0.5]) / len(sweep[0.5])
            assert cs_at_half > base_cs
            assert sweep[1.0] == baseline  # row-for-row

    def test_mean_cs_flat_past_max_similarity(self):
        cfg, testset, ids, _, embedder = desk_fixture()
        sweep = run_sweep(cfg, IndexKind.SENTENCES, testset=testset, index=ids,
                          gen_client=ExtractiveMockClient(), embedder=embedder)
        # the fixture's best query-key cosine sits under 0.8
        assert sweep[0.8] == sweep[0.9] == sweep[1.0]


class TestExperimentConfig:
    def test_thresholds_must_increase(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(testset_path="x", thresholds=[0.1, 0.1])

    def test_thresholds_must_be_in_range(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(testset_path="x", thresholds=[0.5, 1.2])

    def test_from_config_defaults(self):
        from ragmark.config import default_config

        cfg = ExperimentConfig.from_config(default_config())
        assert cfg.thresholds == [i / 10 for i in range(11)]
        assert cfg.budgets.model_max_input == 4096
        assert cfg.budgets.answer_reserve == 256


class TestReports:
    def _table(self):
        return summarize(
            {label: [row] for label, row in TABLE3.items()},
            {
                "swept": {
                    0.0: [ScoreRow("q", 0.1, 0.1, 0.1, 0.1)],
                    0.5: [ScoreRow("q", 0.3, 0.3, 0.3, 0.6)],
                }
            },
        )

    def test_emit_and_csv_roundtrip(self, tmp_path):
        table = self._table()
        written = emit_report(table, tmp_path)
        assert {p.name for p in written} == {"report.csv", "report.json", "radar.json"}
        parsed = parse_report_csv(tmp_path / "report.csv")
        assert [a.label for a in parsed] == [a.label for a in table.arms]
        for ours, theirs in zip(table.arms, parsed):
            assert ours.means == theirs.means
            assert ours.best_threshold == theirs.best_threshold

    def test_report_json_roundtrip(self, tmp_path):
        table = self._table()
        emit_report(table, tmp_path)
        loaded = read_report_json(tmp_path / "report.json")
        assert [a.label for a in loaded.arms] == [a.label for a in table.arms]
        for ours, theirs in zip(table.arms, loaded.arms):
            assert ours.means == theirs.means
            assert ours.per_threshold == theirs.per_threshold
        assert loaded.deltas == table.deltas

    def test_radar_json_axes_and_series(self, tmp_path):
        table = self._table()
        emit_report(table, tmp_path)
        radar = json.loads((tmp_path / "radar.json").read_text())
        assert radar["axes"] == ["rouge", "meteor", "bleu", "cs"]
        assert len(radar["series"]) == len(table.arms)
        assert all(len(s["values"]) == 4 for s in radar["series"])

    def test_radar_svg_is_wellformed_xml(self, tmp_path):
        table = self._table()
        emit_report(table, tmp_path, svg=True)
        root = ET.parse(tmp_path / "radar.svg").getroot()
        assert root.tag.endswith("svg")

    def test_emit_unwritable_dir_raises_oserror(self, tmp_path):
        target = tmp_path / "blocked"
        target.write_text("a file, not a directory")
        with pytest.raises(OSError):
            emit_report(self._table(), target)
