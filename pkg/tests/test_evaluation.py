from __future__ import annotations

import pytest

from ragloop.agent import AgentConfig
from ragloop.evaluation import (JudgeError, QAExample, extract_short_answer,
                                judge_score, load_qa_dataset,
                                render_report_table, report_to_dict,
                                run_benchmark)
from ragloop.llm import make_scripted

from conftest import search_turn, terminal_turn, write_jsonl

import conftest as data


# ---------------------------------------------------------------------------
# judge


def test_judge_parses_score(registry):
    backend = make_scripted(["Score: 4"])
    assert judge_score("q", "pred", "ref", backend, registry) == 4


def test_judge_retries_unparseable_then_succeeds(registry):
    backend = make_scripted(["great answer", "Score: 5"])
    assert judge_score("q", "pred", "ref", backend, registry,
                       max_retries=1) == 5
    assert backend.calls_made == 2


def test_judge_rejects_out_of_range_and_retries(registry):
    backend = make_scripted(["Score: 9", "Score: 3"])
    assert judge_score("q", "pred", "ref", backend, registry) == 3


def test_judge_leading_integer_with_rationale(registry):
    backend = make_scripted(["Score: 4 because the answer is nearly complete"])
    assert judge_score("q", "pred", "ref", backend, registry) == 4


def test_judge_gives_up_after_retries(registry):
    backend = make_scripted(["nope", "still nope", "words only"])
    with pytest.raises(JudgeError):
        judge_score("q", "pred", "ref", backend, registry, max_retries=2)


# ---------------------------------------------------------------------------
# short answer extraction


def test_extract_short_answer(registry):
    backend = make_scripted(["U.S. Route 20A"])
    short = extract_short_answer(data.RUSSERT_QUESTION, data.RUSSERT_ANSWER,
                                 backend, registry)
    assert short == "U.S. Route 20A"
    prompt = backend.transcript[0].messages[0].content
    assert data.RUSSERT_ANSWER in prompt


def test_extract_short_answer_rejects_empty(registry):
    backend = make_scripted(["unused"])
    with pytest.raises(ValueError):
        extract_short_answer("q", "   ", backend, registry)


# ---------------------------------------------------------------------------
# dataset loading


def test_load_qa_dataset(tmp_path):
    path = write_jsonl(tmp_path / "d.jsonl", [
        {"id": "1", "question": "Q1", "answers": ["a"]},
        {"id": "2", "question": "Q2", "answers": ["b", "c"],
         "gold_passages": ["p1"]},
    ])
    examples = load_qa_dataset(path)
    assert len(examples) == 2
    assert examples[1].gold_answers == ("b", "c")
    assert examples[1].gold_passages == ("p1",)
    assert examples[0].gold_passages is None


def test_example_requires_gold_answers():
    with pytest.raises(ValueError):
        QAExample(id="x", question="q", gold_answers=())


# ---------------------------------------------------------------------------
# benchmark runner


def _zero_search_script(answer: str) -> list[str]:
    return [terminal_turn(), answer]


def _examples():
    return [
        QAExample(id="e1", question="Q1", gold_answers=("alpha beta",)),
        QAExample(id="e2", question="Q2", gold_answers=("alpha beta",)),
        QAExample(id="e3", question="Q3", gold_answers=("alpha",)),
    ]


def test_benchmark_means_match_hand_computation(toy_index):
    script = (_zero_search_script("alpha beta")
              + _zero_search_script("alpha")
              + _zero_search_script("gamma delta"))
    backend = make_scripted(script)
    report = run_benchmark(_examples(), AgentConfig(top_k=2), backend,
                           index=toy_index)
    assert report.n_examples == 3
    assert report.n_errors == 0
    assert report.aggregates["em"] == pytest.approx(1 / 3)
    assert report.aggregates["f1"] == pytest.approx((1 + 2 / 3 + 0) / 3)
    assert report.aggregates["acc"] == pytest.approx(1 / 3)
    assert report.aggregates["steps"] == pytest.approx(1.0)


def test_benchmark_sample_limit_first_by_id(toy_index):
    script = _zero_search_script("x") + _zero_search_script("y")
    backend = make_scripted(script)
    report = run_benchmark(_examples(), AgentConfig(top_k=2), backend,
                           index=toy_index, sample_limit=2)
    assert [row.id for row in report.rows] == ["e1", "e2"]


def test_benchmark_average_steps_accounting(toy_index):
    # search counts 1, 2, 3 -> steps 2, 3, 4 -> mean 3.0
    script = []
    for count in (1, 2, 3):
        for i in range(count):
            script.append(search_turn(f"t{i}", f"Antichrist query {count}-{i}"))
            script.append(f"evidence {count}-{i}")
        script.append(terminal_turn())
        script.append("answer")
    backend = make_scripted(script)
    report = run_benchmark(_examples(), AgentConfig(top_k=2), backend,
                           index=toy_index)
    assert [row.steps for row in report.rows] == [2, 3, 4]
    assert report.aggregates["steps"] == pytest.approx(3.0)


def test_benchmark_oracle_mode(toy_corpus):
    examples = [
        QAExample(id="o1", question="Q about the highway",
                  gold_answers=("U.S. Route 20A",),
                  gold_passages=("russert",)),
    ]
    backend = make_scripted([
        search_turn("look", "anything at all"),
        "evidence from gold passage",
        terminal_turn(),
        "U.S. Route 20A",
    ])
    report = run_benchmark(examples, AgentConfig(top_k=2), backend,
                           corpus=toy_corpus, oracle=True)
    assert report.n_errors == 0
    assert report.rows[0].scores["em"] == 1
    # the reflector saw exactly the gold passage, not a search result
    reflector_prompt = backend.transcript[1].messages[0].content
    assert data.RUSSERT_EVIDENCE in reflector_prompt


def test_benchmark_oracle_requires_gold_passages(toy_corpus):
    with pytest.raises(ValueError, match="gold passages"):
        run_benchmark(_examples(), AgentConfig(), make_scripted(["x"]),
                      corpus=toy_corpus, oracle=True)


def test_benchmark_isolates_example_failures(toy_index):
    # script covers only the first example; the second exhausts it
    backend = make_scripted(_zero_search_script("alpha beta"))
    report = run_benchmark(_examples()[:2], AgentConfig(top_k=2), backend,
                           index=toy_index)
    assert report.n_examples == 2
    assert report.n_errors == 1
    assert report.rows[0].error is None
    assert report.rows[1].error is not None
    # aggregates computed over the surviving row only
    assert report.aggregates["em"] == 1.0


def test_benchmark_judge_and_extraction_adapters(toy_index):
    backend = make_scripted(_zero_search_script(data.RUSSERT_ANSWER))
    judge = make_scripted(["Score: 4"])
    extractor = make_scripted(["U.S. Route 20A"])
    examples = [QAExample(id="j1", question=data.RUSSERT_QUESTION,
                          gold_answers=("U.S. Route 20A",))]
    report = run_benchmark(examples, AgentConfig(top_k=2), backend,
                           index=toy_index,
                           metric_names=("em", "f1", "acc", "rouge_l",
                                         "bleu", "judge"),
                           judge_backend=judge, extract_backend=extractor)
    row = report.rows[0]
    assert row.short_answer == "U.S. Route 20A"
    assert row.scores["em"] == 1
    assert row.scores["judge"] == 4
    assert 0 < row.scores["rouge_l"] <= 1
    assert 0 < row.scores["bleu"] <= 1


def test_judge_failure_excluded_from_aggregate_with_count(toy_index):
    backend = make_scripted(_zero_search_script("alpha beta")
                            + _zero_search_script("alpha beta"))
    judge = make_scripted(["Score: 5", "junk", "junk", "junk"])
    examples = _examples()[:2]
    report = run_benchmark(examples, AgentConfig(top_k=2), backend,
                           index=toy_index, metric_names=("em", "judge"),
                           judge_backend=judge)
    assert report.n_judge_errors == 1
    assert report.aggregates["judge"] == 5.0


def test_report_aggregates_recomputable_from_rows(toy_index):
    script = (_zero_search_script("alpha beta")
              + _zero_search_script("alpha")
              + _zero_search_script("gamma delta"))
    backend = make_scripted(script)
    report = run_benchmark(_examples(), AgentConfig(top_k=2), backend,
                           index=toy_index)
    payload = report_to_dict(report)
    for name in ("em", "f1", "acc"):
        values = [row["scores"][name] for row in payload["rows"]
                  if row["error"] is None]
        assert payload["aggregates"][name] == pytest.approx(
            sum(values) / len(values))


def test_render_report_table(toy_index):
    backend = make_scripted(_zero_search_script("alpha beta"))
    report = run_benchmark(_examples()[:1], AgentConfig(top_k=2), backend,
                           index=toy_index)
    table = render_report_table(report)
    lines = table.splitlines()
    assert lines[0].split() == ["id", "em", "f1", "acc", "steps"]
    assert lines[2].startswith("e1")
    assert lines[-1].startswith("mean")


def test_unknown_metric_rejected(toy_index):
    with pytest.raises(ValueError, match="unknown metrics"):
        run_benchmark(_examples(), AgentConfig(), make_scripted(["x"]),
                      index=toy_index, metric_names=("em", "wer"))
