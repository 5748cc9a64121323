"""Score agent runs over a QA dataset and print the metric report.

Uses oracle retrieval (each example's gold passages handed straight to the
agent) with a scripted backend, so the whole benchmark runs offline. Swap the
scripted backend for a RemoteBackend to evaluate a real model.

    python demos/04_benchmark.py
"""

from pathlib import Path

from ragloop import AgentConfig, ingest_corpus, load_qa_dataset, make_scripted, run_benchmark
from ragloop.evaluation import render_report_table

DATA = Path(__file__).parent.parent / "data"

# One zero-search run per example: the scripted planner answers from the gold
# passage evidence it would have seen; answers deliberately vary in quality.
ANSWERS = {
    "nq1": "Mount Everest",
    "nq2": "the Nile",
    "nq3": "It was completed in 1889.",
    "nq4": "Buzz Aldrin",          # wrong on purpose
    "nq5": "Pacific",
}


def main():
    corpus = ingest_corpus(DATA / "mini_corpus.jsonl")
    examples = load_qa_dataset(DATA / "nq_mini.jsonl")

    script = []
    for example in sorted(examples, key=lambda e: e.id):
        script.append("### Thought: I have the final answer")
        script.append(ANSWERS[example.id])
    backend = make_scripted(script)

    report = run_benchmark(examples, AgentConfig(top_k=3), backend,
                           corpus=corpus, oracle=True,
                           metric_names=("em", "f1", "acc"))
    print(render_report_table(report))
    print(f"\nconfig fingerprint: {report.config_fingerprint}")


if __name__ == "__main__":
    main()
