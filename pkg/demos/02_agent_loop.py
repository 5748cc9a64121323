"""The plan -> search -> reflect loop, replayed deterministically offline.

A scripted backend stands in for the chat model, so the full loop runs
without any endpoint: the planner decides to search, retrieval runs over the
corpus, the reflector condenses the passages into evidence, and a dedicated
final-answer call aggregates everything. The second run shows the search
budget cutting a search-hungry planner short.

    python demos/02_agent_loop.py
"""

import json
from pathlib import Path
from tempfile import TemporaryDirectory

from ragloop import (AgentConfig, build_index, ingest_corpus, make_scripted,
                     render_transcript, run_agent)

CORPUS = Path(__file__).parent.parent / "data" / "mini_corpus.jsonl"


def scripted_planner():
    return make_scripted([
        # turn 1: the planner wants external knowledge
        "### Thought: I need to find which mountain is the tallest measured "
        "above sea level.\n"
        "### Action - Search Input: tallest mountain above sea level",
        # the reflector condenses the retrieved passages into evidence
        "Mount Everest is Earth's highest mountain above sea level at 8,849 "
        "metres, on the border between Nepal and China.",
        # turn 2: the evidence suffices
        "### Thought: I have the final answer",
        # the final-answer subtask aggregates the evidence
        "The tallest mountain above sea level is Mount Everest, at 8,849 "
        "metres on the Nepal-China border.",
    ])


def search_hungry_planner():
    return make_scripted([
        "### Thought: check the mountain\n### Action - Search Input: tallest mountain",
        "Everest is the tallest mountain.",
        "### Thought: check the river too\n### Action - Search Input: longest river",
        "The Nile is traditionally considered the longest river.",
        # never asked: the budget stops the loop after 2 searches
        "Everest is the tallest mountain; the Nile is the longest river.",
    ])


def main():
    index = build_index(ingest_corpus(CORPUS))

    trace = run_agent("What is the tallest mountain in the world?",
                      AgentConfig(top_k=3), scripted_planner(), index=index)
    print(render_transcript(trace))
    print(f"\n{trace.search_count} search, terminated_by={trace.terminated_by}\n")
    print("-" * 72)

    budgeted = run_agent("Tell me about mountains and rivers.",
                         AgentConfig(top_k=3, budget_k=2),
                         search_hungry_planner(), index=index)
    print(render_transcript(budgeted))
    print(f"\n{budgeted.search_count} searches, "
          f"terminated_by={budgeted.terminated_by}")

    # Traces serialize to JSON for downstream tooling.
    with TemporaryDirectory() as tmp:
        from ragloop import trace_to_dict
        path = Path(tmp) / "trace.json"
        path.write_text(json.dumps(trace_to_dict(trace), indent=2))
        print(f"\ntrace JSON: {len(path.read_bytes())} bytes")


if __name__ == "__main__":
    main()
