"""The synthetic trajectory forge, end to end with a scripted teacher.

Each sampled main passage flows through supporting-passage selection,
question generation, step-by-step solution annotation, and judge
verification; kept items export three conversational training records
(planner / final answer / reflector) whose loss masks are true exactly on
the assistant turns.

    python demos/03_forge_pipeline.py
"""

import json
from pathlib import Path
from tempfile import TemporaryDirectory

from ragloop import ForgeConfig, ingest_corpus, make_scripted, masked_loss, run_forge

CORPUS_ROWS = [
    {"id": "bridge", "title": "Forth Bridge",
     "text": "The Forth Bridge is a cantilever railway bridge across the "
             "Firth of Forth in the east of Scotland, completed in 1890. "
             "It was the first major structure in Britain built of steel.",
     "links": ["steel"]},
    {"id": "steel", "title": "Steel",
     "text": "Steel is an alloy of iron and carbon with improved strength "
             "compared to other forms of iron, widely used in construction "
             "from the late nineteenth century onward."},
]

TEACHER_SCRIPT = [
    # which linked articles support the main passage
    "steel",
    # question + long-form reference answer
    "Question: How did the material used for the Forth Bridge reflect "
    "construction trends of its era?\n"
    "Answer: The Forth Bridge, completed in 1890, was the first major "
    "British structure built of steel, reflecting the late nineteenth "
    "century shift toward steel construction for its superior strength.",
    # one search step: thought + query, then evidence extraction
    "### Thought: Establish what material the bridge used and when steel "
    "became a common construction material.\n"
    "### Action - Search Input: Forth Bridge steel construction era",
    "The Forth Bridge (completed 1890) was the first major British "
    "structure built of steel, an iron-carbon alloy adopted widely in "
    "construction in the late nineteenth century.",
    # terminal turn with the final answer
    "### Thought: I have the final answer\n"
    "### Action - Final Answer: The bridge's steel construction, a first "
    "for a major British structure, embodied the era's move from iron to "
    "stronger steel.",
    # judge verification
    "Score: 5",
]


def main():
    with TemporaryDirectory() as tmp:
        corpus_path = Path(tmp) / "corpus.jsonl"
        with open(corpus_path, "w", encoding="utf-8") as fh:
            for row in CORPUS_ROWS:
                fh.write(json.dumps(row) + "\n")
        corpus = ingest_corpus(corpus_path)

        out_dir = Path(tmp) / "forge_out"
        report = run_forge(corpus, make_scripted(TEACHER_SCRIPT), 1,
                           ForgeConfig(seed=0, min_passage_chars=50,
                                       train_articles=("bridge",)),
                           out_dir=out_dir)
        print(f"generated={report.generated} kept={report.kept} "
              f"records={report.records}\n")

        records = [json.loads(line) for line in
                   (out_dir / "records_train.jsonl").read_text().splitlines()]
        for record in records:
            n_loss = sum(record["response_mask"])
            print(f"{record['kind']:<13} {len(record['turns'])} turns, "
                  f"{n_loss} loss-bearing")
            for turn, masked in zip(record["turns"], record["response_mask"]):
                flag = "*" if masked else " "
                preview = turn["content"].replace("\n", " ")[:60]
                print(f"  {flag} {turn['role']:<9} {preview}")
            print()

        # The per-turn mask drives the training loss: only starred (assistant)
        # tokens would contribute.
        logprobs = [-0.5, -1.0, -2.0]
        mask = [False, True, True]
        print(f"masked_loss({logprobs}, {mask}) = {masked_loss(logprobs, mask)}")


if __name__ == "__main__":
    main()
