"""Ingest a passage corpus, build the BM25 index, and run a few searches.

Run from the repository root:

    python demos/01_index_and_search.py
"""

from pathlib import Path
from tempfile import TemporaryDirectory

from ragloop import build_index, ingest_corpus, load_index, save_index, search

CORPUS = Path(__file__).parent.parent / "data" / "mini_corpus.jsonl"


def main():
    corpus = ingest_corpus(CORPUS)
    stats = corpus.stats
    print(f"ingested {stats.doc_count} passages, "
          f"avg length {stats.avg_doc_len:.1f} tokens\n")

    index = build_index(corpus)

    for query in ("tallest mountain", "first person on the moon",
                  "longest river in the world", "quantum entanglement"):
        result = search(index, query, top_k=3)
        print(f"query: {query!r}")
        if not result.hits:
            print("  (no passage shares a term with the query)")
        for hit in result.hits:
            passage = index.passage(hit.passage_id)
            print(f"  {hit.sparse_score:6.3f}  {passage.id:<10} {passage.title}")
        print()

    # The index persists with its tokenizer config embedded, so a reload
    # serves identical rankings.
    with TemporaryDirectory() as tmp:
        path = Path(tmp) / "mini.idx"
        save_index(index, path)
        reloaded = load_index(path, corpus=corpus)
        again = search(reloaded, "tallest mountain", top_k=3)
        assert again == search(index, "tallest mountain", top_k=3)
        print(f"saved, reloaded from {path.name}, rankings identical")


if __name__ == "__main__":
    main()
