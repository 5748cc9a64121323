"""Answer-quality metrics: EM, token F1, containment accuracy, ROUGE-L, BLEU.

Short-answer metrics follow the conventional SQuAD normalization (lowercase,
strip punctuation, drop articles, collapse whitespace) and take the max over
multiple gold answers. ROUGE-L and BLEU operate on lowercased,
punctuation-stripped tokens and are meant for long-form answers.
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter

_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    text = text.lower()
    text = "".join(ch for ch in text if ch not in string.punctuation)
    text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


def _require_golds(golds: list[str]) -> None:
    if not golds:
        raise ValueError("golds must be non-empty")


def exact_match(pred: str, golds: list[str]) -> int:
    """1 iff the normalized prediction equals any normalized gold."""
    _require_golds(golds)
    norm_pred = normalize_answer(pred)
    return int(any(norm_pred == normalize_answer(g) for g in golds))


def token_f1(pred: str, golds: list[str]) -> float:
    """Max over golds of the token-multiset F1 between prediction and gold."""
    _require_golds(golds)
    return max(_f1_single(pred, g) for g in golds)


def _f1_single(pred: str, gold: str) -> float:
    pred_tokens = normalize_answer(pred).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = Counter(pred_tokens) & Counter(gold_tokens)
    num_same = sum(common.values())
    if num_same == 0:
        return 0.0
    precision = num_same / len(pred_tokens)
    recall = num_same / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def accuracy_contains(pred: str, golds: list[str]) -> int:
    """1 iff any normalized gold is a substring of the normalized prediction."""
    _require_golds(golds)
    norm_pred = normalize_answer(pred)
    return int(any(normalize_answer(g) in norm_pred for g in golds))


def metric_tokens(text: str) -> list[str]:
    """Lowercased, punctuation-stripped tokens for the long-form metrics."""
    return _WORD_RE.findall(text.lower())


def _lcs_length(a: list[str], b: list[str]) -> int:
    # Standard O(n*m) DP over a rolling row.
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                curr.append(prev[j - 1] + 1)
            else:
                curr.append(max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


def rouge_l(pred: str, ref: str) -> float:
    """LCS-based F-measure (beta=1) between prediction and reference."""
    pred_tokens = metric_tokens(pred)
    ref_tokens = metric_tokens(ref)
    if not pred_tokens or not ref_tokens:
        return 0.0
    lcs = _lcs_length(pred_tokens, ref_tokens)
    if lcs == 0:
        return 0.0
    precision = lcs / len(pred_tokens)
    recall = lcs / len(ref_tokens)
    return 2 * precision * recall / (precision + recall)


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(pred: str, ref: str, max_n: int = 4) -> float:
    """Sentence BLEU: clipped n-gram precisions (uniform weights) times a
    brevity penalty.

    A zero clipped precision at n=1 makes the score 0; at n>=2 it is smoothed
    to 1/(2*len(pred)) so short sentences do not collapse the geometric mean.
    """
    pred_tokens = metric_tokens(pred)
    ref_tokens = metric_tokens(ref)
    if not pred_tokens or not ref_tokens:
        return 0.0

    log_sum = 0.0
    for n in range(1, max_n + 1):
        pred_ngrams = _ngram_counts(pred_tokens, n)
        ref_ngrams = _ngram_counts(ref_tokens, n)
        total = sum(pred_ngrams.values())
        clipped = sum(min(count, ref_ngrams[gram])
                      for gram, count in pred_ngrams.items())
        if total == 0 or clipped == 0:
            if n == 1:
                return 0.0
            precision = 1.0 / (2.0 * len(pred_tokens))
        else:
            precision = clipped / total
        log_sum += math.log(precision) / max_n

    if len(pred_tokens) < len(ref_tokens):
        brevity = math.exp(1.0 - len(ref_tokens) / len(pred_tokens))
    else:
        brevity = 1.0
    return brevity * math.exp(log_sum)
