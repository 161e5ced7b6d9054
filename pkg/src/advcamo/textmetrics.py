"""Text similarity metrics for caption comparison.

All three metrics share one tokenizer: lowercase, runs of alphanumerics
(everything else is a separator). They are self-consistent reference
implementations, not drop-in replacements for any particular toolkit:

* ``bleu``: n-gram precision up to 4-grams with brevity penalty. Orders
  longer than the candidate are dropped from the geometric mean; an
  included order with zero matches gets add-one smoothing
  (m + 1) / (t + 1). Since every smoothed precision is at most 1/2,
  fully disjoint texts score at most ``BLEU_DISJOINT_BOUND`` = 0.5.
* ``meteor``: exact-match unigram variant. Harmonic mean weighted toward
  recall, F = 10PR / (R + 9P), times a fragmentation penalty
  0.5 (chunks / matches)^3. A single chunk (including identical texts)
  carries no penalty, so identical texts score exactly 1.0. No stemming
  or synonym matching.
* ``rouge``: ROUGE-L F1 over the longest common subsequence.
"""
from __future__ import annotations

import math
import re
from collections import Counter

from .errors import EmptyText

__all__ = ["tokenize", "bleu", "meteor", "rouge", "BLEU_DISJOINT_BOUND"]

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Each add-one smoothed precision is (0 + 1) / (t + 1) <= 1/2, so a candidate
# with no overlap at all cannot exceed this.
BLEU_DISJOINT_BOUND = 0.5


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _require_tokens(candidate: str, reference: str) -> tuple[list[str], list[str]]:
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand:
        raise EmptyText("candidate text has no tokens")
    if not ref:
        raise EmptyText("reference text has no tokens")
    return cand, ref


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    cand, ref = _require_tokens(candidate, reference)
    log_sum = 0.0
    included = 0
    for n in range(1, max_n + 1):
        total = len(cand) - n + 1
        if total <= 0:
            continue   # candidate too short for this order; drop it
        cgrams = _ngrams(cand, n)
        rgrams = _ngrams(ref, n)
        matched = sum(min(c, rgrams[g]) for g, c in cgrams.items())
        if matched == 0:
            p = 1.0 / (total + 1)          # add-one smoothing
        else:
            p = matched / total
        log_sum += math.log(p)
        included += 1
    precision = math.exp(log_sum / included)
    c, r = len(cand), len(ref)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * precision


def _align(cand: list[str], ref: list[str]) -> list[tuple[int, int]]:
    """Greedy left-to-right unigram alignment used by the chunk count."""
    used = [False] * len(ref)
    pairs = []
    for i, tok in enumerate(cand):
        for j, rtok in enumerate(ref):
            if not used[j] and rtok == tok:
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def meteor(candidate: str, reference: str) -> float:
    cand, ref = _require_tokens(candidate, reference)
    matches = sum(min(c, Counter(ref)[t]) for t, c in Counter(cand).items())
    if matches == 0:
        return 0.0
    p = matches / len(cand)
    r = matches / len(ref)
    f = 10.0 * p * r / (r + 9.0 * p)

    pairs = _align(cand, ref)
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    if chunks <= 1:
        penalty = 0.0
    else:
        penalty = 0.5 * (chunks / len(pairs)) ** 3
    return f * (1.0 - penalty)


def _lcs_len(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge(candidate: str, reference: str) -> float:
    """ROUGE-L F1; invariant to case and surrounding whitespace by
    construction of the tokenizer."""
    cand, ref = _require_tokens(candidate, reference)
    lcs = _lcs_len(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    return 2.0 * p * r / (p + r)
