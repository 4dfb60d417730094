#!/usr/bin/env python3
"""Reference BLEU-n / ROUGE-L values for the metric golden file.

Implements the textbook definitions directly (clipped modified n-gram
precision with uniform weights and the closest-length brevity penalty;
LCS F-measure with beta = 1.2) using exact fractions for the count
arithmetic, so the numbers are an independent check on the Rust
implementation rather than a copy of it.
"""

import json
import math
import re
from collections import Counter
from fractions import Fraction


def tokens(s):
    return re.findall(r"[a-z0-9]+", s.lower())


def ngrams(toks, n):
    return Counter(tuple(toks[i : i + n]) for i in range(len(toks) - n + 1))


def bleu(candidate, references, n):
    cand = tokens(candidate)
    refs = [tokens(r) for r in references]
    if not cand:
        return 0.0
    c = len(cand)
    r = min((len(t) for t in refs), key=lambda L: (abs(L - c), L))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    log_sum = 0.0
    for order in range(1, n + 1):
        cand_counts = ngrams(cand, order)
        total = sum(cand_counts.values())
        if total == 0:
            return 0.0
        clipped = 0
        for gram, count in cand_counts.items():
            best = max(ngrams(t, order).get(gram, 0) for t in refs)
            clipped += min(count, best)
        if clipped == 0:
            return 0.0
        log_sum += math.log(Fraction(clipped, total))
    return bp * math.exp(log_sum / n)


def lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            table[i + 1][j + 1] = (
                table[i][j] + 1 if x == y else max(table[i][j + 1], table[i + 1][j])
            )
    return table[len(a)][len(b)]


def rouge_l(candidate, references, beta=1.2):
    cand = tokens(candidate)
    if not cand:
        return 0.0
    best = 0.0
    for ref in references:
        r_toks = tokens(ref)
        if not r_toks:
            continue
        l = lcs(cand, r_toks)
        recall = Fraction(l, len(r_toks))
        precision = Fraction(l, len(cand))
        denom = recall + beta * beta * precision
        if denom > 0:
            best = max(best, float((1 + beta * beta) * recall * precision / denom))
    return best


CASES = [
    ("the cat sat", ["the cat sat"]),
    ("the cat", ["the cat sat"]),
    ("dog ran", ["the cat sat"]),
    ("the the the", ["the cat"]),
    ("the the cat the", ["the the cat"]),
    ("a b c", ["a b", "a b c d"]),
    ("the cat", ["the", "cat cat"]),
    ("the cat sat on the mat", ["the cat sat"]),
    ("red", ["red"]),
    ("red", ["blue"]),
    ("The CAT, sat!", ["the cat sat"]),
    ("", ["anything"]),
    ("a man is riding a horse on a beach", ["a man rides a horse on the beach"]),
    ("the quick brown fox", ["the quick brown fox jumps", "quick brown fox"]),
    ("aaa aaa", ["aaa aaa aaa aaa"]),
    ("what is next to the table", ["what is next to the chair"]),
    ("sat cat the", ["the cat sat"]),
    ("the cat sat on", ["the cat sat on the mat"]),
    ("3 red chairs", ["3 red chairs"]),
    ("red red red red", ["red red"]),
]


def main():
    out = []
    for candidate, references in CASES:
        out.append(
            {
                "candidate": candidate,
                "references": references,
                "bleu": {str(n): bleu(candidate, references, n) for n in range(1, 5)},
                "rouge_l": rouge_l(candidate, references),
            }
        )
    body = json.dumps(out, indent=2) + "\n"
    path = "crates/hcn/tests/data/metric_golden.json"
    with open(path, "w") as fh:
        fh.write(body)
    print(f"wrote {len(out)} cases to {path}")


if __name__ == "__main__":
    main()
