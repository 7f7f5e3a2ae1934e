#!/usr/bin/env python3
"""Brute-force caption metric values for random small corpora.

Writes tests/data/metrics_oracle.json. Every metric is computed the slow,
direct way: n-gram tuples in Counters, memoized LCS recursion, TF-IDF
dictionaries, and exhaustive enumeration of METEOR alignments.
"""
import json
import math
import random
import sys
from collections import Counter
from functools import lru_cache
from pathlib import Path

from nltk.stem.porter import PorterStemmer

STEMMER = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)

POOL = ["the", "a", "red", "blue", "house", "houses", "river", "rivers", "run", "running", "runs", "fly",
        "flies", "green", "field", "fields", "connect", "connected", "connection", "near", "two", "three",
        "big", "bigger"]


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(corpus, max_n=4):
    c_len = sum(len(c) for c, _ in corpus)
    r_len = 0
    for c, refs in corpus:
        r_len += min((abs(len(r) - len(c)), len(r)) for r in refs)[1]
    precisions = []
    for n in range(1, max_n + 1):
        hit = total = 0
        for c, refs in corpus:
            cand = ngrams(c, n)
            for g, k in cand.items():
                hit += min(k, max(ngrams(r, n)[g] for r in refs))
            total += sum(cand.values())
        precisions.append(hit / total if total else 0.0)
    out = []
    for n in range(1, max_n + 1):
        ps = precisions[:n]
        if c_len == 0 or min(ps) == 0:
            out.append(0.0)
            continue
        bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
        out.append(bp * math.exp(sum(math.log(p) for p in ps) / n))
    return out


def lcs(a, b):
    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))
    return go(0, 0)


def rouge_l(corpus, beta=1.2):
    total = 0.0
    for c, refs in corpus:
        best = 0.0
        for r in refs:
            m = lcs(tuple(c), tuple(r))
            if m == 0:
                continue
            rec, prec = m / len(r), m / len(c)
            best = max(best, (1 + beta ** 2) * rec * prec / (rec + beta ** 2 * prec))
        total += best
    return total / len(corpus)


def cider_d(corpus, sigma=6.0):
    n_images = len(corpus)
    df = Counter()
    for _, refs in corpus:
        seen = set()
        for r in refs:
            for n in range(1, 5):
                seen.update(ngrams(r, n).keys())
        df.update(seen)
    log_images = math.log(n_images)

    def vec(tokens, n):
        return {g: k * (log_images - math.log(max(1.0, df[g]))) for g, k in ngrams(tokens, n).items()}

    total = 0.0
    for c, refs in corpus:
        score = 0.0
        for n in range(1, 5):
            vc = vec(c, n)
            nc = math.sqrt(sum(v * v for v in vc.values()))
            for r in refs:
                vr = vec(r, n)
                nr = math.sqrt(sum(v * v for v in vr.values()))
                dot = sum(min(v, vr.get(g, 0.0)) * vr.get(g, 0.0) for g, v in vc.items())
                val = dot / (nc * nr) if nc != 0 and nr != 0 else 0.0
                score += val * math.exp(-((len(c) - len(r)) ** 2) / (2 * sigma ** 2))
        total += score / 4 / len(refs) * 10.0
    return total / n_images


def meteor_pair(c, r):
    """Exhaustive search over one-to-one alignments; best by (exact, total, -chunks)."""
    stem_c = [STEMMER.stem(w) for w in c]
    stem_r = [STEMMER.stem(w) for w in r]
    best = None

    def walk(i, used, pairs):
        nonlocal best
        if i == len(c):
            exact = sum(1 for a, b in pairs if c[a] == r[b])
            chunks = 0
            prev = None
            for a, b in pairs:
                if prev is None or prev != (a - 1, b - 1):
                    chunks += 1
                prev = (a, b)
            key = (exact, len(pairs), -chunks)
            if best is None or key > best:
                best = key
            return
        walk(i + 1, used, pairs)
        for j in range(len(r)):
            if j not in used and (c[i] == r[j] or stem_c[i] == stem_r[j]):
                walk(i + 1, used | {j}, pairs + [(i, j)])

    walk(0, frozenset(), [])
    _, m, neg_chunks = best
    if m == 0:
        return 0.0
    p, rec = m / len(c), m / len(r)
    f = p * rec / (0.9 * p + 0.1 * rec)
    return f * (1 - 0.5 * (-neg_chunks / m) ** 3)


def meteor(corpus):
    return sum(max(meteor_pair(c, r) for r in refs) for c, refs in corpus) / len(corpus)


def random_caption(rng, base=None):
    if base is not None and rng.random() < 0.6:
        out = list(base)
        for _ in range(rng.randint(0, 3)):
            op = rng.random()
            if op < 0.4 and out:
                out[rng.randrange(len(out))] = rng.choice(POOL)
            elif op < 0.7 and len(out) > 1:
                del out[rng.randrange(len(out))]
            elif len(out) < 10:
                out.insert(rng.randrange(len(out) + 1), rng.choice(POOL))
        return out
    return [rng.choice(POOL) for _ in range(rng.randint(1, 10))]


def main():
    rng = random.Random(20240611)
    cases = []
    for _ in range(50):
        corpus = []
        for _ in range(rng.randint(1, 6)):
            refs = [random_caption(rng) for _ in range(rng.randint(1, 4))]
            cand = random_caption(rng, rng.choice(refs))
            corpus.append((cand, refs))
        cases.append({
            "candidates": [c for c, _ in corpus],
            "references": [refs for _, refs in corpus],
            "bleu": bleu(corpus),
            "rouge_l": rouge_l(corpus),
            "cider_d": cider_d(corpus),
            "meteor_lite": meteor(corpus),
        })
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[2] / "tests/data/metrics_oracle.json"
    out.write_text(json.dumps({"cases": cases}, indent=1) + "\n")
    # Hand examples, printed for cross-checking.
    print("bleu1 'the the the' vs 'the cat':", bleu([("the the the".split(), ["the cat".split()])])[0])
    print("rouge 'a b c d' vs 'a c d':", rouge_l([("a b c d".split(), ["a c d".split()])]))
    print("meteor identical 3 tokens:", meteor([("a b c".split(), ["a b c".split()])]))


if __name__ == "__main__":
    main()
