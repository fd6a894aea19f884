"""Independent brute-force oracle for majority-vote accuracy.

Enumerates every length-B answer sequence (small B) or every count vector
(larger B) and applies the first-occurrence tie rule directly. Values printed
here are frozen into the C++ tests.
"""
import itertools
import math
import sys
from fractions import Fraction


def vote_winner(seq):
    counts = {}
    first = {}
    for i, a in enumerate(seq):
        counts[a] = counts.get(a, 0) + 1
        first.setdefault(a, i)
    best = max(counts.values())
    tied = [a for a in counts if counts[a] == best]
    return min(tied, key=lambda a: first[a])


def accuracy_by_sequences(probs, correct, B):
    """Sums over all K^B sequences; exact for small B."""
    answers = list(probs)
    total = 0.0
    for seq in itertools.product(answers, repeat=B):
        p = 1.0
        for a in seq:
            p *= probs[a]
        if p and vote_winner(seq) == correct:
            total += p
    return total


def accuracy_by_counts(probs, correct, B):
    """Count-vector sum; ties split 1/|tied| by exchangeability."""
    answers = [a for a in probs if probs[a] > 0]
    if correct not in answers:
        return 0.0
    K = len(answers)
    total = 0.0

    def rec(i, remaining, counts):
        nonlocal total
        if i == K - 1:
            counts = counts + [remaining]
            best = max(counts)
            ci = answers.index(correct)
            if counts[ci] != best:
                return
            tied = sum(1 for c in counts if c == best)
            logp = math.lgamma(B + 1)
            for a, c in zip(answers, counts):
                logp -= math.lgamma(c + 1)
                logp += c * math.log(probs[a])
            total += math.exp(logp) / tied
            return
        for c in range(remaining + 1):
            rec(i + 1, remaining - c, counts + [c])

    rec(0, B, [])
    return total


if __name__ == "__main__":
    spec_bias = {"4": 0.40, "2": 0.45, "other": 0.15}
    # cross-check the two routes on small B
    for B in range(1, 8):
        s = accuracy_by_sequences(spec_bias, "4", B)
        c = accuracy_by_counts(spec_bias, "4", B)
        assert abs(s - c) < 1e-12, (B, s, c)
    print("routes agree for B<=7")
    for name, spec, correct in [
        ("bias", spec_bias, "4"),
        ("two_40_60", {"4": 0.4, "2": 0.6}, "4"),
        ("two_55_45", {"4": 0.55, "2": 0.45}, "4"),
        ("half", {"a": 0.5, "b": 0.5}, "a"),
        ("refine_base", {"4": 0.3, "2": 0.4, "7": 0.3}, "4"),
    ]:
        print(name)
        for B in [1, 2, 3, 4, 5, 9, 15, 31, 51, 201]:
            print(f"  B={B:4d} acc={accuracy_by_counts(spec, correct, B):.15f}")
    print("odd-B curve for bias spec:")
    for B in range(1, 32, 2):
        print(f"  B={B:2d} {accuracy_by_counts(spec_bias, '4', B):.15f}")
    p = 0.3
    print("bon perfect scorer B=30 p=0.3:", 1 - (1 - p) ** 30)
    print("3D oracle judge final-turn p=0.6 B=5:", 1 - 0.4 ** 5)
