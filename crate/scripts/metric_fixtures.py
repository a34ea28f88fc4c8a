"""Regenerates the metric oracle fixtures under crates/core/tests/fixtures.

Reference values come from implementations independent of the Rust code:
NLTK's BLEU building blocks (modified_precision, brevity_penalty,
SmoothingFunction.method1), NLTK's METEOR with an empty WordNet, NLTK's
PorterStemmer, and a plain Python LCS.

    python3 scripts/metric_fixtures.py
"""

import json
import random
from fractions import Fraction
from pathlib import Path

import nltk
from nltk.stem.porter import PorterStemmer
from nltk.translate.bleu_score import SmoothingFunction, brevity_penalty, closest_ref_length, modified_precision
from nltk.translate.meteor_score import single_meteor_score

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"
SEED = 20240917
PAIRS = 50

WORDS = [
    "transfer", "transfers", "transferred", "transferring", "token", "tokens",
    "owner", "owners", "ownership", "balance", "balances", "the", "a", "of",
    "to", "from", "sender", "address", "addresses", "allow", "allows",
    "allowed", "allowance", "approve", "approved", "approval", "spend",
    "spending", "contract", "contracts", "get", "gets", "getting", "set",
    "sets", "current", "value", "values", "check", "checks", "checked",
    "when", "only", "paused", "pause", "pausing", "crowdsale", "ended",
    "end", "ending", "function", "functions", "modifier", "called", "call",
    "calls", "returns", "return", "returned", "amount", "amounts",
]


class NoWordNet:
    """Stands in for the WordNet reader so only exact and stem stages match."""

    @staticmethod
    def synsets(word):
        return []


def composite_sentence_bleu(cand, ref):
    smooth = SmoothingFunction(epsilon=0.1).method1
    precisions = [modified_precision([ref], cand, n) for n in range(1, 5)]
    smoothed = smooth(precisions)
    bp = brevity_penalty(closest_ref_length([ref], len(cand)), len(cand))
    return bp * sum(float(p) for p in smoothed) / 4.0


def composite_corpus_bleu(pairs):
    num = [0] * 4
    den = [0] * 4
    c_len = r_len = 0
    for cand, ref in pairs:
        for n in range(1, 5):
            p = modified_precision([ref], cand, n)
            num[n - 1] += p.numerator
            den[n - 1] += p.denominator
        c_len += len(cand)
        r_len += closest_ref_length([ref], len(cand))
    mean = sum(float(Fraction(num[i], max(den[i], 1))) for i in range(4)) / 4.0
    return brevity_penalty(r_len, c_len) * mean


def lcs(a, b):
    best = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                best[i][j] = best[i - 1][j - 1] + 1
            else:
                best[i][j] = max(best[i - 1][j], best[i][j - 1])
    return best[-1][-1]


def rouge_l_f1(cand, ref):
    hit = lcs(cand, ref)
    if hit == 0:
        return 0.0
    p, r = hit / len(cand), hit / len(ref)
    return 2 * p * r / (p + r)


def meteor(cand, ref):
    return single_meteor_score(ref, cand, wordnet=NoWordNet())


def random_pair(rng):
    ref = [rng.choice(WORDS) for _ in range(rng.randint(1, 14))]
    kind = rng.random()
    if kind < 0.3:
        cand = list(ref)
        for _ in range(rng.randint(0, 3)):
            i = rng.randrange(len(cand))
            cand[i] = rng.choice(WORDS)
    elif kind < 0.5:
        cand = ref[rng.randint(0, len(ref) - 1):] + [rng.choice(WORDS) for _ in range(rng.randint(0, 3))]
    else:
        cand = [rng.choice(WORDS) for _ in range(rng.randint(1, 14))]
    if rng.random() < 0.2:
        cand = [w.capitalize() if rng.random() < 0.5 else w for w in cand]
    return cand, ref


def main():
    rng = random.Random(SEED)
    pairs = [random_pair(rng) for _ in range(PAIRS)]
    rows = [
        {
            "candidate": c,
            "reference": r,
            "sentence_bleu": composite_sentence_bleu(c, r),
            "rouge_lcs_f1": rouge_l_f1(c, r),
            "meteor": meteor(c, r),
        }
        for c, r in pairs
    ]
    doc = {
        "generator": "scripts/metric_fixtures.py",
        "nltk_version": nltk.__version__,
        "seed": SEED,
        "corpus_bleu": composite_corpus_bleu(pairs),
        "pairs": rows,
    }
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "metric_pairs.json").write_text(json.dumps(doc, indent=1) + "\n")

    stemmer = PorterStemmer()
    words = sorted(set(WORDS) | {
        "caresses", "ponies", "ties", "caress", "cats", "feed", "agreed",
        "plastered", "bled", "motoring", "sing", "conflated", "troubled",
        "sized", "hopping", "tanned", "falling", "hissing", "fizzed",
        "failing", "filing", "happy", "sky", "relational", "conditional",
        "rational", "valenci", "hesitanci", "digitizer", "conformabli",
        "radicalli", "differentli", "vileli", "analogousli", "vietnamization",
        "predication", "operator", "feudalism", "decisiveness", "hopefulness",
        "callousness", "formaliti", "sensitiviti", "sensibiliti", "triplicate",
        "formative", "formalize", "electriciti", "electrical", "hopeful",
        "goodness", "revival", "allowance", "inference", "airliner",
        "gyroscopic", "adjustable", "defensible", "irritant", "replacement",
        "adjustment", "dependent", "adoption", "homologou", "communism",
        "activate", "angulariti", "homologous", "effective", "bowdlerize",
        "probate", "rate", "cease", "controll", "roll", "generously",
        "dying", "lying", "tying", "news", "innings", "skies", "proceed",
        "exceed", "succeed", "ownership", "crowdsale", "withdrawal",
    })
    stems = {w: stemmer.stem(w) for w in words}
    (OUT / "porter_stems.json").write_text(json.dumps(stems, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
