#!/usr/bin/env python3
"""Generates the bundled desk corpus and the Zipfian test corpus.

Both are deterministic functions of the seed, so regenerating them is safe.
"""
import argparse
import random

SUBJECTS = ["the miller", "a traveller", "the old captain", "her brother", "the young clerk", "my neighbour",
            "the schoolmaster", "a stranger", "the widow", "the doctor", "his daughter", "the farmer",
            "our landlord", "the soldier", "a fisherman", "the vicar"]
VERBS = ["walked", "spoke", "waited", "wrote", "looked", "listened", "returned", "laughed", "argued", "slept",
         "worked", "travelled", "wondered", "sang", "rested", "hurried"]
OBJECTS = ["a letter", "the river", "an old book", "the garden gate", "a small boat", "the morning paper",
           "the long road", "a silver coin", "the harbour", "the winter fire", "a basket of apples", "the church bell"]
PLACES = ["by the mill", "near the harbour", "in the quiet village", "under the old oak", "at the market",
          "across the fields", "behind the inn", "on the hill", "along the shore", "in the town square"]
TIMES = ["in the morning", "after supper", "before the storm", "on sunday", "at dawn", "late in the evening",
         "during the fair", "in early spring", "when the rain stopped", "that winter"]
LINKS = ["and then", "but soon", "so", "while", "because", "although", "until", "and"]
TRANSITIVE = ["found", "carried", "read", "mended", "watched", "sold", "opened", "remembered"]


def clause(rng):
    form = rng.randrange(4)
    if form == 0:
        return f"{rng.choice(SUBJECTS)} {rng.choice(VERBS)} {rng.choice(PLACES)}"
    if form == 1:
        return f"{rng.choice(SUBJECTS)} {rng.choice(TRANSITIVE)} {rng.choice(OBJECTS)}"
    if form == 2:
        return f"{rng.choice(TIMES)} {rng.choice(SUBJECTS)} {rng.choice(VERBS)}"
    return f"{rng.choice(SUBJECTS)} {rng.choice(TRANSITIVE)} {rng.choice(OBJECTS)} {rng.choice(PLACES)}"


def sentence(rng):
    text = clause(rng)
    if rng.random() < 0.5:
        text += ("," if rng.random() < 0.5 else "") + f" {rng.choice(LINKS)} {clause(rng)}"
    text = text[0].upper() + text[1:]
    return text + rng.choice([".", ".", ".", "!", "?", ";"])


def desk_corpus(size, seed):
    rng = random.Random(seed)
    paragraphs, n = [], 0
    while n < size:
        para = " ".join(sentence(rng) for _ in range(rng.randint(3, 8)))
        paragraphs.append(para)
        n += len(para) + 2
    return "\n\n".join(paragraphs)[:size] + "\n"


def zipf_corpus(size, vocab, seed):
    """Symbols drawn i.i.d. with probability proportional to 1/rank."""
    rng = random.Random(seed)
    symbols = [chr(0x21 + i) for i in range(vocab)]
    weights = [1.0 / (i + 1) for i in range(vocab)]
    return "".join(rng.choices(symbols, weights, k=size))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kind", choices=["desk", "zipf"], default="desk")
    ap.add_argument("--size", type=int, default=160_000)
    ap.add_argument("--vocab", type=int, default=64)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    text = desk_corpus(args.size, args.seed) if args.kind == "desk" else zipf_corpus(args.size, args.vocab, args.seed)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(text)


if __name__ == "__main__":
    main()
