#!/usr/bin/env python3
"""Regenerates data/toy_embeddings.txt and data/toy_lexicon.tsv.

Vectors are seeded and deterministic. Base object words are kept mutually
below the 0.5 alignment threshold; a handful of near-synonym pairs get a
fixed cosine so cross-modal matching has known answers.
"""
import numpy as np
from pathlib import Path

DIM = 50
SEED = 20210712

CATEGORIES = {
    "object": {
        "animal": "dog cat horse bird sheep cow elephant giraffe zebra bear",
        "person": "man woman child boy girl player",
        "vehicle": "car bike boat bus train plane truck motorcycle",
        "nature": "tree sky grass water mountain river beach sand snow cloud sun",
        "household": "chair table cup bed couch window door wall floor clock bottle plate book phone bench",
        "food": "pizza cake banana apple sandwich",
        "thing": "ball kite umbrella sign fence shirt hat bag road building street sidewalk",
    },
    "attribute": {
        "color": "red blue green white black yellow brown pink purple gray",
        "size": "small big large tall short tiny vast long",
        "state": "old young wooden metal bright dark wet dry empty full open closed striped furry shiny round happy cloudy sunny busy clean dirty heavy",
    },
    "relation": {
        "spatial": "on in near under above behind beside over across along against next",
        "action": "holding holds chases riding rides wearing eating sitting standing carrying watching playing",
    },
    "other": {
        "function": "a an the of and is are to at it this that there some two three very while its his her their from by for as",
    },
}

# word -> (base word, cosine to base)
SYNONYMS = {
    "steppe": ("grass", 0.62),
    "meadow": ("grass", 0.66),
    "field": ("grass", 0.70),
    "puppy": ("dog", 0.80),
    "kitten": ("cat", 0.80),
    "pony": ("horse", 0.70),
    "person": ("man", 0.75),
    "lady": ("woman", 0.78),
    "kid": ("child", 0.85),
    "bicycle": ("bike", 0.90),
    "automobile": ("car", 0.85),
    "ocean": ("water", 0.72),
}


def unit(v):
    return v / np.linalg.norm(v)


def main():
    rng = np.random.default_rng(SEED)
    words, roles, vecs = [], [], {}
    objects = []
    for role, groups in CATEGORIES.items():
        for _, listing in groups.items():
            center = unit(rng.standard_normal(DIM))
            for w in listing.split():
                while True:
                    v = unit(0.5 * center + 0.866 * unit(rng.standard_normal(DIM)))
                    if role != "object" or all(abs(v @ vecs[o]) < 0.45 for o in objects):
                        break
                vecs[w] = v
                words.append(w)
                roles.append(role)
                if role == "object":
                    objects.append(w)
    for w, (base, cos) in SYNONYMS.items():
        b = vecs[base]
        while True:
            u = rng.standard_normal(DIM)
            u = unit(u - (u @ b) * b)
            v = cos * b + np.sqrt(1.0 - cos * cos) * u
            others = [o for o in objects if o != base]
            if all(abs(v @ vecs[o]) < 0.45 for o in others):
                break
        vecs[w] = v
        words.append(w)
        roles.append("object")

    out = Path(__file__).resolve().parent.parent / "data"
    with open(out / "toy_embeddings.txt", "w") as f:
        for w in words:
            f.write(w + " " + " ".join(f"{x:.9f}" for x in vecs[w]) + "\n")
    with open(out / "toy_lexicon.tsv", "w") as f:
        for w, r in zip(words, roles):
            f.write(f"{w}\t{r}\n")
    print(len(words), "words")


if __name__ == "__main__":
    main()
