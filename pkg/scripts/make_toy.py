"""Regenerate the toy fixtures under src/pathformer/datasets/.

toy30: 30 entities in 5 groups of 6; relation r<k> links group k to group
k+1 (mod 5), each possible edge present with probability 0.8. About 10% of
edges are held out for validation and 10% for test, never removing a head's
last two training edges for a relation.

tiny6: a hand-written 6-entity graph used by unit tests.
"""

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "pathformer" / "datasets"


def write(path, triples):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in triples), encoding="utf-8")


def toy30(seed=7):
    rng = np.random.default_rng(seed)
    groups = [[f"e{g * 6 + k:02d}" for k in range(6)] for g in range(5)]
    edges = []
    for g in range(5):
        for h in groups[g]:
            for t in groups[(g + 1) % 5]:
                if rng.random() < 0.8:
                    edges.append((h, f"r{g}", t))
    order = rng.permutation(len(edges))
    remaining = {}
    for h, r, _ in edges:
        remaining[(h, r)] = remaining.get((h, r), 0) + 1
    held = {"valid": [], "test": []}
    train = []
    quota = len(edges) // 10
    for idx in order:
        h, r, t = edges[idx]
        stage = "valid" if len(held["valid"]) < quota else "test" if len(held["test"]) < quota else None
        if stage and remaining[(h, r)] > 2:
            remaining[(h, r)] -= 1
            held[stage].append(edges[idx])
        else:
            train.append(edges[idx])
    # first-appearance order in train.tsv fixes entity ids
    train.sort(key=lambda e: (e[0], e[1], e[2]))
    write(OUT / "toy30" / "train.tsv", train)
    write(OUT / "toy30" / "valid.tsv", sorted(held["valid"]))
    write(OUT / "toy30" / "test.tsv", sorted(held["test"]))


def tiny6():
    train = [
        ("e0", "r0", "e1"),
        ("e0", "r0", "e2"),
        ("e1", "r1", "e3"),
        ("e2", "r1", "e3"),
        ("e2", "r1", "e4"),
        ("e3", "r0", "e5"),
        ("e4", "r0", "e5"),
        ("e5", "r1", "e0"),
    ]
    write(OUT / "tiny6" / "train.tsv", train)
    write(OUT / "tiny6" / "valid.tsv", [("e1", "r1", "e4")])
    write(OUT / "tiny6" / "test.tsv", [("e0", "r0", "e3")])


if __name__ == "__main__":
    toy30()
    tiny6()
