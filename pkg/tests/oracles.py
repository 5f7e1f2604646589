"""Reference implementations that share no code with the package under test."""

import itertools
import math

import numpy as np

from pathformer.queries import Anchor, Intersection, Negation, Projection, Union


def brute_answers(triples, n_entities, tree):
    """Membership of every candidate by enumerating existential witnesses over all of V.

    ``holds(node, x)`` asks whether some assignment of the variables below
    ``node`` makes ``node`` evaluate to ``x``; projections enumerate every
    possible predecessor ``y`` and test the raw triple set.
    """
    edges = set(map(tuple, triples))
    memo = {}

    def holds(node, x):
        key = (id(node), x)
        if key in memo:
            return memo[key]
        if isinstance(node, Anchor):
            out = x == node.entity
        elif isinstance(node, Projection):
            out = any((y, node.relation, x) in edges and holds(node.child, y) for y in range(n_entities))
        elif isinstance(node, Negation):
            out = not holds(node.child, x)
        elif isinstance(node, Intersection):
            out = all(holds(c, x) for c in node.children)
        elif isinstance(node, Union):
            out = any(holds(c, x) for c in node.children)
        else:
            raise TypeError(node)
        memo[key] = out
        return out

    return frozenset(x for x in range(n_entities) if holds(tree, x))


def brute_inp(triples, n_entities, e1, e2, r1, r2, r3):
    """inp answers by literal enumeration: a such that exists v with r1(e1,v), not r2(e2,v), r3(v,a)."""
    edges = set(map(tuple, triples))
    out = set()
    for answer, v in itertools.product(range(n_entities), repeat=2):
        if (e1, r1, v) in edges and (e2, r2, v) not in edges and (v, r3, answer) in edges:
            out.add(answer)
    return frozenset(out)


def sort_ranks(distances, answers, filtered):
    """Mid-ranks from a full sort of each candidate pool: the mean 1-based position of the tie block."""
    ranks = []
    for e in sorted(answers):
        pool = [float(distances[e])] + [float(distances[c]) for c in range(len(distances)) if c not in filtered]
        ordered = sorted(pool)
        first = ordered.index(float(distances[e])) + 1
        last = len(ordered) - ordered[::-1].index(float(distances[e]))
        ranks.append((first + last) / 2)
    return ranks


def scalar_loss(pos_dist, neg_dists, gamma):
    """Margin loss written with math.log and an explicit sigmoid."""

    def log_sigmoid(z):
        return -math.log1p(math.exp(-z)) if z >= 0 else z - math.log1p(math.exp(z))

    return -log_sigmoid(gamma - pos_dist) - sum(log_sigmoid(d - gamma) for d in neg_dists) / len(neg_dists)


def random_graph_triples(rng, n_entities, n_relations, n_edges):
    heads = rng.integers(n_entities, size=n_edges)
    rels = rng.integers(n_relations, size=n_edges)
    tails = rng.integers(n_entities, size=n_edges)
    return sorted({(int(h), int(r), int(t)) for h, r, t in zip(heads, rels, tails)})


def expected_random_mrr(pool_size):
    """E[1/rank] when the answer lands uniformly among ``pool_size`` positions."""
    return sum(1.0 / k for k in range(1, pool_size + 1)) / pool_size


def numeric_grad(f, x, step=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + step
        up = f()
        x[idx] = old - step
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * step)
    return g
