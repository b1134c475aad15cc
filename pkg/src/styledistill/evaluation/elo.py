"""Elo ratings fit by maximum likelihood over pairwise judgments (Bradley-Terry)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .verdicts import CRITERIA

SCALE = 400.0 / math.log(10.0)
BASE = 1000.0
PSEUDO = 0.5


class DisconnectedComparisonsError(ValueError):
    def __init__(self, components):
        self.components = components
        parts = "; ".join(", ".join(c) for c in components)
        super().__init__(f"comparison graph is disconnected: {parts}")


@dataclass
class EloTable:
    methods: tuple
    criteria: tuple
    ratings: dict  # method -> criterion -> rating
    anchor: str
    comparisons: int

    def rating(self, method: str, criterion: str) -> float:
        return self.ratings[method][criterion]

    def ranking(self, criterion: str) -> list:
        return sorted(self.methods, key=lambda m: -self.ratings[m][criterion])

    def to_dict(self) -> dict:
        return {"methods": list(self.methods), "criteria": list(self.criteria),
                "ratings": self.ratings, "anchor": self.anchor, "comparisons": self.comparisons}


def win_matrix(records, methods, criterion_index: int) -> tuple[np.ndarray, np.ndarray]:
    """W[i, j] = wins of i over j (ties count 1/2 each); N[i, j] = comparisons."""
    idx = {m: i for i, m in enumerate(methods)}
    n = len(methods)
    W = np.zeros((n, n))
    N = np.zeros((n, n))
    for r in records:
        a, b = idx[r.left], idx[r.right]
        v = r.verdicts[criterion_index]
        N[a, b] += 1
        N[b, a] += 1
        if v == "left":
            W[a, b] += 1
        elif v == "right":
            W[b, a] += 1
        else:
            W[a, b] += 0.5
            W[b, a] += 0.5
    return W, N


def neg_log_likelihood(r: np.ndarray, W: np.ndarray) -> float:
    """-sum W_ij log sigmoid((r_i - r_j) / SCALE)."""
    diff = (r[:, None] - r[None, :]) / SCALE
    return float(np.sum(W * np.logaddexp(0.0, -diff)))


def _fit(W: np.ndarray, anchor: int) -> np.ndarray:
    n = W.shape[0]
    free = [i for i in range(n) if i != anchor]

    def expand(v):
        r = np.zeros(n)
        r[free] = v
        return r

    def f(v):
        r = expand(v)
        diff = (r[:, None] - r[None, :]) / SCALE
        nll = np.sum(W * np.logaddexp(0.0, -diff))
        p = 1.0 / (1.0 + np.exp(diff))  # sigmoid(-diff)
        g = (W * p).sum(1) - (W * p).sum(0)  # d nll / d r_i * (-SCALE)
        return nll, (-g / SCALE)[free]

    res = minimize(f, np.zeros(len(free)), jac=True, method="L-BFGS-B",
                   options={"gtol": 1e-10, "ftol": 1e-15, "maxiter": 10000})
    return BASE + expand(res.x)


def compute_elo(records, anchor: str, methods=None) -> EloTable:
    """Per criterion, Bradley-Terry MLE ratings with the anchor pinned at exactly 1000.

    Ties count as half a win for each side; each compared ordered pair gets
    0.5 pseudo-wins so unanimous records stay finite.
    """
    records = list(records)
    if methods is None:
        seen = []
        for r in records:
            for m in (r.left, r.right):
                if m not in seen:
                    seen.append(m)
        methods = tuple(sorted(seen))
    methods = tuple(methods)
    if anchor not in methods:
        raise ValueError(f"anchor {anchor!r} is not among the rated methods")
    _, N = win_matrix(records, methods, 0)
    missing = [m for i, m in enumerate(methods) if N[i].sum() == 0]
    if missing and len(methods) > 1:
        raise DisconnectedComparisonsError([[m] for m in missing] +
                                           [[m for m in methods if m not in missing]])
    ncomp, labels = connected_components(csr_matrix(N > 0), directed=False)
    if ncomp > 1:
        comps = [[m for m, lab in zip(methods, labels) if lab == c] for c in range(ncomp)]
        raise DisconnectedComparisonsError(comps)
    a = methods.index(anchor)
    ratings = {m: {} for m in methods}
    for ci, crit in enumerate(CRITERIA):
        W, N = win_matrix(records, methods, ci)
        W = W + PSEUDO * (N > 0)
        r = _fit(W, a)
        for m, v in zip(methods, r):
            ratings[m][crit] = float(v)
        ratings[anchor][crit] = BASE
    return EloTable(methods, CRITERIA, ratings, anchor, len(records))
