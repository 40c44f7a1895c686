"""Bradley-Terry strength fitting from pairwise win counts.

Maximum-likelihood strengths are found with the classic fixed-point update

    p_i <- W_i / sum_{j != i} (w_ij + w_ji) / (p_i + p_j)

normalised to sum to the number of methods each sweep, iterated until the
update changes by less than 1e-10 (or 10^4 sweeps). Reported scores are
log-strengths shifted to zero mean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractViolationError

__all__ = ["PairwiseTable", "bt_scores"]

TOL = 1e-10
MAX_ITER = 10_000


@dataclass
class PairwiseTable:
    methods: list[str]
    wins: np.ndarray  # wins[i, j] = times i was preferred over j

    def __post_init__(self):
        k = len(self.methods)
        self.wins = np.asarray(self.wins)
        if self.wins.shape != (k, k):
            raise ContractViolationError(
                f"win matrix shape {self.wins.shape} does not match {k} methods")
        if (self.wins < 0).any() or not np.issubdtype(self.wins.dtype, np.integer):
            raise ContractViolationError("win counts must be nonnegative integers")
        if np.diag(self.wins).any():
            raise ContractViolationError("win matrix diagonal must be zero")

    @classmethod
    def from_csv(cls, path) -> "PairwiseTable":
        """Rows: method_a, method_b, wins_a, wins_b (header optional)."""
        rows = list(csv.reader(Path(path).open()))
        if rows and rows[0][:2] == ["method_a", "method_b"]:
            rows = rows[1:]
        methods: list[str] = []
        counts: dict[tuple[str, str], int] = {}
        for a, b, wa, wb in rows:
            for name in (a, b):
                if name not in methods:
                    methods.append(name)
            counts[(a, b)] = counts.get((a, b), 0) + int(wa)
            counts[(b, a)] = counts.get((b, a), 0) + int(wb)
        wins = np.zeros((len(methods), len(methods)), dtype=np.int64)
        for (a, b), n in counts.items():
            wins[methods.index(a), methods.index(b)] = n
        return cls(methods=methods, wins=wins)


def _connected_components(table: PairwiseTable) -> list[list[str]]:
    k = len(table.methods)
    adjacency = (table.wins + table.wins.T) > 0
    seen, components = set(), []
    for start in range(k):
        if start in seen:
            continue
        stack, comp = [start], []
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            comp.append(table.methods[i])
            stack.extend(j for j in range(k) if adjacency[i, j] and j not in seen)
        components.append(comp)
    return components


def bt_scores(table: PairwiseTable) -> np.ndarray:
    """Zero-mean log-strengths, one per method, in table order."""
    components = _connected_components(table)
    if len(components) > 1:
        raise ConfigurationError(
            f"comparison graph is disconnected: components {components}")
    k = len(table.methods)
    w = table.wins.astype(np.float64)
    totals = w + w.T
    row_wins = w.sum(axis=1)
    p = np.ones(k)
    for _ in range(MAX_ITER):
        denom = np.zeros(k)
        for i in range(k):
            mask = totals[i] > 0
            denom[i] = (totals[i, mask] / (p[i] + p[mask])).sum()
        p_new = row_wins / np.maximum(denom, 1e-300)
        p_new *= k / p_new.sum()
        if np.abs(p_new - p).max() < TOL:
            p = p_new
            break
        p = p_new
    scores = np.log(p)
    return scores - scores.mean()
