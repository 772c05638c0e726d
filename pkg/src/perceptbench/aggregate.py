"""Comparison matrices and per-image scores (win rate, Bradley-Terry)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt

from .errors import DisconnectedGraph, EmptyMatrix, NoConvergence, UnknownItem
from .principles import PRINCIPLES, Principle
from .prompt import Side, VerdictSet

WIN_RATE = "win_rate"
BRADLEY_TERRY = "bradley_terry"
METHODS = (WIN_RATE, BRADLEY_TERRY)


@dataclass
class ComparisonMatrix:
    """Win counts ``w[i, j]`` (times i beat j) and trial counts ``t[i, j]``."""

    principle: Principle
    category: str
    ids: list[str]
    w: npt.NDArray[np.int64] = field(default=None)  # type: ignore[assignment]
    t: npt.NDArray[np.int64] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise ValueError("matrix item ids must be unique")
        if self.w is None:
            self.w = np.zeros((n, n), dtype=np.int64)
        if self.t is None:
            self.t = self.w + self.w.T
        self.w = np.asarray(self.w, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        self.index = {item: pos for pos, item in enumerate(self.ids)}

    @property
    def n(self) -> int:
        return len(self.ids)

    def check(self) -> None:
        w, t = self.w, self.t
        assert w.shape == t.shape == (self.n, self.n)
        assert not np.diag(w).any() and not np.diag(t).any()
        assert (w >= 0).all() and (w <= t).all()
        assert (w + w.T == t).all() and (t == t.T).all()

    def record(self, winner: str, loser: str) -> None:
        try:
            i, j = self.index[winner], self.index[loser]
        except KeyError as exc:
            raise UnknownItem(f"item {exc.args[0]!r} is not in the {self.category!r} matrix") from None
        self.w[i, j] += 1
        self.t[i, j] += 1
        self.t[j, i] += 1

    def to_dict(self) -> dict:
        return {
            "principle": self.principle.value,
            "category": self.category,
            "ids": list(self.ids),
            "wins": self.w.tolist(),
            "trials": self.t.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ComparisonMatrix":
        return cls(
            principle=Principle(doc["principle"]),
            category=doc["category"],
            ids=list(doc["ids"]),
            w=np.array(doc["wins"], dtype=np.int64).reshape(len(doc["ids"]), len(doc["ids"])),
            t=np.array(doc["trials"], dtype=np.int64).reshape(len(doc["ids"]), len(doc["ids"])),
        )


def accumulate(matrix: ComparisonMatrix, verdicts: VerdictSet) -> ComparisonMatrix:
    """Fold this matrix's principle from one judged pair into the counts (in place)."""
    for item in verdicts.pair:
        if item not in matrix.index:
            raise UnknownItem(f"item {item!r} is not in the {matrix.category!r} matrix")
    v = verdicts.verdicts[matrix.principle]
    if v.winner is Side.FIRST:
        matrix.record(verdicts.first, verdicts.second)
    else:
        matrix.record(verdicts.second, verdicts.first)
    return matrix


def build_matrices(
    ids: Sequence[str],
    verdict_sets: Iterable[VerdictSet],
    category: str = "",
) -> dict[Principle, ComparisonMatrix]:
    """One matrix per principle over ``ids`` (kept in the given order)."""
    matrices = {p: ComparisonMatrix(p, category, list(ids)) for p in PRINCIPLES}
    for vs in verdict_sets:
        for m in matrices.values():
            accumulate(m, vs)
    return matrices


@dataclass(frozen=True)
class ScoreVector:
    principle: Principle
    category: str
    method: str
    ids: tuple[str, ...]
    scores: tuple[float, ...]
    ranks: tuple[int, ...]
    converged: bool = True
    iterations: int = 0

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.ids, self.scores))

    def to_dict(self) -> dict:
        return {
            "principle": self.principle.value,
            "category": self.category,
            "method": self.method,
            "ids": list(self.ids),
            "scores": list(self.scores),
            "ranks": list(self.ranks),
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScoreVector":
        return cls(
            principle=Principle(doc["principle"]),
            category=doc["category"],
            method=doc["method"],
            ids=tuple(doc["ids"]),
            scores=tuple(float(s) for s in doc["scores"]),
            ranks=tuple(int(r) for r in doc["ranks"]),
            converged=bool(doc.get("converged", True)),
            iterations=int(doc.get("iterations", 0)),
        )


def _ranks(ids: Sequence[str], scores: Sequence[float]) -> tuple[int, ...]:
    order = sorted(range(len(ids)), key=lambda k: (-scores[k], ids[k]))
    ranks = [0] * len(ids)
    for r, k in enumerate(order, start=1):
        ranks[k] = r
    return tuple(ranks)


def _vector(matrix: ComparisonMatrix, method: str, scores: Sequence[float], **extra) -> ScoreVector:
    scores = tuple(float(s) for s in scores)
    return ScoreVector(
        principle=matrix.principle,
        category=matrix.category,
        method=method,
        ids=tuple(matrix.ids),
        scores=scores,
        ranks=_ranks(matrix.ids, scores),
        **extra,
    )


def win_rate_scores(matrix: ComparisonMatrix) -> ScoreVector:
    """Row mean of the per-pair win fraction, divided by n (self term is 0).

    With one binary comparison per pair this is exactly the mean of the
    binary outcomes over all n items. Unjudged pairs contribute 0. Evaluated
    in exact rational arithmetic and rounded once.
    """
    n = matrix.n
    if n < 2:
        raise EmptyMatrix(f"win rate needs at least 2 items, got {n}")
    w = matrix.w.tolist()
    t = matrix.t.tolist()
    scores = []
    for i in range(n):
        total = sum((Fraction(w[i][j], t[i][j]) for j in range(n) if j != i and t[i][j]), Fraction(0))
        scores.append(float(total / n))
    return _vector(matrix, WIN_RATE, scores)


def _connected(t: npt.NDArray) -> bool:
    n = t.shape[0]
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(t[i]):
            j = int(j)
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == n


def bt_log_likelihood(w: npt.NDArray, pi: npt.NDArray, epsilon: float = 0.0) -> float:
    """Sum over i != j of (w_ij + eps) * log(pi_i / (pi_i + pi_j))."""
    wp = np.asarray(w, dtype=float) + epsilon
    np.fill_diagonal(wp, 0.0)
    pi = np.asarray(pi, dtype=float)
    denom = pi[:, None] + pi[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(wp > 0, wp * (np.log(pi)[:, None] - np.log(denom)), 0.0)
    return float(terms.sum())


def bradley_terry_mm(
    w: npt.NDArray,
    epsilon: float = 0.01,
    max_iter: int = 10_000,
    tol: float = 1e-10,
    callback=None,
) -> tuple[npt.NDArray[np.float64], bool, int]:
    """Minorize-maximize fit of Bradley-Terry strengths.

    Each sweep sets pi_i = W_i / sum_{j != i} T_ij / (pi_i + pi_j) for all i
    at once, with W_i = sum_j (w_ij + eps) and T_ij = t_ij + 2 eps, then
    rescales to sum 1. Stops when the largest change drops below ``tol``.
    Returns (strengths, converged, sweeps).
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    if n < 2:
        raise EmptyMatrix(f"Bradley-Terry needs at least 2 items, got {n}")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    off = ~np.eye(n, dtype=bool)
    wins = np.where(off, w + epsilon, 0.0)
    trials = wins + wins.T
    if epsilon == 0 and not _connected(trials):
        raise DisconnectedGraph("comparison graph is disconnected; strengths are not identifiable")
    total_wins = wins.sum(axis=1)

    pi = np.full(n, 1.0 / n)
    if callback is not None:
        callback(pi.copy())
    for sweep in range(1, max_iter + 1):
        denom = pi[:, None] + pi[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            rates = np.where(trials > 0, trials / denom, 0.0)
        new = total_wins / rates.sum(axis=1)
        new /= new.sum()
        delta = float(np.max(np.abs(new - pi)))
        pi = new
        if callback is not None:
            callback(pi.copy())
        if delta < tol:
            return pi, True, sweep
    return pi, False, max_iter


def bradley_terry_scores(
    matrix: ComparisonMatrix,
    epsilon: float = 0.01,
    max_iter: int = 10_000,
    tol: float = 1e-10,
) -> ScoreVector:
    pi, converged, sweeps = bradley_terry_mm(matrix.w, epsilon, max_iter, tol)
    if not converged:
        warnings.warn(
            f"Bradley-Terry for {matrix.principle.value}/{matrix.category!r} stopped after "
            f"{max_iter} sweeps without reaching tol={tol}",
            NoConvergence,
            stacklevel=2,
        )
    return _vector(matrix, BRADLEY_TERRY, pi, converged=converged, iterations=sweeps)


def rank_from_scores(scores: ScoreVector) -> list[str]:
    """Item ids from best to worst; exact ties fall back to id order."""
    return [scores.ids[k] for k in sorted(range(len(scores.ids)), key=lambda k: (-scores.scores[k], scores.ids[k]))]


def score_matrix(
    matrix: ComparisonMatrix,
    method: str,
    epsilon: float = 0.01,
    max_iter: int = 10_000,
    tol: float = 1e-10,
) -> ScoreVector:
    if method == WIN_RATE:
        return win_rate_scores(matrix)
    if method == BRADLEY_TERRY:
        return bradley_terry_scores(matrix, epsilon, max_iter, tol)
    raise ValueError(f"unknown scoring method {method!r}")
