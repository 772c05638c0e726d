"""Which ordered image pairs get judged, per category."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

from .dataset import ImageItem
from .errors import AlreadyBalanced, InfeasibleBudget, ParseError, TooFewItems


@dataclass(frozen=True)
class PairTask:
    first: str
    second: str
    # (first, second) of the mirror task when order-balanced.
    swap_of: tuple[str, str] | None = None

    def __post_init__(self):
        if self.first == self.second:
            raise ValueError(f"pair task needs two distinct items, got {self.first!r} twice")
        if self.swap_of is not None and tuple(self.swap_of) != (self.second, self.first):
            raise ValueError("swap_of must reference the reversed pair")

    @property
    def key(self) -> tuple[str, str]:
        return (self.first, self.second)

    @property
    def unordered(self) -> tuple[str, str]:
        return (self.first, self.second) if self.first < self.second else (self.second, self.first)

    def mirror(self) -> "PairTask":
        return PairTask(self.second, self.first, swap_of=self.key)


@dataclass(frozen=True)
class Schedule:
    category: str
    mode: str  # "full" or "sampled"
    tasks: tuple[PairTask, ...]
    budget: int | None = None
    seed: int | None = None
    order_balanced: bool = False
    item_ids: tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.tasks)

    def unordered_pairs(self) -> set[tuple[str, str]]:
        return {t.unordered for t in self.tasks}

    def to_dict(self) -> dict[str, Any]:
        return {
            "category": self.category,
            "mode": self.mode,
            "budget": self.budget,
            "seed": self.seed,
            "order_balanced": self.order_balanced,
            "item_ids": list(self.item_ids),
            "tasks": [
                {"first": t.first, "second": t.second, "swap_of": list(t.swap_of) if t.swap_of else None}
                for t in self.tasks
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "Schedule":
        try:
            tasks = tuple(
                PairTask(t["first"], t["second"], tuple(t["swap_of"]) if t.get("swap_of") else None)
                for t in doc["tasks"]
            )
            return cls(
                category=doc["category"],
                mode=doc["mode"],
                tasks=tasks,
                budget=doc.get("budget"),
                seed=doc.get("seed"),
                order_balanced=bool(doc.get("order_balanced", False)),
                item_ids=tuple(doc.get("item_ids", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed schedule document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _ids(items: Sequence[ImageItem | str]) -> list[str]:
    ids = sorted(i if isinstance(i, str) else i.id for i in items)
    if len(set(ids)) != len(ids):
        raise ValueError("item ids must be unique")
    return ids


def _category(items: Sequence[ImageItem | str], category: str | None) -> str:
    if category is not None:
        return category
    cats = {i.category for i in items if isinstance(i, ImageItem)}
    return cats.pop() if len(cats) == 1 else ""


def _canonical(pairs: Iterable[tuple[str, str]]) -> tuple[PairTask, ...]:
    return tuple(PairTask(a, b) for a, b in sorted(pairs))


def full_round_robin(items: Sequence[ImageItem | str], category: str | None = None) -> Schedule:
    ids = _ids(items)
    if len(ids) < 2:
        raise TooFewItems(f"need at least 2 items to form a pair, got {len(ids)}")
    pairs = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]]
    return Schedule(
        category=_category(items, category),
        mode="full",
        tasks=_canonical(pairs),
        item_ids=tuple(ids),
    )


def sampled_pairs(
    items: Sequence[ImageItem | str],
    k: int,
    seed: int,
    category: str | None = None,
) -> Schedule:
    """Sparse schedule where every item takes part in at least ``k`` comparisons.

    Pairs are drawn at random to lift each item to degree ``k``, preferring
    partners that are still below budget; a repair pass then links any
    disconnected components so Bradley-Terry strengths stay identifiable.
    """
    ids = _ids(items)
    n = len(ids)
    if n < 2:
        raise TooFewItems(f"need at least 2 items to form a pair, got {n}")
    if not 1 <= k <= n - 1:
        raise InfeasibleBudget(f"budget k={k} must lie in [1, {n - 1}] for {n} items")

    cat = _category(items, category)
    if k == n - 1:
        full = full_round_robin(ids, category=cat)
        return replace(full, mode="sampled", budget=k, seed=seed)

    rng = random.Random(seed)
    edges: set[tuple[str, str]] = set()
    degree = dict.fromkeys(ids, 0)
    neighbours: dict[str, set[str]] = {i: set() for i in ids}

    def add(a: str, b: str) -> None:
        edges.add((a, b) if a < b else (b, a))
        degree[a] += 1
        degree[b] += 1
        neighbours[a].add(b)
        neighbours[b].add(a)

    order = list(ids)
    rng.shuffle(order)
    for node in order:
        while degree[node] < k:
            free = [j for j in ids if j != node and j not in neighbours[node]]
            hungry = [j for j in free if degree[j] < k]
            add(node, rng.choice(hungry or free))

    # connectivity repair: chain components together through random members
    parent = {i: i for i in ids}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in sorted(edges):
        parent[find(a)] = find(b)
    components: dict[str, list[str]] = {}
    for i in ids:
        components.setdefault(find(i), []).append(i)
    groups = sorted(components.values())
    for left, right in zip(groups, groups[1:]):
        add(rng.choice(left), rng.choice(right))

    return Schedule(
        category=cat,
        mode="sampled",
        tasks=_canonical(edges),
        budget=k,
        seed=seed,
        item_ids=tuple(ids),
    )


def with_order_balancing(schedule: Schedule) -> Schedule:
    """Add the reversed-order twin of every task, right after the original."""
    if schedule.order_balanced:
        raise AlreadyBalanced(f"schedule for {schedule.category!r} is already order-balanced")
    tasks: list[PairTask] = []
    for task in schedule.tasks:
        mirror = task.mirror()
        tasks.append(PairTask(task.first, task.second, swap_of=mirror.key))
        tasks.append(mirror)
    return replace(schedule, tasks=tuple(tasks), order_balanced=True)


def is_connected(item_ids: Iterable[str], pairs: Iterable[tuple[str, str]]) -> bool:
    ids = list(item_ids)
    if not ids:
        return True
    adj: dict[str, set[str]] = {i: set() for i in ids}
    for a, b in pairs:
        adj[a].add(b)
        adj[b].add(a)
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == len(ids)


def parse_schedule_mode(text: str) -> tuple[str, int | None]:
    """``full`` -> ("full", None); ``sampled:<k>`` -> ("sampled", k)."""
    if text == "full":
        return "full", None
    if text.startswith("sampled:"):
        try:
            k = int(text.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad sampled budget in {text!r}") from None
        return "sampled", k
    raise ValueError(f"schedule must be 'full' or 'sampled:<k>', got {text!r}")


def build_schedule(
    items: Sequence[ImageItem],
    category: str,
    mode: str = "full",
    budget: int | None = None,
    seed: int = 0,
    order_balanced: bool = False,
) -> Schedule:
    if mode == "full":
        sched = full_round_robin(items, category=category)
    elif mode == "sampled":
        if budget is None:
            raise InfeasibleBudget("sampled mode needs a budget k")
        sched = sampled_pairs(items, budget, seed, category=category)
    else:
        raise ValueError(f"unknown schedule mode {mode!r}")
    return with_order_balancing(sched) if order_balanced else sched
