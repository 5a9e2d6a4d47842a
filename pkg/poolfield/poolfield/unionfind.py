from __future__ import annotations

from typing import Dict, Generic, Hashable, Iterable, List, TypeVar

T = TypeVar("T", bound=Hashable)


class UnionFind(Generic[T]):
    """Disjoint sets with union by rank and path compression."""

    def __init__(self, items: Iterable[T] = ()) -> None:
        self._leader: Dict[T, T] = {}
        self._rank: Dict[T, int] = {}
        self._size: Dict[T, int] = {}
        self.n_sets = 0
        for it in items:
            self.add(it)

    def __contains__(self, item: object) -> bool:
        return item in self._leader

    def __len__(self) -> int:
        return len(self._leader)

    def add(self, item: T) -> None:
        if item in self._leader:
            return
        self._leader[item] = item
        self._rank[item] = 0
        self._size[item] = 1
        self.n_sets += 1

    def find(self, item: T) -> T:
        path: List[T] = [item]
        parent = self._leader[item]
        while parent != self._leader[parent]:
            path.append(parent)
            parent = self._leader[parent]
        for p in path:
            self._leader[p] = parent
        return parent

    def union(self, a: T, b: T) -> T:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self._rank[ra] < self._rank[rb]:
            ra, rb = rb, ra
        self._leader[rb] = ra
        self._size[ra] += self._size[rb]
        if self._rank[ra] == self._rank[rb]:
            self._rank[ra] += 1
        self.n_sets -= 1
        return ra

    def size(self, item: T) -> int:
        return self._size[self.find(item)]

    def groups(self) -> List[List[T]]:
        by_root: Dict[T, List[T]] = {}
        for it in self._leader:
            by_root.setdefault(self.find(it), []).append(it)
        return list(by_root.values())
