"""Ordered named parameter storage with prefix views."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParamView:
    """Read-only window onto a :class:`ParamStore` under a dotted prefix."""

    __slots__ = ("_store", "_prefix")

    def __init__(self, store: "ParamStore", prefix: str):
        self._store = store
        self._prefix = prefix

    def __getitem__(self, key: str) -> Tensor:
        return self._store[f"{self._prefix}.{key}" if self._prefix else key]

    def __contains__(self, key: str) -> bool:
        return (f"{self._prefix}.{key}" if self._prefix else key) in self._store

    def view(self, sub: str) -> "ParamView":
        return ParamView(self._store, f"{self._prefix}.{sub}" if self._prefix else sub)


class ParamStore:
    """Insertion-ordered mapping from dotted names to parameter tensors."""

    def __init__(self):
        self._items: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._items:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(data, requires_grad=True, name=name)
        self._items[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._items[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def items(self):
        return self._items.items()

    def names(self) -> list[str]:
        return list(self._items)

    def view(self, prefix: str) -> ParamView:
        return ParamView(self, prefix)

    def count(self, prefix: str = "") -> int:
        """Number of scalars in parameters whose name starts with ``prefix``."""
        if not prefix:
            return sum(t.data.size for t in self._items.values())
        dotted = prefix + "."
        return sum(t.data.size for n, t in self._items.items() if n == prefix or n.startswith(dotted))

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.grad = None

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for n, t in self._items.items():
            out.add(n, t.data.astype(dtype, copy=True))
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n, t in self._items.items():
            out.add(n, t.data.copy())
        return out
