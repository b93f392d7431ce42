"""Named parameter collections exchanged between clients and the server."""

from collections import OrderedDict

import numpy as np

from ..errors import SchemaMismatch
from .tensor import Tensor

__all__ = ["ParamSet"]


class ParamSet:
    """Ordered mapping ``name -> Tensor`` with a fixed iteration order.

    Copies are deep (fresh arrays), so a ParamSet can be handed to another
    thread or client without aliasing.
    """

    def __init__(self, items=()):
        self._items = OrderedDict()
        pairs = items.items() if hasattr(items, "items") else items
        for name, value in pairs:
            if name in self._items:
                raise SchemaMismatch(f"duplicate parameter name {name!r}")
            if not isinstance(value, Tensor):
                value = Tensor(value, requires_grad=True, name=name)
            value.requires_grad = True
            value.name = name
            self._items[name] = value

    @classmethod
    def from_arrays(cls, arrays):
        return cls((name, Tensor(np.array(a, dtype=np.float64), requires_grad=True))
                   for name, a in arrays.items())

    def __getitem__(self, name):
        return self._items[name]

    def __contains__(self, name):
        return name in self._items

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def names(self):
        return list(self._items)

    def items(self):
        return self._items.items()

    def values(self):
        return self._items.values()

    @property
    def total_count(self):
        return sum(t.size for t in self._items.values())

    def schema(self):
        return [(name, tuple(t.shape)) for name, t in self._items.items()]

    def arrays(self):
        return OrderedDict((name, t.data) for name, t in self._items.items())

    def copy(self):
        return ParamSet.from_arrays({n: t.data.copy() for n, t in self._items.items()})

    def zero_grad(self):
        for t in self._items.values():
            t.grad = np.zeros_like(t.data)

    def check_schema(self, other):
        if self.schema() != other.schema():
            raise SchemaMismatch("parameter schemas differ")

    def flatten(self):
        if not self._items:
            return np.zeros(0)
        return np.concatenate([t.data.ravel() for t in self._items.values()])

    def unflatten(self, vector):
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.total_count:
            raise SchemaMismatch(f"vector has {vector.size} entries, expected {self.total_count}")
        out, offset = OrderedDict(), 0
        for name, shape in self.schema():
            n = int(np.prod(shape))
            out[name] = vector[offset:offset + n].reshape(shape).copy()
            offset += n
        return ParamSet.from_arrays(out)

    def equals(self, other):
        return self.schema() == other.schema() and all(
            np.array_equal(a, b) for a, b in zip(self.arrays().values(), other.arrays().values()))

    def max_abs_diff(self, other):
        self.check_schema(other)
        return max((float(np.max(np.abs(a - b))) if a.size else 0.0)
                   for a, b in zip(self.arrays().values(), other.arrays().values()))

    def __repr__(self):
        return f"ParamSet({len(self)} tensors, {self.total_count} values)"
