"""Structured partitions of flat parameter vectors and the group-wise operators on them."""
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from sdprune.core.errors import DimensionError, PartitionError
from sdprune.schemas.config_schemas import GroupingStrategy
from sdprune.schemas.result_schemas import PartitionRecord
from sdprune.services.model import ParamLayout


@dataclass(frozen=True)
class GroupPartition:
    """Disjoint cover of 0..d-1 by nonempty index groups, in a fixed group order."""

    d: int
    groups: Tuple[Tuple[int, ...], ...]
    labels: Optional[Tuple[Tuple[int, int], ...]] = None
    group_ids: np.ndarray = field(init=False, repr=False, compare=False)
    sizes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        if self.d < 1:
            raise PartitionError("a partition needs d >= 1")
        if any(len(g) == 0 for g in groups):
            raise PartitionError("every group must be nonempty")
        flat = np.fromiter((i for g in groups for i in g), dtype=np.int64)
        if flat.size and (flat.min() < 0 or flat.max() >= self.d):
            raise PartitionError(f"group index out of range [0, {self.d})")
        if flat.size != self.d or np.unique(flat).size != self.d:
            raise PartitionError("groups must be pairwise disjoint and cover every index exactly once")
        ids = np.empty(self.d, dtype=np.int64)
        for gi, g in enumerate(groups):
            ids[list(g)] = gi
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "group_ids", ids)
        object.__setattr__(self, "sizes", np.array([len(g) for g in groups], dtype=np.int64))

    def __len__(self) -> int:
        return len(self.groups)

    def to_record(self) -> PartitionRecord:
        return PartitionRecord(d=self.d, groups=[list(g) for g in self.groups])

    def to_json(self) -> str:
        return self.to_record().model_dump_json()

    @classmethod
    def from_record(cls, record: PartitionRecord) -> "GroupPartition":
        return cls(record.d, tuple(tuple(g) for g in record.groups))

    @classmethod
    def from_json(cls, text: str) -> "GroupPartition":
        return cls.from_record(PartitionRecord.model_validate(json.loads(text)))


def singleton_partition(d: int) -> GroupPartition:
    return GroupPartition(d, tuple((i,) for i in range(d)))


def make_partition(layout: ParamLayout, strategy: GroupingStrategy) -> GroupPartition:
    d = layout.d
    if strategy.kind == "per_parameter":
        return singleton_partition(d)
    if strategy.kind == "explicit":
        return GroupPartition(d, tuple(tuple(g) for g in strategy.explicit_groups))
    groups, labels = [], []
    for li, (layer, start) in enumerate(zip(layout.layers, layout.offsets)):
        if strategy.kind == "per_layer":
            groups.append(tuple(range(start, start + layer.size)))
            labels.append((li, -1))
            continue
        bias_start = start + layer.n_out * layer.n_in
        for j in range(layer.n_out):
            unit = list(range(start + j * layer.n_in, start + (j + 1) * layer.n_in))
            if layer.bias:
                unit.append(bias_start + j)
            groups.append(tuple(unit))
            labels.append((li, j))
    return GroupPartition(d, tuple(groups), tuple(labels))


def _check(w: np.ndarray, g: GroupPartition) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != g.d:
        raise DimensionError(f"vector has shape {w.shape}, partition expects ({g.d},)")
    return w


def group_slices(w: np.ndarray, g: GroupPartition) -> List[np.ndarray]:
    w = _check(w, g)
    return [w[list(idx)] for idx in g.groups]


def group_norms(w: np.ndarray, g: GroupPartition) -> np.ndarray:
    w = _check(w, g)
    return np.sqrt(np.bincount(g.group_ids, weights=w * w, minlength=len(g)))


def zero_groups(w: np.ndarray, g: GroupPartition) -> np.ndarray:
    w = _check(w, g)
    nonzero = np.bincount(g.group_ids, weights=(w != 0.0).astype(np.float64), minlength=len(g))
    return nonzero == 0


def normalize_groups(w: np.ndarray, g: GroupPartition) -> np.ndarray:
    """E_G(w): each group divided by its Euclidean norm; zero groups stay zero."""
    w = _check(w, g)
    norms = group_norms(w, g)[g.group_ids]
    out = np.zeros_like(w)
    np.divide(w, norms, out=out, where=norms > 0)
    return out


def sparsity(w: np.ndarray, g: GroupPartition) -> float:
    """Fraction of parameters in groups whose entries are all exactly zero."""
    zero = zero_groups(w, g)
    return float(g.sizes[zero].sum()) / g.d


def pruned_units(layout: ParamLayout, w: np.ndarray) -> Dict[int, List[int]]:
    """Per layer, output units whose incoming weights and bias are all exactly zero."""
    out = {}
    for li, (weight, bias) in enumerate(layout.unpack(np.asarray(w, dtype=np.float64))):
        dead = np.all(weight == 0.0, axis=1)
        if bias is not None:
            dead &= bias == 0.0
        out[li] = [int(j) for j in np.flatnonzero(dead)]
    return out


def hidden_pruned_units(layout: ParamLayout, w: np.ndarray) -> Sequence[List[int]]:
    units = pruned_units(layout, w)
    return [units[li] for li in range(len(layout.layers) - 1)]
