"""Label-set algebra for partitioned hidden layers.

A partition names the label universe, the label sets carried by each source
group of training data, and the label sets assigned to each hidden segment.
Labels are small non-negative integers; mapping to user-facing names happens
at the data/config boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence


class PartitionError(ValueError):
    """Raised when a partition specification cannot be built or used."""


@dataclass(frozen=True)
class LabelSet:
    ids: tuple[int, ...]

    def __init__(self, ids: Iterable[int]):
        ids = list(ids)
        for i in ids:
            if isinstance(i, bool) or int(i) != i or i < 0:
                raise PartitionError(f"label ids must be non-negative integers, got {i!r}")
        if len(set(ids)) != len(ids):
            raise PartitionError(f"duplicate label ids in {ids}")
        object.__setattr__(self, "ids", tuple(sorted(int(i) for i in ids)))

    def __iter__(self):
        return iter(self.ids)

    def __len__(self):
        return len(self.ids)

    def __contains__(self, item):
        return item in self.ids

    def intersects(self, other: "LabelSet") -> bool:
        return not set(self.ids).isdisjoint(other.ids)

    def issubset(self, other: "LabelSet") -> bool:
        return set(self.ids) <= set(other.ids)

    def __repr__(self):
        return "{" + ",".join(map(str, self.ids)) + "}"


def as_label_set(value) -> LabelSet:
    return value if isinstance(value, LabelSet) else LabelSet(value)


@dataclass(frozen=True)
class SegmentSpec:
    labels: LabelSet
    width: int

    def __init__(self, labels, width: int):
        object.__setattr__(self, "labels", as_label_set(labels))
        object.__setattr__(self, "width", int(width))


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self):
        # truthy when there is anything to report
        return bool(self.errors or self.warnings)


@dataclass(frozen=True)
class PartitionSpec:
    """Universe L, source groups S_i and hidden segments (T_j, n_j).

    Declaration order of groups and segments is significant: segment offsets
    in the hidden layer follow it.
    """

    universe: LabelSet
    source_groups: tuple[LabelSet, ...]
    segments: tuple[SegmentSpec, ...]
    label_names: tuple[tuple[int, str], ...] = ()

    def __init__(self, universe, source_groups, segments, label_names: Mapping[int, str] | None = None):
        object.__setattr__(self, "universe", as_label_set(universe))
        object.__setattr__(self, "source_groups", tuple(as_label_set(s) for s in source_groups))
        segs = []
        for seg in segments:
            if isinstance(seg, SegmentSpec):
                segs.append(seg)
            elif isinstance(seg, Mapping):
                segs.append(SegmentSpec(seg["labels"], seg["width"]))
            else:
                labels, width = seg
                segs.append(SegmentSpec(labels, width))
        object.__setattr__(self, "segments", tuple(segs))
        names = tuple(sorted((int(k), str(v)) for k, v in (label_names or {}).items()))
        object.__setattr__(self, "label_names", names)

    @property
    def total_width(self) -> int:
        return sum(s.width for s in self.segments)

    @property
    def widths(self) -> list[int]:
        return [s.width for s in self.segments]

    @property
    def offsets(self) -> list[int]:
        out, acc = [], 0
        for s in self.segments:
            out.append(acc)
            acc += s.width
        return out

    def segment_slice(self, j: int) -> slice:
        start = self.offsets[j]
        return slice(start, start + self.segments[j].width)

    def group_index(self, s) -> int:
        s = as_label_set(s)
        try:
            return self.source_groups.index(s)
        except ValueError:
            raise PartitionError(f"unknown source group {s!r}") from None

    def semaphore_matrix(self) -> list[list[int]]:
        """v[i][j] for every (source group, segment) pair."""
        return [[semaphore(s, seg.labels) for seg in self.segments] for s in self.source_groups]

    def name_of(self, label_id: int) -> str:
        return dict(self.label_names).get(label_id, str(label_id))

    @classmethod
    def from_names(
        cls,
        universe: Sequence[str],
        source_groups: Sequence[Sequence[str]],
        segments: Sequence[Mapping],
        name_to_id: Mapping[str, int] | None = None,
    ) -> "PartitionSpec":
        """Build a spec from user-facing label names.

        Without ``name_to_id`` the ids are positions in ``universe``.
        """
        universe = [str(u) for u in universe]
        if name_to_id is None:
            name_to_id = {name: i for i, name in enumerate(universe)}

        def ids(names):
            out = []
            for name in names:
                name = str(name)
                if name not in name_to_id:
                    raise PartitionError(f"label outside universe: {name!r}")
                out.append(name_to_id[name])
            return out

        uni_ids = ids(universe)
        return cls(
            uni_ids,
            [ids(g) for g in source_groups],
            [SegmentSpec(ids(seg["labels"]), seg["width"]) for seg in segments],
            label_names={name_to_id[n]: n for n in universe},
        )

    def to_dict(self) -> dict:
        return {
            "universe": list(self.universe.ids),
            "label_names": {str(k): v for k, v in self.label_names},
            "source_groups": [list(s.ids) for s in self.source_groups],
            "segments": [{"labels": list(s.labels.ids), "width": s.width} for s in self.segments],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PartitionSpec":
        names = {int(k): v for k, v in d.get("label_names", {}).items()}
        return cls(d["universe"], d["source_groups"], d["segments"], label_names=names)


def semaphore(s, t) -> int:
    """1 if the two label sets share a label, else 0."""
    return int(as_label_set(s).intersects(as_label_set(t)))


def active_segments(s, spec: PartitionSpec) -> list[int]:
    """Indices of segments whose label set meets ``s``, in declaration order."""
    s = as_label_set(s)
    spec.group_index(s)
    return [j for j, seg in enumerate(spec.segments) if semaphore(s, seg.labels)]


def validate(spec: PartitionSpec) -> ValidationReport:
    report = ValidationReport()
    uni = spec.universe
    if not len(uni):
        report.errors.append("empty universe")
    if not spec.source_groups:
        report.errors.append("no source groups")
    if not spec.segments:
        report.errors.append("no segments")
    for i, s in enumerate(spec.source_groups):
        if not len(s):
            report.errors.append(f"source group {i} is empty")
        elif not s.issubset(uni):
            extra = sorted(set(s.ids) - set(uni.ids))
            report.errors.append(f"source group {i}: label outside universe {extra}")
    if len(set(spec.source_groups)) != len(spec.source_groups):
        report.errors.append("duplicate source groups")
    for j, seg in enumerate(spec.segments):
        if not len(seg.labels):
            report.errors.append(f"segment {j} is empty")
        elif not seg.labels.issubset(uni):
            extra = sorted(set(seg.labels.ids) - set(uni.ids))
            report.errors.append(f"segment {j}: label outside universe {extra}")
        if seg.width < 1:
            report.errors.append(f"segment {j}: width must be >= 1, got {seg.width}")
    if report.errors:
        return report
    for j, seg in enumerate(spec.segments):
        if not any(semaphore(s, seg.labels) for s in spec.source_groups):
            report.warnings.append(f"segment {j} {seg.labels!r}: segment never activated")
    for i, s in enumerate(spec.source_groups):
        if not any(semaphore(s, seg.labels) for seg in spec.segments):
            report.warnings.append(f"source group {i} {s!r} activates no segment")
    return report


def require_valid(spec: PartitionSpec) -> ValidationReport:
    report = validate(spec)
    if report.errors:
        raise PartitionError("; ".join(report.errors))
    return report
