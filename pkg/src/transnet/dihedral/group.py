"""
The dihedral group of the square.

An element is stored in the canonical form m^flip o r^rot: first `rot`
counter-clockwise quarter turns r, then (if `flip`) the horizontal reflection m
that mirrors the width axis. Composition is computed from the relation
r o m = m o r^-1; tests check it against the actual array actions.
"""

from dataclasses import dataclass
from typing import Iterable, Iterator, List, Sequence, Union

from transnet.util.exception_handler import InputError
from transnet.util.types import GroupName


@dataclass(frozen=True, order=True)
class DihedralElement:
    flip: bool = False
    rot: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rot", int(self.rot) % 4)
        object.__setattr__(self, "flip", bool(self.flip))

    @property
    def name(self) -> str:
        return f"{'m' if self.flip else ''}r{self.rot}"

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.rot == 0

    def __matmul__(self, other: "DihedralElement") -> "DihedralElement":
        return compose(self, other)

    def __repr__(self):
        return f"DihedralElement({self.name})"

    def __str__(self):
        return self.name


IDENTITY = DihedralElement(False, 0)
R = DihedralElement(False, 1)
M = DihedralElement(True, 0)

ALL_ELEMENTS = tuple(DihedralElement(flip, rot) for flip in (False, True) for rot in range(4))


def element_from_name(name: Union[str, DihedralElement]) -> DihedralElement:
    """Parse one of "r0".."r3", "mr0".."mr3"."""
    if isinstance(name, DihedralElement):
        return name
    text = str(name).strip().lower()
    flip = text.startswith("m")
    body = text[1:] if flip else text
    if len(body) != 2 or body[0] != "r" or body[1] not in "0123":
        raise InputError(f"unknown dihedral element name {name!r}; expected r0..r3 or mr0..mr3")
    return DihedralElement(flip, int(body[1]))


def compose(a: DihedralElement, b: DihedralElement) -> DihedralElement:
    """a o b, i.e. apply b first and then a."""
    # m^fa r^ra m^fb r^rb = m^(fa xor fb) r^(ra * (-1)^fb + rb)
    rot = (-a.rot if b.flip else a.rot) + b.rot
    return DihedralElement(a.flip != b.flip, rot)


def inverse(a: DihedralElement) -> DihedralElement:
    if a.flip:
        return a  # every reflection is an involution
    return DihedralElement(False, -a.rot)


class TransformationSet(Sequence):
    """
    Ordered list of dihedral elements, one per model head.

    Repetitions are allowed (the identity multi-set {r0, r0} used by the
    architecture-only ablation). `is_group` tells whether the distinct elements
    are closed under composition and inverse.
    """

    def __init__(self, elements: Iterable[Union[str, DihedralElement]]):
        self._elements = tuple(element_from_name(e) for e in elements)
        if not self._elements:
            raise InputError("a transformation set needs at least one element")

    def __getitem__(self, index):
        if isinstance(index, slice):
            return TransformationSet(self._elements[index])
        return self._elements[index]

    def __len__(self) -> int:
        return len(self._elements)

    def __iter__(self) -> Iterator[DihedralElement]:
        return iter(self._elements)

    def __eq__(self, other) -> bool:
        if isinstance(other, TransformationSet):
            return self._elements == other._elements
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self._elements)

    def __repr__(self) -> str:
        return f"TransformationSet([{', '.join(self.names)}])"

    @property
    def names(self) -> List[str]:
        return [e.name for e in self._elements]

    @property
    def is_group(self) -> bool:
        distinct = set(self._elements)
        if IDENTITY not in distinct:
            return False
        return all(compose(a, b) in distinct for a in distinct for b in distinct) and all(
            inverse(a) in distinct for a in distinct
        )

    def distinct(self) -> "TransformationSet":
        seen = []
        for e in self._elements:
            if e not in seen:
                seen.append(e)
        return TransformationSet(seen)

    def closure(self) -> "TransformationSet":
        """Smallest group containing these elements, in canonical order."""
        members = set(self._elements) | {IDENTITY}
        while True:
            grown = members | {compose(a, b) for a in members for b in members}
            if grown == members:
                break
            members = grown
        return TransformationSet(sorted(members))


def rotations_prefix(m: int) -> TransformationSet:
    """The first m of r0, r1, r2, r3; the T_m used by default for TransNet heads."""
    if not 1 <= m <= 4:
        raise InputError(f"a rotation prefix holds 1 to 4 elements, got {m}")
    return TransformationSet(DihedralElement(False, i) for i in range(m))


def identity_multiset(m: int) -> TransformationSet:
    if m < 1:
        raise InputError(f"need at least one head, got {m}")
    return TransformationSet([IDENTITY] * m)


C4 = TransformationSet(DihedralElement(False, i) for i in range(4))
D4 = TransformationSet(ALL_ELEMENTS)
VFLIP = TransformationSet([IDENTITY, DihedralElement(True, 2)])


def named_group(name: Union[str, GroupName]) -> TransformationSet:
    group = GroupName(str(getattr(name, "value", name)).lower())
    return C4 if group is GroupName.c4 else D4
