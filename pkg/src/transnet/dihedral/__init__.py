from transnet.dihedral.group import (
    DihedralElement,
    TransformationSet,
    IDENTITY,
    R,
    M,
    ALL_ELEMENTS,
    C4,
    D4,
    VFLIP,
    compose,
    inverse,
    element_from_name,
    rotations_prefix,
    identity_multiset,
    named_group,
)
from transnet.dihedral.actions import (
    apply_spatial,
    apply_to_params,
    compile_params,
    orbit_mean,
    orbit_mean_params,
    is_invariant,
)

__all__ = [
    "DihedralElement",
    "TransformationSet",
    "IDENTITY",
    "R",
    "M",
    "ALL_ELEMENTS",
    "C4",
    "D4",
    "VFLIP",
    "compose",
    "inverse",
    "element_from_name",
    "rotations_prefix",
    "identity_multiset",
    "named_group",
    "apply_spatial",
    "apply_to_params",
    "compile_params",
    "orbit_mean",
    "orbit_mean_params",
    "is_invariant",
]
