"""Reproducible package builds with per-CPU tuned variants."""

from .channel import Channel, Manifest, export_manifest, load_revision, replay_manifest
from .cpu import (
    LINEAGE,
    FeatureSet,
    Microarchitecture,
    detect_microarch,
    is_compatible,
    lookup_microarch,
    parse_cpu_flags,
)
from .model import (
    BuildGraph,
    BuildSettings,
    Derivation,
    PackageCollection,
    PackageDef,
    RecipeStep,
    SourceRef,
    StorePath,
    canonical_serialize,
    closure,
    derivation_hash,
    lower_graph,
    lower_package,
)
from .store import Store, execute_recipe, verify_reproducibility
from .transform import (
    TransformationSpec,
    apply_transformations,
    apply_tune,
    apply_with_input,
    parse_transformations,
    serialize_transformations,
)

__version__ = "0.1.0"

__all__ = [
    "LINEAGE",
    "BuildGraph",
    "BuildSettings",
    "Channel",
    "Derivation",
    "FeatureSet",
    "Manifest",
    "Microarchitecture",
    "PackageCollection",
    "PackageDef",
    "RecipeStep",
    "SourceRef",
    "Store",
    "StorePath",
    "TransformationSpec",
    "apply_transformations",
    "apply_tune",
    "apply_with_input",
    "canonical_serialize",
    "closure",
    "derivation_hash",
    "detect_microarch",
    "execute_recipe",
    "export_manifest",
    "is_compatible",
    "load_revision",
    "lookup_microarch",
    "lower_graph",
    "lower_package",
    "parse_cpu_flags",
    "parse_transformations",
    "replay_manifest",
    "serialize_transformations",
    "verify_reproducibility",
]
