"""Dataset manifests: category sets, sample records, and leak-proof sample IDs.

Manifest files are line-oriented UTF-8 text::

    #dataset <name> <modality> <C> <N>
    #cat <index> <name>          (C lines, ascending index)
    <original_path>\\t<category_index>   (N lines)

Sample IDs are hashed at load time so that downstream prompts never see
label-bearing filenames.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

MODALITIES = ("image", "video", "pointcloud")

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_WS_RUN = re.compile(r"[\s_]+")


class ManifestError(Exception):
    """Base class for manifest failures."""


class ParseError(ManifestError):
    """Malformed manifest text; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(ManifestError):
    """Structurally valid text that violates a manifest invariant."""


def normalize_category(name: str) -> str:
    """Lowercase, trim, and collapse whitespace/underscore runs to one space."""
    return _WS_RUN.sub(" ", name).strip().lower()


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def hash_sample_id(original_name: str, salt: str) -> str:
    """16-hex-char FNV-1a 64 digest of salt||original_name; stable across runs."""
    if not original_name:
        raise ValueError("original_name must be non-empty")
    return f"{fnv1a_64((salt + original_name).encode('utf-8')):016x}"


@dataclass(frozen=True)
class CategorySet:
    """Ordered label space of a dataset."""

    dataset_name: str
    categories: tuple[str, ...]
    modality: str

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValidationError(f"unknown modality {self.modality!r}")
        if len(self.categories) < 2:
            raise ValidationError("a category set needs at least 2 categories")
        normalized = [normalize_category(c) for c in self.categories]
        if len(set(normalized)) != len(normalized):
            dupes = sorted({n for n in normalized if normalized.count(n) > 1})
            raise ValidationError(f"categories not unique after normalization: {dupes}")

    def __len__(self) -> int:
        return len(self.categories)

    @cached_property
    def normalized(self) -> tuple[str, ...]:
        return tuple(normalize_category(c) for c in self.categories)

    @cached_property
    def normalized_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.normalized)}


@dataclass(frozen=True)
class SampleRecord:
    hashed_id: str
    source_path: str
    label_index: int
    modality: str


@dataclass(frozen=True)
class DatasetManifest:
    category_set: CategorySet
    samples: tuple[SampleRecord, ...]
    declared_stats: tuple[int, int] | None = None

    def __post_init__(self):
        if self.declared_stats is not None:
            c, n = self.declared_stats
            if c != len(self.category_set) or n != len(self.samples):
                raise ValidationError(
                    f"declared stats ({c} classes, {n} samples) do not match body "
                    f"({len(self.category_set)} classes, {len(self.samples)} samples)"
                )


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse, hash, and validate a manifest file.

    Raises ParseError for malformed lines and ValidationError for invariant
    violations (unknown label, duplicate hashed ID, stats mismatch, empty body).
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()

    dataset_name = modality = None
    declared_c = declared_n = 0
    categories: list[str] = []
    samples: list[SampleRecord] = []
    seen_ids: dict[str, str] = {}

    stage = "header"
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if stage == "header":
            tokens = line.split()
            if tokens[0] != "#dataset" or len(tokens) < 5:
                raise ParseError("expected '#dataset <name> <modality> <C> <N>'", lineno)
            dataset_name = " ".join(tokens[1:-3])
            modality = tokens[-3]
            try:
                declared_c, declared_n = int(tokens[-2]), int(tokens[-1])
            except ValueError:
                raise ParseError("class/sample counts must be integers", lineno) from None
            stage = "body"
            continue
        if line.startswith("#cat"):
            if samples:
                raise ParseError("category line after sample records", lineno)
            parts = line.split(maxsplit=2)
            if len(parts) != 3:
                raise ParseError("expected '#cat <index> <name>'", lineno)
            try:
                index = int(parts[1])
            except ValueError:
                raise ParseError("category index must be an integer", lineno) from None
            if index != len(categories):
                raise ValidationError(
                    f"category index {index} out of order (expected {len(categories)})"
                )
            categories.append(parts[2])
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError("expected '<path>\\t<category_index>'", lineno)
        source_path, label_text = fields
        try:
            label_index = int(label_text)
        except ValueError:
            raise ParseError(f"label index {label_text!r} is not an integer", lineno) from None
        if not 0 <= label_index < len(categories):
            raise ValidationError(
                f"unknown label {label_index} for sample {source_path!r} "
                f"({len(categories)} categories declared)"
            )
        hashed = hash_sample_id(source_path, salt=dataset_name or "")
        if hashed in seen_ids:
            raise ValidationError(
                f"duplicate sample ID for {source_path!r} (collides with {seen_ids[hashed]!r})"
            )
        seen_ids[hashed] = source_path
        samples.append(SampleRecord(hashed, source_path, label_index, modality or ""))

    if stage == "header":
        raise ParseError("empty manifest", 1)
    if not samples:
        raise ValidationError("manifest contains no samples")
    category_set = CategorySet(dataset_name or "", tuple(categories), modality or "")
    return DatasetManifest(category_set, tuple(samples), (declared_c, declared_n))


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write the canonical manifest form (byte-identical reload round trip)."""
    cs = manifest.category_set
    out = [f"#dataset {cs.dataset_name} {cs.modality} {len(cs)} {len(manifest.samples)}"]
    for i, name in enumerate(cs.categories):
        out.append(f"#cat {i} {name}")
    for sample in manifest.samples:
        if "\t" in sample.source_path or "\n" in sample.source_path:
            raise ValidationError(f"path {sample.source_path!r} contains a tab or newline")
        out.append(f"{sample.source_path}\t{sample.label_index}")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
