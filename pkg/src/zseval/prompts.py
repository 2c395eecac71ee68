"""Category prompt generation and composition.

Four prompt modes: bare category names (baseline), a fixed per-modality
template (handcrafted), model-generated descriptive sentences (gpt), and
template + sentence concatenation (combined). Generated prompt sets are
persisted to text files and treated as frozen inputs afterwards, so
evaluation runs never depend on live API access.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from .manifest import CategorySet

MODES = ("baseline", "handcrafted", "gpt", "combined")

DEFAULT_TEMPLATES = {
    "image": "A photo of a {}.",
    "video": "A video of a person {}.",
    "pointcloud": "A point cloud depth map of a {}.",
}

_ENUM_LINE = re.compile(r"^\s*(?:\d+\s*[.)\]:]\s*|[-*•]\s+)(.*\S)\s*$")


class PromptError(Exception):
    pass


class CountMismatch(PromptError):
    """Extracted sentence count differs from the requested count."""

    def __init__(self, found: int, expected: int):
        super().__init__(f"found {found} sentences, expected {expected}")
        self.found = found
        self.expected = expected


class MissingInput(PromptError):
    pass


@dataclass(frozen=True)
class GenerationPolicy:
    model_name: str = "gpt-4-1106-preview"
    sentence_count: int = 20
    max_retries: int = 3
    temperature: float = 0.7

    def __post_init__(self):
        if self.sentence_count < 1:
            raise ValueError("sentence_count must be >= 1")


@dataclass(frozen=True)
class PromptSet:
    """Per-category prompt sentences for one dataset and mode."""

    dataset_name: str
    mode: str
    category_names: tuple[str, ...]
    sentences: tuple[tuple[str, ...], ...]
    sentence_count: int
    template: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if len(self.sentences) != len(self.category_names):
            raise ValueError("one sentence block per category required")
        counts = {len(block) for block in self.sentences}
        if counts != {self.sentence_count}:
            raise ValueError(
                f"all categories must carry exactly {self.sentence_count} sentences, got {sorted(counts)}"
            )
        if self.mode in ("baseline", "handcrafted") and self.sentence_count != 1:
            raise ValueError(f"{self.mode} mode carries exactly one sentence per category")
        for block in self.sentences:
            for sentence in block:
                if not sentence.strip():
                    raise ValueError("sentences must be non-empty")
                if "\n" in sentence or sentence.startswith("#"):
                    raise ValueError(f"sentence not persistable: {sentence!r}")


def build_description_request(
    category: str, dataset_context: str, policy: GenerationPolicy
) -> dict:
    """Chat request asking for exactly K numbered, visually descriptive sentences."""
    text = (
        f"Generate exactly {policy.sentence_count} numbered sentences, one per line, "
        f'visually describing the category "{category}" in the context of '
        f"{dataset_context}. Focus on distinctive visible traits such as shape, "
        f"color, texture, and typical surroundings. Output only the numbered "
        f"sentences, nothing else."
    )
    return {
        "model": policy.model_name,
        "temperature": policy.temperature,
        "messages": [{"role": "user", "content": text}],
    }


def _extract_sentences(text: str) -> list[str]:
    """Enumerated lines with markers stripped; all non-empty lines as fallback."""
    sentences = []
    for line in text.splitlines():
        m = _ENUM_LINE.match(line)
        if m:
            sentences.append(m.group(1).strip())
    if sentences:
        return sentences
    return [line.strip() for line in text.splitlines() if line.strip()]


def parse_description_response(text: str, expected_count: int) -> list[str]:
    """Return exactly expected_count sentences or raise CountMismatch."""
    sentences = _extract_sentences(text)
    if len(sentences) != expected_count:
        raise CountMismatch(len(sentences), expected_count)
    return sentences


def compose_prompts(
    category: str,
    mode: str,
    template: str | None = None,
    gpt_sentences: Sequence[str] | None = None,
) -> list[str]:
    """Final prompt strings for one category under the given mode."""
    if mode == "baseline":
        return [category]
    if mode == "handcrafted":
        if template is None:
            raise MissingInput("handcrafted mode requires a template")
        return [template.format(category)]
    if mode == "gpt":
        if not gpt_sentences:
            raise MissingInput("gpt mode requires generated sentences")
        return list(gpt_sentences)
    if mode == "combined":
        if template is None:
            raise MissingInput("combined mode requires a template")
        if not gpt_sentences:
            raise MissingInput("combined mode requires generated sentences")
        prefix = template.format(category)
        return [f"{prefix} {sentence}" for sentence in gpt_sentences]
    raise ValueError(f"unknown mode {mode!r}")


def generate_category_descriptions(
    category: str,
    dataset_context: str,
    policy: GenerationPolicy,
    chat: Callable[[dict], str],
) -> list[str]:
    """Generate exactly K sentences, retrying count mismatches.

    After max_retries the last response is salvaged: overlong lists are
    truncated, short ones are topped up with a request for the missing count.
    """
    expected = policy.sentence_count
    last_text = ""
    for _ in range(policy.max_retries + 1):
        last_text = chat(build_description_request(category, dataset_context, policy))
        try:
            return parse_description_response(last_text, expected)
        except CountMismatch:
            continue
    sentences = _extract_sentences(last_text)
    if len(sentences) > expected:
        return sentences[:expected]
    missing = expected - len(sentences)
    top_up = replace(policy, sentence_count=missing)
    more = _extract_sentences(chat(build_description_request(category, dataset_context, top_up)))
    sentences = (sentences + more)[:expected]
    if len(sentences) < expected:
        raise CountMismatch(len(sentences), expected)
    return sentences


def build_prompt_set(
    categories: CategorySet,
    mode: str,
    template: str | None = None,
    gpt_sentences: Sequence[Sequence[str]] | None = None,
) -> PromptSet:
    """Assemble a PromptSet by composing prompts for every category."""
    if mode in ("handcrafted", "combined") and template is None:
        template = DEFAULT_TEMPLATES[categories.modality]
    blocks = []
    for i, name in enumerate(categories.categories):
        per_cat = gpt_sentences[i] if gpt_sentences is not None else None
        blocks.append(tuple(compose_prompts(name, mode, template, per_cat)))
    return PromptSet(
        dataset_name=categories.dataset_name,
        mode=mode,
        category_names=tuple(categories.categories),
        sentences=tuple(blocks),
        sentence_count=len(blocks[0]),
        template=template,
    )


def write_prompt_set(prompt_set: PromptSet, path: str | Path) -> None:
    out = [
        f"#promptset {prompt_set.dataset_name} {prompt_set.mode} {prompt_set.sentence_count}"
    ]
    for i, name in enumerate(prompt_set.category_names):
        out.append(f"#cat {i} {name}")
        out.extend(prompt_set.sentences[i])
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def read_prompt_set(path: str | Path) -> PromptSet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#promptset"):
        raise PromptError(f"{path}: missing #promptset header")
    tokens = lines[0].split()
    if len(tokens) < 4:
        raise PromptError(f"{path}: malformed header")
    dataset = " ".join(tokens[1:-2])
    mode = tokens[-2]
    try:
        count = int(tokens[-1])
    except ValueError:
        raise PromptError(f"{path}: bad sentence count {tokens[-1]!r}") from None

    names: list[str] = []
    blocks: list[tuple[str, ...]] = []
    current: list[str] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        if line.startswith("#cat"):
            if names:
                blocks.append(tuple(current))
            parts = line.split(maxsplit=2)
            if len(parts) != 3:
                raise PromptError(f"{path}: malformed category line {line!r}")
            names.append(parts[2])
            current = []
        else:
            current.append(line)
    if names:
        blocks.append(tuple(current))
    return PromptSet(
        dataset_name=dataset,
        mode=mode,
        category_names=tuple(names),
        sentences=tuple(blocks),
        sentence_count=count,
    )
