"""Turn free-form vision-model responses into validated top-5 predictions.

Extraction tries, in order: a mapping keyed by the expected sample ID, a
numbered/bulleted list, and a comma list following a "top 5" cue. Extracted
names are matched against the category set (exact after normalization, then
conservative fuzzy matching); names outside the list are dropped and
recorded rather than failing the sample.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass

from .ensemble import Prediction
from .manifest import CategorySet, SampleRecord, normalize_category
from .vlm import RawResponse

STATUSES = ("ok", "partial", "unparseable", "refused")

_BRACED = re.compile(r"\{.*\}", re.DOTALL)
_BRACED_SMALL = re.compile(r"\{.*?\}", re.DOTALL)
_NUMBERED = re.compile(r"^\s*(?:\d+\s*[.)\]:]\s*|[-*•]\s+)(.*\S)\s*$")
_TOP5_CUE = re.compile(r"top\s*-?\s*5", re.IGNORECASE)


class ParsingError(Exception):
    pass


class Unparseable(ParsingError):
    """No extraction strategy produced a single candidate."""


@dataclass(frozen=True)
class MatchPolicy:
    max_edit_distance: int = 2
    max_relative_distance: float = 0.2

    def __post_init__(self):
        if self.max_edit_distance < 0 or self.max_relative_distance < 0:
            raise ValueError("match thresholds must be non-negative")


@dataclass(frozen=True)
class ParseOutcome:
    status: str
    prediction: Prediction | None
    dropped_out_of_list: tuple[str, ...] = ()

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"status must be one of {STATUSES}")
        if self.status in ("ok", "partial") and (
            self.prediction is None or not self.prediction.ranked
        ):
            raise ValueError(f"status {self.status} requires a non-empty prediction")
        if self.status in ("unparseable", "refused") and self.prediction is not None:
            raise ValueError(f"status {self.status} cannot carry a prediction")


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        previous = current
    return previous[-1]


def _clean_candidate(raw: str) -> str:
    text = raw.strip().strip("`").strip()
    text = text.strip("\"'").strip()
    text = text.strip("*").strip()
    if text.lower().startswith("and "):
        text = text[4:].strip()
    return text


def _parse_mapping_span(span: str) -> dict | None:
    for loader in (json.loads, ast.literal_eval):
        try:
            value = loader(span)
        except Exception:
            continue
        if isinstance(value, dict):
            return value
    return None


def _candidates_from_mapping(text: str, expected_key: str) -> list[str] | None:
    spans = []
    greedy = _BRACED.search(text)
    if greedy:
        spans.append(greedy.group(0))
    spans.extend(m.group(0) for m in _BRACED_SMALL.finditer(text))
    for span in spans:
        mapping = _parse_mapping_span(span)
        if mapping is None:
            continue
        value = None
        if expected_key in mapping:
            value = mapping[expected_key]
        else:
            lowered = {str(k).lower(): v for k, v in mapping.items()}
            if expected_key.lower() in lowered:
                value = lowered[expected_key.lower()]
            elif len(mapping) == 1:
                value = next(iter(mapping.values()))
        if value is None:
            continue
        if isinstance(value, str):
            return [part for part in (p.strip() for p in value.split(",")) if part]
        if isinstance(value, (list, tuple)):
            return [str(v) for v in value]
    return None


def _candidates_from_numbering(text: str) -> list[str]:
    return [m.group(1) for line in text.splitlines() if (m := _NUMBERED.match(line))]


def _candidates_from_cue(text: str) -> list[str]:
    lines = text.splitlines()
    for i, line in enumerate(lines):
        if not _TOP5_CUE.search(line):
            continue
        payload = line.split(":", 1)[1] if ":" in line else _TOP5_CUE.split(line)[-1]
        if not payload.strip() and i + 1 < len(lines):
            payload = lines[i + 1]
        parts = [p.strip() for p in payload.split(",")]
        candidates = [p for p in parts if p]
        if candidates:
            return candidates
    return []


def extract_ranked_list(text: str, expected_key: str) -> list[str]:
    """Raw candidate names in rank order, deduplicated and capped at 5."""
    candidates = _candidates_from_mapping(text, expected_key)
    if not candidates:
        candidates = _candidates_from_numbering(text)
    if not candidates:
        candidates = _candidates_from_cue(text)

    cleaned: list[str] = []
    seen: set[str] = set()
    for raw in candidates or []:
        name = _clean_candidate(raw)
        if not name:
            continue
        norm = normalize_category(name)
        if norm in seen:
            continue
        seen.add(norm)
        cleaned.append(name)
        if len(cleaned) == 5:
            break
    if not cleaned:
        raise Unparseable("no extraction strategy produced candidates")
    return cleaned


def match_category(
    raw: str, categories: CategorySet, policy: MatchPolicy | None = None
) -> int | None:
    """Exact normalized match, else nearest within the edit-distance budget."""
    policy = policy or MatchPolicy()
    norm = normalize_category(raw)
    exact = categories.normalized_index.get(norm)
    if exact is not None:
        return exact
    if not norm:
        return None
    best_index = None
    best_distance = None
    for i, cat in enumerate(categories.normalized):
        d = levenshtein(norm, cat)
        if best_distance is None or d < best_distance:
            best_index, best_distance = i, d
    assert best_distance is not None
    if (
        best_distance <= policy.max_edit_distance
        and best_distance / len(norm) <= policy.max_relative_distance
    ):
        return best_index
    return None


def parse_topk(
    response: RawResponse,
    sample: SampleRecord,
    categories: CategorySet,
    policy: MatchPolicy | None = None,
) -> ParseOutcome:
    """Classify a raw response into ok/partial/unparseable/refused.

    Out-of-list names are dropped and recorded; duplicate matches keep their
    first rank. Failure modes are statuses, never exceptions, so a run never
    aborts on one bad response.
    """
    if response.refusal:
        return ParseOutcome("refused", None)
    try:
        raws = extract_ranked_list(response.text, sample.hashed_id)
    except Unparseable:
        return ParseOutcome("unparseable", None)

    matched: list[int] = []
    dropped: list[str] = []
    for raw in raws:
        index = match_category(raw, categories, policy)
        if index is None:
            dropped.append(raw)
        elif index not in matched:
            matched.append(index)
    if not matched:
        return ParseOutcome("unparseable", None, tuple(dropped))
    status = "ok" if not dropped else "partial"
    return ParseOutcome(status, Prediction(tuple(matched)), tuple(dropped))


_ESCAPES = [("\\", "\\\\"), ("\t", "\\t"), ("\n", "\\n"), (",", "\\c")]


def _escape(text: str) -> str:
    for char, repl in _ESCAPES:
        text = text.replace(char, repl)
    return text


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        if text[i] == "\\" and i + 1 < len(text):
            out.append({"\\": "\\", "t": "\t", "n": "\n", "c": ","}.get(text[i + 1], text[i + 1]))
            i += 2
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def format_log_line(hashed_id: str, outcome: ParseOutcome) -> str:
    """One run-log line: id, status, ranked indices, dropped raw strings."""
    ranked = ",".join(str(i) for i in outcome.prediction.ranked) if outcome.prediction else ""
    dropped = ",".join(_escape(s) for s in outcome.dropped_out_of_list)
    return f"{hashed_id}\t{outcome.status}\t{ranked}\t{dropped}"


def parse_log_line(line: str) -> tuple[str, ParseOutcome]:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 4:
        raise ParsingError(f"run-log line needs 4 fields, got {len(fields)}: {line!r}")
    hashed_id, status, ranked_text, dropped_text = fields
    try:
        prediction = None
        if ranked_text:
            prediction = Prediction(tuple(int(i) for i in ranked_text.split(",")))
        dropped = tuple(
            _unescape(part) for part in dropped_text.split(",") if part
        ) if dropped_text else ()
        return hashed_id, ParseOutcome(status, prediction, dropped)
    except ValueError as exc:
        raise ParsingError(f"corrupt run-log line {line!r}: {exc}") from exc
