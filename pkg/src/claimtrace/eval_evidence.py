"""Evidence scoring: evaluator-assisted component parsing, deterministic set/binary rules.

Statistical evidence is hybrid numeric-textual content, so a predicted span
is compared to its gold span component by component: three set-like
components (variables, effect relationships, confidence intervals) and two
binary ones (test/model family, sample size/df).  An evaluator model parses
both texts into those components; scoring is then a pure function of the
parsed fields.  A component absent from both sides is not applicable and is
excluded rather than counted as an error.

The bundled :class:`RuleBasedEvaluator` answers the same prompts offline
with regex parsing and normalized-string intersection.  Its matching rule is
a deterministic stand-in for the live evaluator's lenient matching, good
enough for tests and dry runs.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Optional

from .eval_hypothesis import PRF, f1_score
from .extraction import Span
from .providers import ModelProvider, ModelRequest, ModelResponse

logger = logging.getLogger(__name__)

SET_COMPONENTS = ("variables", "relationships", "confidence_intervals")
BINARY_COMPONENTS = ("test_family", "sample_size_df")
ALL_COMPONENTS = SET_COMPONENTS + BINARY_COMPONENTS

_COMPONENT_DESCRIPTIONS = {
    "variables": "distinct predictor, outcome, and construct variables",
    "relationships": "effect relationships (direction and significance statements)",
    "confidence_intervals": "confidence intervals",
    "test_family": "statistical test or model family",
    "sample_size_df": "sample size and degrees of freedom",
}


class EvidenceParseError(Exception):
    pass


@dataclass(frozen=True)
class SetOverlap:
    """Item counts for a set-like component: gold size, predicted size, shared."""

    size_a: int
    size_b: int
    intersection: int

    def __post_init__(self) -> None:
        if min(self.size_a, self.size_b, self.intersection) < 0:
            raise ValueError("counts must be non-negative")
        if self.intersection > min(self.size_a, self.size_b):
            raise ValueError("intersection exceeds a set size")

    @property
    def absent_both(self) -> bool:
        return self.size_a == 0 and self.size_b == 0


@dataclass(frozen=True)
class BinaryMatch:
    """Single-attribute component: extracted strings plus a match indicator."""

    gold_str: str
    pred_str: str
    match: int

    def __post_init__(self) -> None:
        if self.match not in (0, 1):
            raise ValueError("match must be 0 or 1")
        if self.match == 1 and (not self.gold_str or not self.pred_str):
            raise ValueError("match=1 requires both strings present")

    @property
    def absent_both(self) -> bool:
        return not self.gold_str and not self.pred_str


_EMPTY_SET = SetOverlap(0, 0, 0)
_EMPTY_BINARY = BinaryMatch("", "", 0)


@dataclass(frozen=True)
class ComponentParse:
    """The five components, always present; ``failed`` lists components whose
    evaluator response never validated (their values are placeholders and are
    excluded from scoring)."""

    variables: SetOverlap = _EMPTY_SET
    relationships: SetOverlap = _EMPTY_SET
    confidence_intervals: SetOverlap = _EMPTY_SET
    test_family: BinaryMatch = _EMPTY_BINARY
    sample_size_df: BinaryMatch = _EMPTY_BINARY
    failed: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("counts must be non-negative")

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def counts_prf(counts: Counts) -> PRF:
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    return PRF(precision=precision, recall=recall, f1=f1_score(precision, recall))


def score_set_component(s: SetOverlap) -> Optional[Counts]:
    """Overlap counts for one set component; None when absent from both sides."""
    if s.absent_both:
        return None
    return Counts(tp=s.intersection, fp=s.size_b - s.intersection, fn=s.size_a - s.intersection)


def score_binary_component(b: BinaryMatch) -> Optional[Counts]:
    """One-item agreement scoring; None when absent from both sides."""
    if b.absent_both:
        return None
    if not b.gold_str:
        return Counts(fp=1)
    if not b.pred_str:
        return Counts(fn=1)
    if b.match == 1:
        return Counts(tp=1)
    return Counts(fp=1, fn=1)


def score_evidence_pair(parse: ComponentParse) -> Counts:
    """Sum of the five component scores, skipping not-applicable and parse-failed."""
    total = Counts()
    for name in SET_COMPONENTS:
        if name in parse.failed:
            continue
        part = score_set_component(getattr(parse, name))
        if part is not None:
            total = total + part
    for name in BINARY_COMPONENTS:
        if name in parse.failed:
            continue
        part = score_binary_component(getattr(parse, name))
        if part is not None:
            total = total + part
    return total


_EVALUATOR_SYSTEM = (
    "You parse statistical evidence statements from scientific articles into"
    " structured fields. Reply with valid JSON only, exactly the requested"
    " keys, no other text. Count items leniently: paraphrases and rounding"
    " differences still count as the same item."
)

_STRICT_EVALUATOR_ADDENDUM = (
    " Your previous reply was not valid against the schema. Output only the"
    " JSON object this time."
)

_SET_REPLY_SCHEMA = (
    '{"size_a": <count in gold>, "size_b": <count in predicted>,'
    ' "intersection": <count present in both>, "explanation": "<short note>"}'
)
_BINARY_REPLY_SCHEMA = (
    '{"match": <1 if both texts state the same value, else 0>,'
    ' "gold_str": "<value in gold, empty string if absent>",'
    ' "pred_str": "<value in predicted, empty string if absent>",'
    ' "explanation": "<short note>"}'
)


def build_component_request(
    component: str,
    gold: str,
    predicted: str,
    model_id: str,
    strict: bool = False,
) -> ModelRequest:
    if component not in ALL_COMPONENTS:
        raise ValueError(f"unknown component {component!r}")
    schema = _SET_REPLY_SCHEMA if component in SET_COMPONENTS else _BINARY_REPLY_SCHEMA
    system = _EVALUATOR_SYSTEM + (_STRICT_EVALUATOR_ADDENDUM if strict else "")
    user = (
        f"Component: {component}\n"
        f"Compare the {_COMPONENT_DESCRIPTIONS[component]} reported in the two texts.\n\n"
        "GOLD:\n<<<\n"
        f"{gold}\n"
        ">>>\n\n"
        "PREDICTED:\n<<<\n"
        f"{predicted}\n"
        ">>>\n\n"
        f"Reply with JSON: {schema}\n"
        "Use zero counts / empty strings when a text reports none."
    )
    return ModelRequest(
        model_id=model_id,
        messages=(("system", system), ("user", user)),
        temperature=0.0,
        max_output=512,
    )


def _extract_json(text: str) -> Optional[dict]:
    text = text.strip()
    try:
        obj = json.loads(text)
        return obj if isinstance(obj, dict) else None
    except json.JSONDecodeError:
        pass
    start, end = text.find("{"), text.rfind("}")
    if start != -1 and end > start:
        try:
            obj = json.loads(text[start : end + 1])
            return obj if isinstance(obj, dict) else None
        except json.JSONDecodeError:
            return None
    return None


def _validate_set(obj: dict) -> Optional[SetOverlap]:
    try:
        overlap = SetOverlap(
            size_a=int(obj["size_a"]),
            size_b=int(obj["size_b"]),
            intersection=int(obj["intersection"]),
        )
    except (KeyError, TypeError, ValueError):
        return None
    return overlap


def _validate_binary(obj: dict) -> Optional[BinaryMatch]:
    try:
        match = BinaryMatch(
            gold_str=str(obj.get("gold_str", "")),
            pred_str=str(obj.get("pred_str", "")),
            match=int(obj["match"]),
        )
    except (KeyError, TypeError, ValueError):
        return None
    return match


def parse_components(
    gold: str,
    predicted: Span,
    evaluator: ModelProvider,
    model_id: str = "evaluator",
) -> ComponentParse:
    """Parse a gold/predicted evidence pair into the five-component schema.

    One evaluator call per component; a response that fails schema
    validation is retried once with a stricter instruction and otherwise
    marks the component as parse-failed.  A NOT_FOUND prediction is compared
    as empty text, so predicted-side counts come back empty.
    """
    if not gold or not gold.strip():
        raise ValueError("gold evidence must be non-empty")
    pred_text = predicted if isinstance(predicted, str) else ""

    values: dict[str, object] = {}
    failed: set[str] = set()
    for component in ALL_COMPONENTS:
        parsed: object = None
        for strict in (False, True):
            request = build_component_request(component, gold, pred_text, model_id, strict)
            response = evaluator.complete(request)
            obj = _extract_json(response.text)
            if obj is not None:
                parsed = (
                    _validate_set(obj)
                    if component in SET_COMPONENTS
                    else _validate_binary(obj)
                )
            if parsed is not None:
                break
        if parsed is None:
            failed.add(component)
            logger.warning("component %r failed schema validation after retry", component)
        else:
            values[component] = parsed
    return ComponentParse(failed=frozenset(failed), **values)  # type: ignore[arg-type]


# --- offline rule-based evaluator ------------------------------------------

_PROMPT_COMPONENT_RE = re.compile(r"^Component: (\w+)$", re.MULTILINE)
_PROMPT_GOLD_RE = re.compile(r"GOLD:\n<<<\n(.*?)\n>>>", re.DOTALL)
_PROMPT_PRED_RE = re.compile(r"PREDICTED:\n<<<\n(.*?)\n>>>", re.DOTALL)

_VARIABLE_RE = re.compile(
    r"\b(?:between|of|on|for|in)\s+((?:[a-z][a-z\-']*)(?:\s+[a-z][a-z\-']*){0,3})",
    re.IGNORECASE,
)
_EDGE_STOPWORDS = {
    "the", "a", "an", "their", "its", "his", "her", "this", "these", "those",
    "both", "each", "more", "less", "and", "or", "to", "that", "which", "was",
    "were", "is", "are", "than", "with", "terms",
}
_RELATION_CANON = {
    "higher": "higher", "lower": "lower", "more": "more", "less": "less",
    "greater": "higher", "smaller": "lower", "increase": "increase",
    "increased": "increase", "increases": "increase", "decrease": "decrease",
    "decreased": "decrease", "decreases": "decrease", "positive": "positive",
    "positively": "positive", "negative": "negative", "negatively": "negative",
    "significant": "significant", "significantly": "significant",
    "associated": "associated", "correlated": "correlated",
    "predicted": "predicts", "predicts": "predicts", "reduced": "decrease",
    "improved": "increase",
}
# Square brackets, or any bracket with an explicit CI prefix; bare parens are
# too easy to confuse with test-statistic dfs like F(1, 68).
_CI_RES = (
    re.compile(r"\[\s*([-+]?\d+(?:\.\d+)?)\s*,\s*([-+]?\d+(?:\.\d+)?)\s*\]"),
    re.compile(
        r"\d{1,2}\s*%\s*CI\s*[\[(]\s*([-+]?\d+(?:\.\d+)?)\s*,\s*([-+]?\d+(?:\.\d+)?)\s*[\])]",
        re.IGNORECASE,
    ),
)
_TEST_RE = re.compile(
    r"\b(F|t|z|r|b|β|χ2|χ²|chi-square(?:d)?|ANOVA|ANCOVA|MANOVA|regression|correlation)"
    r"\s*(?:\(|\s*=|\s*test)",
    re.IGNORECASE,
)
_N_RE = re.compile(r"\bN\s*=\s*(\d+)", re.IGNORECASE)
_DF_EQ_RE = re.compile(r"\bdf\s*=\s*(\d+(?:\.\d+)?)", re.IGNORECASE)
_DF_PAREN_RE = re.compile(r"\b[Ftz]\s*\(\s*(\d+(?:\.\d+)?)\s*(?:,\s*(\d+(?:\.\d+)?))?\s*\)")

_TEST_FAMILIES = {
    "f": "F", "t": "t", "z": "z", "r": "r", "b": "regression", "β": "regression",
    "χ2": "chi-square", "χ²": "chi-square", "chi-square": "chi-square",
    "chi-squared": "chi-square", "anova": "F", "ancova": "F", "manova": "F",
    "regression": "regression", "correlation": "r",
}


def _extract_variables(text: str) -> set[str]:
    items = set()
    for match in _VARIABLE_RE.finditer(text):
        words = match.group(1).lower().split()
        while words and words[0] in _EDGE_STOPWORDS:
            words = words[1:]
        while words and words[-1] in _EDGE_STOPWORDS:
            words = words[:-1]
        phrase = " ".join(words)
        if len(phrase) >= 3:
            items.add(phrase)
    return items


def _extract_relationships(text: str) -> set[str]:
    items = set()
    for word in re.findall(r"[a-zA-Z\-]+", text.lower()):
        canon = _RELATION_CANON.get(word)
        if canon:
            items.add(canon)
    return items


def _extract_cis(text: str) -> set[str]:
    return {f"[{a}, {b}]" for pattern in _CI_RES for a, b in pattern.findall(text)}


def _extract_test(text: str) -> str:
    match = _TEST_RE.search(text)
    if not match:
        return ""
    return _TEST_FAMILIES.get(match.group(1).lower(), match.group(1))


def _extract_sample(text: str) -> str:
    parts = []
    n_match = _N_RE.search(text)
    if n_match:
        parts.append(f"N={n_match.group(1)}")
    df_match = _DF_EQ_RE.search(text)
    if df_match:
        parts.append(f"df={df_match.group(1)}")
    else:
        paren = _DF_PAREN_RE.search(text)
        if paren:
            df = paren.group(2) or paren.group(1)
            parts.append(f"df={df}")
    return ";".join(parts)


class RuleBasedEvaluator:
    """Deterministic offline evaluator answering the component prompts.

    Regex extraction with normalized-equality intersection; not the live
    evaluator's lenient matching, but stable and network-free.
    """

    def __init__(self) -> None:
        self.calls = 0

    def complete(self, request: ModelRequest) -> ModelResponse:
        self.calls += 1
        prompt = "\n".join(content for _, content in request.messages)
        component_m = _PROMPT_COMPONENT_RE.search(prompt)
        gold_m = _PROMPT_GOLD_RE.search(prompt)
        pred_m = _PROMPT_PRED_RE.search(prompt)
        if not (component_m and gold_m and pred_m):
            raise EvidenceParseError("rule-based evaluator got an unrecognized prompt")
        component = component_m.group(1)
        gold, pred = gold_m.group(1), pred_m.group(1)

        if component in SET_COMPONENTS:
            extract = {
                "variables": _extract_variables,
                "relationships": _extract_relationships,
                "confidence_intervals": _extract_cis,
            }[component]
            set_a, set_b = extract(gold), extract(pred)
            body = {
                "size_a": len(set_a),
                "size_b": len(set_b),
                "intersection": len(set_a & set_b),
                "explanation": "rule-based",
            }
        else:
            extract_one = _extract_test if component == "test_family" else _extract_sample
            gold_str, pred_str = extract_one(gold), extract_one(pred)
            body = {
                "match": 1 if gold_str and pred_str and gold_str == pred_str else 0,
                "gold_str": gold_str,
                "pred_str": pred_str,
                "explanation": "rule-based",
            }
        return ModelResponse(text=json.dumps(body))
