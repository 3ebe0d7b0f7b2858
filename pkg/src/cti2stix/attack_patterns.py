"""Attack-pattern (technique) extraction.

Three candidate-generation strategies feed one embedding classifier:

* ``vte`` — ask the model to quote report text relevant to attacker
  techniques, verbatim; quoted paragraphs become candidates.  A guard drops
  any response text that is not actually a substring of the chunk (the model
  paraphrased), because a non-verbatim "quote" can smuggle in hallucinated
  behavior.
* ``sbsa`` — ask for a step-by-step restatement of key facts; each step is a
  candidate.  Steps are model prose, not quotes, so no verbatim guard.
* ``ot`` — no model at all: every sentence of the report is a candidate.

Each unique candidate text is embedded once and compared (cosine) against
every catalog example; a technique matches when its best example scores at or
above the threshold.  Explicit technique ids written in the report (T1059,
T1027.002, ...) are unioned in regardless of scores.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .catalog import TECHNIQUE_ID_RE, TechniqueCatalog, parent_technique
from .entity_pipeline import AuditTrail, chunk_text
from .ingest import Report, segment_sentences
from .llm import CompletionRequest, estimate_tokens

logger = logging.getLogger(__name__)

VTE_PROMPT = (
    "Use the following portion of a long document to see if any of the text is "
    "relevant to answer the question. Return any relevant text verbatim.\n"
    "{text}\n"
    "Question: Which techniques are used by the attacker?\n"
    "Report only Relevant text, if any"
)

SBSA_PROMPT = (
    "Describe step by step the key facts in the following text:\n"
    "{text}\n"
    "KEY FACTS:"
)

_NEGATIVE_RESPONSES = frozenset(
    {"", "none", "none.", "no", "no relevant text", "no relevant text.", "n/a",
     "no relevant text found", "no relevant text found.", "there is no relevant text."}
)
_STEP_PREFIX_RE = re.compile(r"^\s*(?:\d+[.):]\s*|[-*•]\s+|step\s+\d+\s*[:.]\s*)", re.IGNORECASE)
_WS_RE = re.compile(r"\s+")


@dataclass
class AttackPatternConfig:
    strategies: tuple[str, ...] = ("vte", "sbsa", "ot")
    threshold: float = 0.80
    chunk_tokens: int = 1024
    strategy_output_tokens: int = 512
    include_explicit: bool = True


@dataclass
class Candidate:
    text: str
    origin: str  # "vte" | "sbsa" | "ot"
    source_id: str


@dataclass
class TechniqueMatch:
    technique_id: str
    name: Optional[str]
    score: Optional[float]  # None for matches from explicit ids only
    example_id: Optional[str]
    candidate: Optional[Candidate]
    explicit: bool = False
    supporting: list[str] = field(default_factory=list)


@dataclass
class AttackPatternResult:
    report_id: str
    matches: list[TechniqueMatch]
    candidate_counts: dict[str, int]
    warnings: list[dict[str, Any]]
    audit: AuditTrail

    def technique_ids(self) -> list[str]:
        return [m.technique_id for m in self.matches]


def _squash_ws(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def _strategy_chunks(report: Report, config: AttackPatternConfig, provider: Any,
                     prompt_template: str) -> list[str]:
    overhead = estimate_tokens(prompt_template.format(text=""))
    usable = provider.config.usable_window() if hasattr(provider, "config") else None
    budget = config.chunk_tokens
    if usable is not None:
        budget = min(budget, usable - config.strategy_output_tokens - overhead)
    return chunk_text(report.text, budget)


def strategy_vte(report: Report, provider: Any, config: AttackPatternConfig,
                 audit: AuditTrail, warnings: list[dict[str, Any]]) -> list[Candidate]:
    """Verbatim-text-extraction: quote relevant passages, one candidate per
    quoted paragraph, with a whitespace-insensitive substring guard."""
    candidates: list[Candidate] = []
    for i, chunk in enumerate(_strategy_chunks(report, config, provider, VTE_PROMPT)):
        prompt = VTE_PROMPT.format(text=chunk)
        audit.record("attack-pattern", "prompt", strategy="vte", chunk=i, text=prompt,
                     reserved_output=config.strategy_output_tokens)
        response = provider.complete(
            CompletionRequest(prompt=prompt, max_output_tokens=config.strategy_output_tokens)
        )
        audit.record("attack-pattern", "response", strategy="vte", chunk=i, text=response)
        if response.strip().casefold() in _NEGATIVE_RESPONSES:
            continue
        squashed_chunk = _squash_ws(chunk).casefold()
        for para in re.split(r"\n\s*\n", response):
            para = para.strip()
            if not para or para.casefold() in _NEGATIVE_RESPONSES:
                continue
            if _squash_ws(para).casefold() in squashed_chunk:
                candidates.append(Candidate(text=para, origin="vte", source_id=f"chunk-{i}"))
            else:
                warnings.append({
                    "kind": "non-verbatim",
                    "strategy": "vte",
                    "chunk": i,
                    "text": para,
                })
                logger.warning("vte response not verbatim in chunk %d; dropped: %.60s", i, para)
    return candidates


def strategy_sbsa(report: Report, provider: Any, config: AttackPatternConfig,
                  audit: AuditTrail) -> list[Candidate]:
    """Step-by-step abstraction: each step line of the response is a candidate."""
    candidates: list[Candidate] = []
    for i, chunk in enumerate(_strategy_chunks(report, config, provider, SBSA_PROMPT)):
        prompt = SBSA_PROMPT.format(text=chunk)
        audit.record("attack-pattern", "prompt", strategy="sbsa", chunk=i, text=prompt,
                     reserved_output=config.strategy_output_tokens)
        response = provider.complete(
            CompletionRequest(prompt=prompt, max_output_tokens=config.strategy_output_tokens)
        )
        audit.record("attack-pattern", "response", strategy="sbsa", chunk=i, text=response)
        for n, line in enumerate(response.splitlines()):
            step = _STEP_PREFIX_RE.sub("", line).strip()
            if not step or step.casefold() in _NEGATIVE_RESPONSES:
                continue
            candidates.append(Candidate(text=step, origin="sbsa", source_id=f"chunk-{i}-step-{n}"))
    return candidates


def strategy_ot(report: Report) -> list[Candidate]:
    """One-sentence-at-a-time: every sentence is a candidate, no model calls."""
    sentences = report.sentences or segment_sentences(report.text)
    out = []
    for s in sentences:
        text = s.text.strip()
        if text:
            out.append(Candidate(text=text, origin="ot", source_id=f"sentence-{s.index}"))
    return out


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors; 0.0 when either has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def classify_vector(
    vector: np.ndarray, catalog: TechniqueCatalog, threshold: float
) -> list[tuple[str, float, str]]:
    """All techniques whose best catalog example scores >= threshold.

    Returns ``(technique_id, best_score, best_example_id)`` tuples sorted by
    technique id.  Multi-label on purpose: one sentence can exhibit several
    techniques.
    """
    best: dict[str, tuple[float, str]] = {}
    for entry in catalog.entries:
        score = cosine_similarity(vector, entry.vector)
        prev = best.get(entry.technique_id)
        if prev is None or score > prev[0]:
            best[entry.technique_id] = (score, entry.example_id)
    return sorted(
        (tid, score, example_id)
        for tid, (score, example_id) in best.items()
        if score >= threshold
    )


def detect_explicit_techniques(text: str) -> list[str]:
    """Technique ids written out in the text, collapsed to parents, first
    occurrence order, deduplicated."""
    seen: list[str] = []
    for match in TECHNIQUE_ID_RE.finditer(text):
        parent = parent_technique(match.group(0))
        if parent not in seen:
            seen.append(parent)
    return seen


def run_attack_pattern_pipeline(
    report: Report,
    catalog: TechniqueCatalog,
    provider: Any,
    config: Optional[AttackPatternConfig] = None,
) -> AttackPatternResult:
    config = config or AttackPatternConfig()
    audit = AuditTrail(report.id)
    warnings: list[dict[str, Any]] = []

    candidates: list[Candidate] = []
    counts: dict[str, int] = {}
    for strategy in config.strategies:
        if strategy == "vte":
            found = strategy_vte(report, provider, config, audit, warnings)
        elif strategy == "sbsa":
            found = strategy_sbsa(report, provider, config, audit)
        elif strategy == "ot":
            found = strategy_ot(report)
        else:
            raise ValueError(f"unknown strategy: {strategy!r}")
        counts[strategy] = len(found)
        candidates.extend(found)
    audit.record("attack-pattern", "decision", rule="candidates", counts=dict(counts))

    unique_texts: list[str] = []
    seen_texts: set[str] = set()
    for c in candidates:
        if c.text not in seen_texts:
            seen_texts.add(c.text)
            unique_texts.append(c.text)
    vectors = provider.embed(unique_texts) if unique_texts else []
    by_text = {text: np.asarray(vec, dtype=np.float64) for text, vec in zip(unique_texts, vectors)}

    names = catalog.technique_names()
    matches: dict[str, TechniqueMatch] = {}
    for candidate in candidates:
        for tid, score, example_id in classify_vector(by_text[candidate.text], catalog,
                                                      config.threshold):
            current = matches.get(tid)
            if current is None:
                matches[tid] = TechniqueMatch(
                    technique_id=tid, name=names.get(tid), score=score,
                    example_id=example_id, candidate=candidate,
                    supporting=[candidate.text],
                )
            else:
                if candidate.text not in current.supporting:
                    current.supporting.append(candidate.text)
                if current.score is None or score > current.score:
                    current.score = score
                    current.example_id = example_id
                    current.candidate = candidate

    if config.include_explicit:
        for tid in detect_explicit_techniques(report.text):
            if tid in matches:
                matches[tid].explicit = True
            else:
                matches[tid] = TechniqueMatch(
                    technique_id=tid, name=names.get(tid), score=None,
                    example_id=None, candidate=None, explicit=True,
                )
            audit.record("attack-pattern", "decision", rule="explicit-id", technique=tid)

    ordered = [matches[tid] for tid in sorted(matches)]
    return AttackPatternResult(
        report_id=report.id,
        matches=ordered,
        candidate_counts=counts,
        warnings=warnings,
        audit=audit,
    )
