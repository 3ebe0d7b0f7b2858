"""The named-entity pipeline: condense, extract, verify, relate, assemble.

The flow for one report:

1. **Condense** — if the report does not fit the prompt budget, summarize it
   chunk by chunk and re-join, repeating until it fits (iterative
   summarization).  Reports that already fit pass through verbatim.
2. **Extract** — one question per entity kind, asked against the condensed
   text (or against every chunk when preprocessing is ablated), each with a
   short definition of the kind.
3. **Verify** — every candidate name must be grounded in the *original*
   report: first a literal substring check, then a yes/no question per chunk
   for names the model may have reworded.  Unverifiable names are dropped and
   logged as inconsistencies; this is the hallucination guard.
4. **Relate** — for each ordered pair of verified entities with at least one
   admissible relation kind, ask one direct question whose answer is
   constrained to those kinds (or "none").  Extracted target names become
   Identity entities and receive a Targets edge from each principal Malware
   and ThreatActor; that edge is implied by the target question itself, so it
   is attached without an extra query.
5. **IoCs** — regex indicators and CVEs from the raw text, with Indicates
   edges from each indicator to the principal malware.

Every prompt, response, and decision is recorded on an audit trail so runs
can be replayed and inspected.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .ingest import Report, segment_sentences
from .iocs import ioc_entities
from .llm import CompletionRequest, ProviderConfig, estimate_tokens
from .stix import (
    DEFAULT_NAMESPACE_SEED,
    EntityKind,
    RelationKind,
    StixBundle,
    StixEntity,
    StixRelation,
    admissible_relations,
    entity_id,
    new_bundle,
    relation_id,
)

logger = logging.getLogger(__name__)

SUMMARY_PROMPT = "Write a concise summary of the following:\n{text}\nCONCISE SUMMARY:"

ENTITY_PROMPT = (
    "Use the following pieces of context to answer the question at the end.\n"
    "{context}\n"
    "{definition}\n"
    "Question: {question}\n"
    "Answer with one name per line; write none if absent."
)

VERIFY_PROMPT = (
    "Use the following portion of a long document to answer the question at the end.\n"
    "{text}\n"
    'Question: Is "{name}" mentioned in the text above? Answer yes or no.'
)

RELATION_PROMPT = (
    "Use the following pieces of context to answer the question at the end.\n"
    "{context}\n"
    'Question: What is the relation between "{source}" and "{target}"? '
    "Answer with one of: {options}, or none."
)

_NEGATIVE_ANSWERS = frozenset({"none", "n/a", "na", "nothing", "unknown", "no one", "not specified"})
_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d{1,2}[.)])\s+")
_ANSWER_PREFIX_RE = re.compile(r"^\s*answer\s*:\s*", re.IGNORECASE)


class PipelineError(Exception):
    """Base class for pipeline failures."""


class CondensationError(PipelineError):
    """Iterative summarization could not reach the token budget."""


@dataclass
class EntityQuery:
    """One extraction question: which kind to look for, how it is defined,
    and what to ask."""

    name: str
    entity_kind: EntityKind
    definition: str
    question: str


# Definitions paraphrase the STIX 2.1 vocabulary; they are configuration, not
# code — override them per deployment via the config file.
DEFAULT_QUERIES: list[EntityQuery] = [
    EntityQuery(
        name="malware",
        entity_kind=EntityKind.MALWARE,
        definition=(
            "Malware is malicious software or code — such as ransomware, a trojan, "
            "a backdoor, or a worm — inserted into a system to compromise the "
            "confidentiality, integrity, or availability of data or applications."
        ),
        question="Who/which is the malware used in the described attack?",
    ),
    EntityQuery(
        name="threat_actor",
        entity_kind=EntityKind.THREAT_ACTOR,
        definition=(
            "A threat actor is an individual, group, or organization believed to be "
            "operating with malicious intent, such as a cybercriminal crew or an "
            "espionage group."
        ),
        question="Who/which is the threat actor performing the described attack?",
    ),
    EntityQuery(
        name="target",
        entity_kind=EntityKind.IDENTITY,
        definition=(
            "A target is the individual, organization, sector, or class of systems "
            "that the described attack is directed against."
        ),
        question="Who/which is the target of the described attack?",
    ),
]


@dataclass
class EntityPipelineConfig:
    preprocessing: bool = True
    queries: list[EntityQuery] = field(default_factory=lambda: list(DEFAULT_QUERIES))
    chunk_tokens: int = 1024
    summary_output_tokens: int = 512
    answer_output_tokens: int = 256
    condense_iteration_cap: int = 3
    relation_prompt_slack: int = 160
    namespace_seed: str = DEFAULT_NAMESPACE_SEED

    def query_names(self) -> list[str]:
        return [q.name for q in self.queries]


@dataclass
class CondensedReport:
    report_id: str
    text: str
    iterations: int
    source_tokens: int
    condensed_tokens: int


@dataclass
class ExtractedEntity:
    """One candidate name with its provenance and verification outcome."""

    query: str
    entity_kind: EntityKind
    name: str
    verified: bool
    method: str  # "literal", "llm", or "" when unverified
    context_id: str


@dataclass
class AuditEvent:
    seq: int
    stage: str
    event: str
    data: dict[str, Any]


class AuditTrail:
    """Ordered record of everything a pipeline run did, JSONL-serializable."""

    def __init__(self, report_id: str):
        self.report_id = report_id
        self.events: list[AuditEvent] = []

    def record(self, stage: str, event: str, **data: Any) -> None:
        self.events.append(AuditEvent(len(self.events), stage, event, data))

    def prompts(self) -> list[tuple[str, int]]:
        """(prompt text, reserved output tokens) for every issued prompt."""
        return [
            (e.data["text"], e.data["reserved_output"])
            for e in self.events
            if e.event == "prompt"
        ]

    def to_jsonl(self) -> str:
        lines = []
        for e in self.events:
            record = {"seq": e.seq, "report": self.report_id, "stage": e.stage, "event": e.event}
            record.update(e.data)
            lines.append(json.dumps(record, ensure_ascii=False))
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class EntityPipelineResult:
    report_id: str
    bundle: StixBundle
    condensed: CondensedReport | None
    extracted: list[ExtractedEntity]
    warnings: list[dict[str, str]]
    audit: AuditTrail


# ---------------------------------------------------------------------------
# chunking


def _split_oversized(piece: str, budget: int) -> list[str]:
    """Split one over-budget sentence at word boundaries (whitespace stays
    attached to the preceding word so concatenation is lossless)."""
    tokens = re.findall(r"\S+\s*|\s+", piece)
    out: list[str] = []
    current = ""
    for token in tokens:
        if current and estimate_tokens(current + token) > budget:
            out.append(current)
            current = token
        else:
            current += token
    if current:
        out.append(current)
    # a single word can still exceed the budget; cut it by characters
    final: list[str] = []
    for part in out:
        while estimate_tokens(part) > budget and len(part) > 1:
            cut = max(1, len(part) // 2)
            final.append(part[:cut])
            part = part[cut:]
        final.append(part)
    return [p for p in final if p]


def chunk_text(text: str, budget: int) -> list[str]:
    """Greedy sentence-boundary chunks of at most *budget* estimated tokens.

    Chunks concatenate back to the input exactly.  A single sentence larger
    than the budget is split at word boundaries as a last resort.
    """
    if budget <= 0:
        raise ValueError("chunk budget must be positive")
    if not text:
        return []
    sentences = segment_sentences(text)
    chunks: list[str] = []
    current = ""
    for sentence in sentences:
        piece = sentence.text
        if estimate_tokens(piece) > budget:
            if current:
                chunks.append(current)
                current = ""
            chunks.extend(_split_oversized(piece, budget))
            continue
        if current and estimate_tokens(current + piece) > budget:
            chunks.append(current)
            current = piece
        else:
            current += piece
    if current:
        chunks.append(current)
    return chunks


# ---------------------------------------------------------------------------
# prompt budgets


def _prompt_overhead(template_rendered_empty: str) -> int:
    return estimate_tokens(template_rendered_empty)


def extraction_budget(provider_config: ProviderConfig, config: EntityPipelineConfig) -> int:
    """Largest context (in estimated tokens) that still leaves room for the
    biggest extraction prompt plus the reserved answer inside the margined
    window."""
    overhead = max(
        _prompt_overhead(ENTITY_PROMPT.format(context="", definition=q.definition, question=q.question))
        for q in config.queries
    )
    budget = (
        provider_config.usable_window()
        - config.answer_output_tokens
        - overhead
        - config.relation_prompt_slack
    )
    if budget <= 0:
        raise PipelineError(
            f"context window {provider_config.context_window} is too small for the "
            f"configured prompts (overhead {overhead})"
        )
    return budget


def _summary_chunk_budget(provider_config: ProviderConfig, config: EntityPipelineConfig) -> int:
    overhead = _prompt_overhead(SUMMARY_PROMPT.format(text=""))
    bound = provider_config.usable_window() - config.summary_output_tokens - overhead
    if bound <= 0:
        raise PipelineError("context window too small for summarization prompts")
    return min(config.chunk_tokens, bound)


# ---------------------------------------------------------------------------
# condensation


def condense(
    report: Report,
    provider: Any,
    config: EntityPipelineConfig,
    audit: AuditTrail,
    target_tokens: int | None = None,
) -> CondensedReport:
    """Shrink a report under *target_tokens* by iterative chunk summarization.

    Reports already under budget pass through verbatim with zero iterations.
    Raises :class:`CondensationError` when the iteration cap is reached with
    the text still over budget (e.g. a summarizer that refuses to compress).
    """
    if target_tokens is None:
        target_tokens = extraction_budget(provider.config, config)
    source_tokens = estimate_tokens(report.text)
    current = report.text
    iterations = 0
    if source_tokens <= target_tokens:
        audit.record("condense", "decision", outcome="pass-through", tokens=source_tokens)
        return CondensedReport(report.id, current, 0, source_tokens, source_tokens)

    chunk_budget = _summary_chunk_budget(provider.config, config)
    while iterations < config.condense_iteration_cap:
        iterations += 1
        chunks = chunk_text(current, chunk_budget)
        summaries = []
        for i, chunk in enumerate(chunks):
            prompt = SUMMARY_PROMPT.format(text=chunk)
            audit.record(
                "condense", "prompt", text=prompt, reserved_output=config.summary_output_tokens,
                iteration=iterations, chunk=i,
            )
            response = provider.complete(
                CompletionRequest(prompt, max_output_tokens=config.summary_output_tokens)
            )
            audit.record("condense", "response", text=response, iteration=iterations, chunk=i)
            summaries.append(response.strip())
        current = "\n\n".join(s for s in summaries if s)
        tokens = estimate_tokens(current)
        audit.record("condense", "decision", outcome="iteration", iteration=iterations, tokens=tokens)
        if tokens <= target_tokens:
            return CondensedReport(report.id, current, iterations, source_tokens, tokens)
    raise CondensationError(
        f"report {report.id}: {estimate_tokens(current)} estimated tokens still exceed "
        f"budget {target_tokens} after {iterations} summarization iterations"
    )


# ---------------------------------------------------------------------------
# extraction


def parse_name_lines(response: str) -> list[str]:
    """Turn a model answer into a clean, order-preserving list of names.

    Strips bullets, numbering, quotes, an ``Answer:`` prefix, and one
    trailing period; negative answers ("none", "n/a", ...) yield no names.
    """
    names: list[str] = []
    seen: set[str] = set()
    for line in response.splitlines():
        line = _ANSWER_PREFIX_RE.sub("", _BULLET_RE.sub("", line.strip())).strip()
        if not line:
            continue
        if len(line) > 1 and line.endswith(".") and not line.endswith(".."):
            line = line[:-1]
        line = line.strip("\"'“”‘’ ").strip()
        if not line or line.casefold().rstrip(".") in _NEGATIVE_ANSWERS:
            continue
        key = " ".join(line.split()).casefold()
        if key in seen:
            continue
        seen.add(key)
        names.append(line)
    return names


def extract_entities(
    context: str,
    query: EntityQuery,
    provider: Any,
    config: EntityPipelineConfig,
    audit: AuditTrail,
    context_id: str = "condensed",
) -> list[str]:
    """Ask one entity question against one context; return candidate names."""
    prompt = ENTITY_PROMPT.format(context=context, definition=query.definition, question=query.question)
    audit.record(
        "extract", "prompt", text=prompt, reserved_output=config.answer_output_tokens,
        query=query.name, context_id=context_id,
    )
    response = provider.complete(CompletionRequest(prompt, max_output_tokens=config.answer_output_tokens))
    audit.record("extract", "response", text=response, query=query.name, context_id=context_id)
    names = parse_name_lines(response)
    audit.record("extract", "decision", query=query.name, names=names, context_id=context_id)
    return names


def _squash(text: str) -> str:
    return " ".join(text.split()).casefold()


def verify_entity(
    name: str,
    report: Report,
    provider: Any,
    config: EntityPipelineConfig,
    audit: AuditTrail,
) -> tuple[bool, str]:
    """Ground a candidate name in the original report.

    Returns (verified, method) where method is "literal" for a substring hit
    or "llm" when a per-chunk yes/no question confirmed a reworded mention.
    """
    if _squash(name) and _squash(name) in _squash(report.text):
        audit.record("verify", "decision", name=name, outcome="literal")
        return True, "literal"

    overhead = _prompt_overhead(VERIFY_PROMPT.format(text="", name=name))
    budget = provider.config.usable_window() - config.answer_output_tokens - overhead
    if budget <= 0:
        raise PipelineError("context window too small for verification prompts")
    for i, chunk in enumerate(chunk_text(report.text, budget)):
        prompt = VERIFY_PROMPT.format(text=chunk, name=name)
        audit.record(
            "verify", "prompt", text=prompt, reserved_output=config.answer_output_tokens,
            name=name, chunk=i,
        )
        response = provider.complete(
            CompletionRequest(prompt, max_output_tokens=config.answer_output_tokens)
        )
        audit.record("verify", "response", text=response, name=name, chunk=i)
        if response.strip().casefold().startswith("yes"):
            audit.record("verify", "decision", name=name, outcome="llm")
            return True, "llm"
    audit.record("verify", "decision", name=name, outcome="unverified")
    return False, ""


# ---------------------------------------------------------------------------
# relations


@dataclass
class RelationAnswer:
    source: StixEntity
    target: StixEntity
    kind: RelationKind | None
    warning: str = ""


def _parse_relation_answer(response: str, options: dict[str, RelationKind]) -> tuple[RelationKind | None, str]:
    lowered = response.casefold()
    hits: list[tuple[int, RelationKind]] = []
    for token, kind in options.items():
        m = re.search(rf"\b{re.escape(token)}\b", lowered)
        if m:
            hits.append((m.start(), kind))
    if not hits:
        if re.search(r"\bnone\b", lowered) or _squash(response).rstrip(".") in _NEGATIVE_ANSWERS:
            return None, ""
        return None, f"unparseable relation answer: {response[:80]!r}"
    distinct = {kind for _, kind in hits}
    if len(distinct) > 1:
        return None, f"ambiguous relation answer: {response[:80]!r}"
    return hits[0][1], ""


def extract_relations(
    contexts: Sequence[str],
    entities: Sequence[StixEntity],
    provider: Any,
    config: EntityPipelineConfig,
    audit: AuditTrail,
    pairs: Sequence[tuple[StixEntity, StixEntity]] | None = None,
) -> list[RelationAnswer]:
    """One direct relation question per ordered pair with a non-empty
    admissible kind set; answers outside that set parse to none with a
    warning.  With several contexts (ablated preprocessing) the first
    non-none answer wins."""
    if pairs is None:
        pairs = [
            (a, b)
            for a in entities
            for b in entities
            if a.id != b.id
        ]
    answers: list[RelationAnswer] = []
    for a, b in pairs:
        kinds = admissible_relations(a.kind, b.kind)
        if not kinds:
            audit.record(
                "relations", "decision", source=a.name, target=b.name,
                outcome="skipped-no-admissible-kinds",
            )
            continue
        options = {k.value: k for k in sorted(kinds, key=lambda r: r.value)}
        found: RelationKind | None = None
        warning = ""
        for ctx_index, context in enumerate(contexts):
            prompt = RELATION_PROMPT.format(
                context=context, source=a.name, target=b.name, options=", ".join(options),
            )
            audit.record(
                "relations", "prompt", text=prompt, reserved_output=config.answer_output_tokens,
                source=a.name, target=b.name, context_id=str(ctx_index),
            )
            response = provider.complete(
                CompletionRequest(prompt, max_output_tokens=config.answer_output_tokens)
            )
            audit.record(
                "relations", "response", text=response, source=a.name, target=b.name,
                context_id=str(ctx_index),
            )
            found, warning = _parse_relation_answer(response, options)
            if found is not None:
                break
        audit.record(
            "relations", "decision", source=a.name, target=b.name,
            outcome=found.value if found else "none", warning=warning,
        )
        answers.append(RelationAnswer(source=a, target=b, kind=found, warning=warning))
    return answers


# ---------------------------------------------------------------------------
# the full pipeline


def _unique_entities(entities: Iterable[StixEntity]) -> list[StixEntity]:
    seen: set[str] = set()
    out = []
    for ent in entities:
        if ent.id not in seen:
            seen.add(ent.id)
            out.append(ent)
    return out


def run_entity_pipeline(
    report: Report,
    provider: Any,
    config: EntityPipelineConfig | None = None,
) -> EntityPipelineResult:
    """Run the complete entity flow for one report and assemble the partial
    bundle (entities, Targets/Uses-style relations, IoCs with Indicates)."""
    config = config or EntityPipelineConfig()
    audit = AuditTrail(report.id)
    warnings: list[dict[str, str]] = []
    seed = config.namespace_seed

    if not report.text.strip():
        warnings.append({"kind": "empty-report", "detail": f"report {report.id} has no text"})
        return EntityPipelineResult(report.id, new_bundle(report.id, seed), None, [], warnings, audit)

    budget = extraction_budget(provider.config, config)
    condensed: CondensedReport | None = None
    if config.preprocessing:
        condensed = condense(report, provider, config, audit, target_tokens=budget)
        contexts = [condensed.text]
        context_ids = ["condensed"]
    else:
        pieces = chunk_text(report.text, budget)
        contexts = pieces
        context_ids = [f"chunk-{i}" for i in range(len(pieces))]
        audit.record("condense", "decision", outcome="ablated", chunks=len(pieces))

    # extract + verify per query
    extracted: list[ExtractedEntity] = []
    verified_by_query: dict[str, list[StixEntity]] = {q.name: [] for q in config.queries}
    for query in config.queries:
        candidates: list[str] = []
        for context, context_id in zip(contexts, context_ids):
            for name in extract_entities(context, query, provider, config, audit, context_id):
                if _squash(name) not in {_squash(c) for c in candidates}:
                    candidates.append(name)
        for name in candidates:
            ok, method = verify_entity(name, report, provider, config, audit)
            extracted.append(
                ExtractedEntity(
                    query=query.name, entity_kind=query.entity_kind, name=name,
                    verified=ok, method=method, context_id=context_ids[0],
                )
            )
            if not ok:
                warnings.append(
                    {
                        "kind": "inconsistency",
                        "detail": f"extracted {query.name} {name!r} is not grounded in report {report.id}",
                    }
                )
                continue
            ent = StixEntity(query.entity_kind, name)
            ent.id = entity_id(query.entity_kind, name, seed)
            verified_by_query[query.name].append(ent)

    entities = _unique_entities(e for q in config.queries for e in verified_by_query[q.name])
    principals = [e for e in entities if e.kind in (EntityKind.MALWARE, EntityKind.THREAT_ACTOR)]
    target_identities = [e for e in entities if e.kind is EntityKind.IDENTITY]

    relations: list[StixRelation] = []

    def add_relation(kind: RelationKind, source: StixEntity, target: StixEntity) -> None:
        rel = StixRelation(kind, source.id, target.id)
        rel.id = relation_id(kind, source.id, target.id, seed)
        if all(r.id != rel.id for r in relations):
            relations.append(rel)

    # the target question already asserts the Targets relation; attach it
    # from every principal without a second query
    for identity in target_identities:
        for principal in principals:
            if RelationKind.TARGETS in admissible_relations(principal.kind, identity.kind):
                add_relation(RelationKind.TARGETS, principal, identity)
                audit.record(
                    "relations", "decision", source=principal.name, target=identity.name,
                    outcome="targets", rule="principal-target",
                )

    # LLM relation queries among the remaining (non-identity) verified pairs
    queryable = [e for e in entities if e.kind is not EntityKind.IDENTITY]
    for answer in extract_relations(contexts, queryable, provider, config, audit):
        if answer.warning:
            warnings.append({"kind": "relation-parse", "detail": answer.warning})
        if answer.kind is not None:
            add_relation(answer.kind, answer.source, answer.target)

    # IoCs from the raw text; indicators point at each verified malware
    iocs = ioc_entities(report.text, seed)
    existing_ids = {e.id for e in entities}
    iocs = [e for e in iocs if e.id not in existing_ids]
    audit.record("iocs", "decision", count=len(iocs))
    malware_entities = [e for e in entities if e.kind is EntityKind.MALWARE]
    for ioc in iocs:
        if ioc.kind is EntityKind.INDICATOR:
            for mal in malware_entities:
                add_relation(RelationKind.INDICATES, ioc, mal)

    bundle = new_bundle(report.id, seed)
    bundle.entities = entities + iocs
    bundle.relations = relations
    return EntityPipelineResult(report.id, bundle, condensed, extracted, warnings, audit)
