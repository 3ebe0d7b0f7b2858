"""Scoring extracted entities, techniques, and relations against ground truth.

Name matching is alias-aware and normalization-insensitive: an extracted name
counts as a hit if it normalizes to any alias of a ground-truth entity, and a
ground-truth entity can be hit at most once no matter how many of its aliases
were extracted.  Per-report recall/precision/F1 use the usual conventions for
empty sides — a report with nothing to find and nothing found is perfect, a
report with nothing to find but spurious output has precision 0.

The relation benchmark turns a report's ground-truth relations into labelled
examples (each known relation is a positive; admissible-but-unasserted pairs
are sampled as negatives with a seeded RNG, so runs are reproducible) and
scores direct relation questions against them.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .attack_patterns import detect_explicit_techniques
from .catalog import parent_technique
from .entity_pipeline import AuditTrail, EntityPipelineConfig, extract_relations
from .stix import (
    EntityKind,
    RelationKind,
    StixBundle,
    StixEntity,
    admissible_relations,
    normalize_name,
)

logger = logging.getLogger(__name__)

#: evaluation kinds -> how names are pulled out of a bundle
EVAL_KINDS = ("malware", "threat_actor", "target", "attack_pattern")

_KIND_TO_ENTITY = {
    "malware": EntityKind.MALWARE,
    "threat_actor": EntityKind.THREAT_ACTOR,
}


@dataclass(frozen=True)
class GroundTruthEntity:
    name: str
    aliases: tuple[str, ...] = ()

    def all_names(self) -> tuple[str, ...]:
        return (self.name, *self.aliases)

    def canonical(self) -> str:
        return normalize_name(self.name)


@dataclass(frozen=True)
class GroundTruthRelation:
    source: str
    source_kind: EntityKind
    relation: RelationKind
    target: str
    target_kind: EntityKind


@dataclass
class GroundTruth:
    report_id: str
    entities: dict[str, list[GroundTruthEntity]] = field(default_factory=dict)
    relations: list[GroundTruthRelation] = field(default_factory=list)
    text: Optional[str] = None


@dataclass(frozen=True)
class MatchSets:
    """Outcome of alias-aware matching: canonical ground-truth names hit and
    missed, plus normalized extracted names with no counterpart."""

    tp: frozenset[str]
    fp: frozenset[str]
    fn: frozenset[str]


@dataclass(frozen=True)
class Scores:
    recall: float
    precision: float
    f1: float


def match_entities(
    extracted: Iterable[str], truth: Iterable[GroundTruthEntity]
) -> MatchSets:
    alias_to_canonical: dict[str, str] = {}
    canonicals: set[str] = set()
    for gt in truth:
        canonical = gt.canonical()
        canonicals.add(canonical)
        for name in gt.all_names():
            alias_to_canonical.setdefault(normalize_name(name), canonical)

    tp: set[str] = set()
    fp: set[str] = set()
    for name in extracted:
        norm = normalize_name(name)
        if not norm:
            continue
        canonical = alias_to_canonical.get(norm)
        if canonical is None:
            fp.add(norm)
        else:
            tp.add(canonical)
    return MatchSets(tp=frozenset(tp), fp=frozenset(fp), fn=frozenset(canonicals - tp))


def score_matches(match: MatchSets) -> Scores:
    tp, fp, fn = len(match.tp), len(match.fp), len(match.fn)
    recall = tp / (tp + fn) if tp + fn else 1.0
    precision = tp / (tp + fp) if tp + fp else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Scores(recall=recall, precision=precision, f1=f1)


def micro_score(matches: Sequence[MatchSets]) -> Scores:
    """Pooled counts across reports, for a corpus-level view."""
    tp = sum(len(m.tp) for m in matches)
    fp = sum(len(m.fp) for m in matches)
    fn = sum(len(m.fn) for m in matches)
    recall = tp / (tp + fn) if tp + fn else 1.0
    precision = tp / (tp + fp) if tp + fp else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Scores(recall=recall, precision=precision, f1=f1)


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th smallest value."""
    if not values:
        raise ValueError("percentile of empty sequence")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must be in (0, 1], got {q}")
    ordered = sorted(values)
    return ordered[max(math.ceil(q * len(ordered)), 1) - 1]


def summarize(values: Sequence[float]) -> dict[str, float]:
    if not values:
        return {"n": 0}
    return {
        "n": len(values),
        "mean": sum(values) / len(values),
        "p25": percentile(values, 0.25),
        "p75": percentile(values, 0.75),
    }


# --- pulling comparable names out of a bundle ------------------------------


def extracted_names(bundle: StixBundle, kind: str) -> list[str]:
    """Names for one evaluation kind, in bundle order, deduplicated.

    ``target`` means identities that something targets — an identity entity
    that never appears on the receiving end of a targets edge is not a
    target.  ``attack_pattern`` yields parent technique ids.
    """
    if kind in _KIND_TO_ENTITY:
        names = [e.name for e in bundle.entities_of_kind(_KIND_TO_ENTITY[kind])]
    elif kind == "target":
        targeted = {
            r.target_ref for r in bundle.relations if r.kind == RelationKind.TARGETS
        }
        names = [
            e.name
            for e in bundle.entities
            if e.kind in (EntityKind.IDENTITY, EntityKind.VULNERABILITY)
            and e.id in targeted
        ]
    elif kind == "attack_pattern":
        names = [
            parent_technique(e.technique_id)
            for e in bundle.entities_of_kind(EntityKind.ATTACK_PATTERN)
            if e.technique_id
        ]
    else:
        raise ValueError(f"unknown evaluation kind: {kind!r}")
    seen: list[str] = []
    for name in names:
        if name not in seen:
            seen.append(name)
    return seen


def truth_for_kind(gt: GroundTruth, kind: str) -> list[GroundTruthEntity]:
    entries = gt.entities.get(kind, [])
    if kind == "attack_pattern":
        collapsed: list[GroundTruthEntity] = []
        seen: set[str] = set()
        for e in entries:
            parent = parent_technique(e.name)
            if parent not in seen:
                seen.add(parent)
                collapsed.append(GroundTruthEntity(name=parent))
        return collapsed
    return entries


def score_bundle(
    bundle: StixBundle, gt: GroundTruth, kinds: Sequence[str] = EVAL_KINDS
) -> dict[str, tuple[MatchSets, Scores]]:
    out: dict[str, tuple[MatchSets, Scores]] = {}
    for kind in kinds:
        match = match_entities(extracted_names(bundle, kind), truth_for_kind(gt, kind))
        out[kind] = (match, score_matches(match))
    return out


def count_stats(
    extracted: Mapping[str, Sequence[str]],
    truth: Mapping[str, Sequence[str]],
) -> dict[str, Any]:
    """Per-report item counts on both sides, plus distribution stats.

    Takes report-id -> names mappings (e.g. technique ids per report) and
    returns, for each side, the raw per-report counts and the summary stats
    over those counts.  Useful for sanity-checking how verbose the extraction
    is relative to the ground truth.
    """

    def side(names_by_report: Mapping[str, Sequence[str]]) -> dict[str, Any]:
        counts = {rid: len(names) for rid, names in names_by_report.items()}
        return {"per_report": counts, "stats": summarize([float(n) for n in counts.values()])}

    return {"extracted": side(extracted), "truth": side(truth)}


# --- ground-truth loading ---------------------------------------------------


def _parse_gt_entity(item: Union[str, dict]) -> GroundTruthEntity:
    if isinstance(item, str):
        return GroundTruthEntity(name=item)
    return GroundTruthEntity(
        name=item["name"], aliases=tuple(item.get("aliases", []))
    )


def load_ground_truth_file(path: Union[str, Path]) -> GroundTruth:
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    entities = {
        kind: [_parse_gt_entity(item) for item in raw.get(kind, [])]
        for kind in EVAL_KINDS
        if raw.get(kind)
    }
    relations = [
        GroundTruthRelation(
            source=r["source"],
            source_kind=EntityKind(r["source_kind"]),
            relation=RelationKind(r["relation"]),
            target=r["target"],
            target_kind=EntityKind(r["target_kind"]),
        )
        for r in raw.get("relations", [])
    ]
    report_id = raw.get("report_id", path.stem)
    gt = GroundTruth(report_id=report_id, entities=entities, relations=relations)
    text_path = path.with_suffix(".txt")
    if text_path.exists():
        gt.text = text_path.read_text(encoding="utf-8")
    return gt


def load_ground_truth_dir(path: Union[str, Path]) -> dict[str, GroundTruth]:
    out: dict[str, GroundTruth] = {}
    for json_path in sorted(Path(path).glob("*.json")):
        if json_path.name == "index.json":
            continue
        gt = load_ground_truth_file(json_path)
        out[gt.report_id] = gt
    return out


def filter_without_explicit_ids(texts: Mapping[str, str]) -> list[str]:
    """Report ids whose text contains no written-out technique ids.

    Embedding-based technique scores are only meaningful where the answer is
    not literally printed in the input, so the attack-pattern evaluation
    subset keeps exactly these reports.
    """
    return [rid for rid, text in texts.items() if not detect_explicit_techniques(text)]


# --- relation benchmark ------------------------------------------------------

_BENCHMARK_KINDS = frozenset(
    {EntityKind.MALWARE, EntityKind.THREAT_ACTOR, EntityKind.IDENTITY}
)


@dataclass(frozen=True)
class RelationExample:
    source: str
    source_kind: EntityKind
    target: str
    target_kind: EntityKind
    relation: Optional[RelationKind]  # None marks a sampled negative


@dataclass
class RelationBenchmarkResult:
    report_id: str
    examples: list[RelationExample]
    predictions: list[Optional[RelationKind]]
    scores: Scores
    tp: int
    fp: int
    fn: int


def build_relation_examples(
    gt: GroundTruth,
    seed: Union[str, int] = "cti2stix",
    negatives: Optional[int] = None,
) -> list[RelationExample]:
    """Positives straight from ground truth; negatives sampled from the
    admissible-but-unasserted triples over the same entities."""
    positives = [
        RelationExample(r.source, r.source_kind, r.target, r.target_kind, r.relation)
        for r in gt.relations
        if r.source_kind in _BENCHMARK_KINDS and r.target_kind in _BENCHMARK_KINDS
    ]
    asserted_pairs = {
        (normalize_name(p.source), p.source_kind, normalize_name(p.target), p.target_kind)
        for p in positives
    }

    pool: list[tuple[str, EntityKind]] = []
    for kind_name, kind in (
        ("malware", EntityKind.MALWARE),
        ("threat_actor", EntityKind.THREAT_ACTOR),
        ("target", EntityKind.IDENTITY),
    ):
        for e in gt.entities.get(kind_name, []):
            if (e.name, kind) not in pool:
                pool.append((e.name, kind))

    # a negative is an ordered pair that admits at least one relation kind
    # but has none asserted; the right answer for it is "none"
    candidates: list[RelationExample] = []
    for source, source_kind in pool:
        for target, target_kind in pool:
            if (source, source_kind) == (target, target_kind):
                continue
            if not admissible_relations(source_kind, target_kind):
                continue
            key = (
                normalize_name(source), source_kind,
                normalize_name(target), target_kind,
            )
            if key not in asserted_pairs:
                candidates.append(
                    RelationExample(source, source_kind, target, target_kind, None)
                )

    wanted = len(positives) if negatives is None else negatives
    rng = random.Random(f"{seed}:{gt.report_id}")
    if wanted < len(candidates):
        sampled = rng.sample(candidates, wanted)
        # keep deterministic presentation order regardless of sample order
        sampled.sort(key=lambda e: (e.source, e.source_kind.value, e.target, e.target_kind.value))
    else:
        sampled = candidates
    return positives + sampled


def run_relation_benchmark(
    gt: GroundTruth,
    contexts: Sequence[str],
    provider: Any,
    config: Optional[EntityPipelineConfig] = None,
    seed: Union[str, int] = "cti2stix",
    negatives: Optional[int] = None,
) -> RelationBenchmarkResult:
    config = config or EntityPipelineConfig()
    audit = AuditTrail(gt.report_id)
    examples = build_relation_examples(gt, seed=seed, negatives=negatives)
    if not examples:
        logger.info(
            "relation benchmark for %s skipped: fewer than two eligible entities",
            gt.report_id,
        )

    predictions: list[Optional[RelationKind]] = []
    tp = fp = fn = 0
    for example in examples:
        source = StixEntity(kind=example.source_kind, name=example.source)
        target = StixEntity(kind=example.target_kind, name=example.target)
        answers = extract_relations(
            contexts, [source, target], provider, config, audit,
            pairs=[(source, target)],
        )
        predicted = answers[0].kind if answers else None
        predictions.append(predicted)
        if example.relation is not None:
            if predicted == example.relation:
                tp += 1
            elif predicted is None:
                fn += 1
            else:
                fp += 1
                fn += 1
        elif predicted is not None:
            fp += 1

    recall = tp / (tp + fn) if tp + fn else 1.0
    precision = tp / (tp + fp) if tp + fp else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return RelationBenchmarkResult(
        report_id=gt.report_id,
        examples=examples,
        predictions=predictions,
        scores=Scores(recall=recall, precision=precision, f1=f1),
        tp=tp, fp=fp, fn=fn,
    )


# --- score output ------------------------------------------------------------


def scores_payload(
    per_report: Mapping[str, Mapping[str, Scores]],
    subset_ids: Optional[Mapping[str, Sequence[str]]] = None,
) -> dict[str, Any]:
    """JSON-ready structure: per-report metrics plus per-kind summaries."""
    kinds: list[str] = []
    for report_scores in per_report.values():
        for kind in report_scores:
            if kind not in kinds:
                kinds.append(kind)

    aggregate: dict[str, Any] = {}
    for kind in kinds:
        rows = {
            rid: s[kind] for rid, s in per_report.items() if kind in s
        }
        if subset_ids and kind in subset_ids:
            keep = set(subset_ids[kind])
            rows = {rid: s for rid, s in rows.items() if rid in keep}
        aggregate[kind] = {
            "recall": summarize([s.recall for s in rows.values()]),
            "precision": summarize([s.precision for s in rows.values()]),
            "f1": summarize([s.f1 for s in rows.values()]),
        }

    return {
        "per_report": {
            rid: {
                kind: {"recall": s.recall, "precision": s.precision, "f1": s.f1}
                for kind, s in sorted(report_scores.items())
            }
            for rid, report_scores in sorted(per_report.items())
        },
        "aggregate": aggregate,
    }


def write_scores(payload: Mapping[str, Any], json_path: Union[str, Path],
                 csv_path: Union[str, Path]) -> None:
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )

    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["report", "kind", "metric", "value"])
        for rid, report_scores in sorted(payload.get("per_report", {}).items()):
            for kind, metrics in sorted(report_scores.items()):
                for metric, value in sorted(metrics.items()):
                    writer.writerow([rid, kind, metric, f"{value:.6f}"])
        for kind, metrics in sorted(payload.get("aggregate", {}).items()):
            for metric, stats in sorted(metrics.items()):
                for stat, value in sorted(stats.items()):
                    writer.writerow(
                        ["__aggregate__", kind, f"{metric}.{stat}", f"{value:.6f}"]
                    )
