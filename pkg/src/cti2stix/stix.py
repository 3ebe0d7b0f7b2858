"""STIX 2.1 domain model: typed entities, relations, bundles, and graph validation.

The subset modelled here is the one produced and consumed by the extraction
pipelines: nine SDO kinds, five SRO kinds, and an explicit admissibility table
saying which (source kind, relation kind, target kind) triples may appear in a
bundle.  Everything else found in a bundle file is preserved (per-object
unknown properties ride along in ``extra``) or skipped with a warning (unknown
object types).

Identifiers are deterministic: the same (kind, normalized name) under the same
namespace seed always yields the same STIX id, so re-running an extraction
produces byte-identical output.
"""

from __future__ import annotations

import json
import logging
import re
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Union

logger = logging.getLogger(__name__)

SPEC_VERSION = "2.1"
MITRE_SOURCE_NAME = "mitre-attack"
DEFAULT_NAMESPACE_SEED = "cti2stix"

_WS_RE = re.compile(r"\s+")
_TECHNIQUE_ID_RE = re.compile(r"^T\d{4}(?:\.\d{3})?$")


class EntityKind(Enum):
    """SDO kinds understood by the pipeline, valued by their JSON type string."""

    MALWARE = "malware"
    THREAT_ACTOR = "threat-actor"
    ATTACK_PATTERN = "attack-pattern"
    IDENTITY = "identity"
    INDICATOR = "indicator"
    CAMPAIGN = "campaign"
    VULNERABILITY = "vulnerability"
    TOOL = "tool"
    COURSE_OF_ACTION = "course-of-action"


class RelationKind(Enum):
    """SRO kinds understood by the pipeline, valued by their relationship_type string."""

    USES = "uses"
    INDICATES = "indicates"
    TARGETS = "targets"
    ATTRIBUTED_TO = "attributed-to"
    MITIGATES = "mitigates"


_K = EntityKind
_R = RelationKind

# Admissible (source, relation, target) triples.  This is data, not code: the
# table enumerates which edges a bundle may carry, restricted to the entity
# and relation kinds above.  Anything absent is inadmissible — e.g. there is
# no admissible relation in either direction between two Malware entities,
# and Indicator can never be the source of a "targets" edge.
ADMISSIBLE_TRIPLES: frozenset[tuple[EntityKind, RelationKind, EntityKind]] = frozenset(
    {
        # uses
        (_K.THREAT_ACTOR, _R.USES, _K.MALWARE),
        (_K.THREAT_ACTOR, _R.USES, _K.TOOL),
        (_K.THREAT_ACTOR, _R.USES, _K.ATTACK_PATTERN),
        (_K.CAMPAIGN, _R.USES, _K.MALWARE),
        (_K.CAMPAIGN, _R.USES, _K.TOOL),
        (_K.CAMPAIGN, _R.USES, _K.ATTACK_PATTERN),
        (_K.MALWARE, _R.USES, _K.ATTACK_PATTERN),
        (_K.MALWARE, _R.USES, _K.TOOL),
        # targets
        (_K.MALWARE, _R.TARGETS, _K.IDENTITY),
        (_K.MALWARE, _R.TARGETS, _K.VULNERABILITY),
        (_K.THREAT_ACTOR, _R.TARGETS, _K.IDENTITY),
        (_K.THREAT_ACTOR, _R.TARGETS, _K.VULNERABILITY),
        (_K.CAMPAIGN, _R.TARGETS, _K.IDENTITY),
        (_K.CAMPAIGN, _R.TARGETS, _K.VULNERABILITY),
        (_K.TOOL, _R.TARGETS, _K.IDENTITY),
        (_K.TOOL, _R.TARGETS, _K.VULNERABILITY),
        (_K.ATTACK_PATTERN, _R.TARGETS, _K.IDENTITY),
        (_K.ATTACK_PATTERN, _R.TARGETS, _K.VULNERABILITY),
        # indicates
        (_K.INDICATOR, _R.INDICATES, _K.MALWARE),
        (_K.INDICATOR, _R.INDICATES, _K.THREAT_ACTOR),
        (_K.INDICATOR, _R.INDICATES, _K.CAMPAIGN),
        (_K.INDICATOR, _R.INDICATES, _K.TOOL),
        (_K.INDICATOR, _R.INDICATES, _K.ATTACK_PATTERN),
        # attributed-to
        (_K.CAMPAIGN, _R.ATTRIBUTED_TO, _K.THREAT_ACTOR),
        # mitigates
        (_K.COURSE_OF_ACTION, _R.MITIGATES, _K.ATTACK_PATTERN),
        (_K.COURSE_OF_ACTION, _R.MITIGATES, _K.INDICATOR),
        (_K.COURSE_OF_ACTION, _R.MITIGATES, _K.MALWARE),
        (_K.COURSE_OF_ACTION, _R.MITIGATES, _K.TOOL),
        (_K.COURSE_OF_ACTION, _R.MITIGATES, _K.VULNERABILITY),
    }
)

_ADMISSIBLE_BY_PAIR: dict[tuple[EntityKind, EntityKind], frozenset[RelationKind]] = {}
for _src, _rel, _dst in ADMISSIBLE_TRIPLES:
    _key = (_src, _dst)
    _ADMISSIBLE_BY_PAIR[_key] = _ADMISSIBLE_BY_PAIR.get(_key, frozenset()) | {_rel}


def admissible_relations(source: EntityKind, target: EntityKind) -> frozenset[RelationKind]:
    """Relation kinds allowed from *source* to *target* (possibly empty)."""
    return _ADMISSIBLE_BY_PAIR.get((source, target), frozenset())


def is_admissible(source: EntityKind, relation: RelationKind, target: EntityKind) -> bool:
    return (source, relation, target) in ADMISSIBLE_TRIPLES


def normalize_name(name: str) -> str:
    """Canonical form of an entity name: trim, strip wrapping quotes, collapse
    internal whitespace, casefold.

    Used both for name matching in evaluation and as the basis of
    deterministic entity ids.
    """
    quote_pairs = {('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’"), ("`", "`")}
    out = name.strip()
    while len(out) >= 2 and (out[0], out[-1]) in quote_pairs:
        out = out[1:-1].strip()
    out = _WS_RE.sub(" ", out)
    return out.casefold()


def _namespace(seed: str) -> uuid.UUID:
    return uuid.uuid5(uuid.NAMESPACE_DNS, seed)


def entity_id(kind: EntityKind, name: str, namespace_seed: str = DEFAULT_NAMESPACE_SEED) -> str:
    """Deterministic STIX id for an entity: stable across runs and processes."""
    u = uuid.uuid5(_namespace(namespace_seed), f"entity|{kind.value}|{normalize_name(name)}")
    return f"{kind.value}--{u}"


def relation_id(
    kind: RelationKind,
    source_ref: str,
    target_ref: str,
    namespace_seed: str = DEFAULT_NAMESPACE_SEED,
) -> str:
    u = uuid.uuid5(_namespace(namespace_seed), f"relation|{kind.value}|{source_ref}|{target_ref}")
    return f"relationship--{u}"


def bundle_id(report_id: str, namespace_seed: str = DEFAULT_NAMESPACE_SEED) -> str:
    u = uuid.uuid5(_namespace(namespace_seed), f"bundle|{report_id}")
    return f"bundle--{u}"


@dataclass
class StixEntity:
    """One SDO node.  ``extra`` carries unrecognized JSON properties verbatim
    so that load → save round-trips do not lose information."""

    kind: EntityKind
    name: str
    id: str = ""
    aliases: list[str] = field(default_factory=list)
    technique_id: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            self.id = entity_id(self.kind, self.name)


@dataclass
class StixRelation:
    """One SRO edge between two entities, referenced by id."""

    kind: RelationKind
    source_ref: str
    target_ref: str
    id: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            self.id = relation_id(self.kind, self.source_ref, self.target_ref)


@dataclass
class StixBundle:
    """A bundle is a flat graph: entity nodes plus relation edges.

    ``skipped`` records objects the loader did not understand; it is excluded
    from equality so a loaded bundle compares equal to its re-loaded copy.
    """

    id: str
    entities: list[StixEntity] = field(default_factory=list)
    relations: list[StixRelation] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)
    skipped: list[dict[str, Any]] = field(default_factory=list, compare=False)

    def entity_by_id(self, ref: str) -> StixEntity | None:
        for ent in self.entities:
            if ent.id == ref:
                return ent
        return None

    def entities_of_kind(self, kind: EntityKind) -> list[StixEntity]:
        return [e for e in self.entities if e.kind == kind]


@dataclass(frozen=True)
class Violation:
    """One validation failure, machine-checkable by code."""

    code: str
    message: str
    subject: str


_ENTITY_KIND_BY_TYPE = {k.value: k for k in EntityKind}
_RELATION_KIND_BY_TYPE = {r.value: r for r in RelationKind}


def _minimal_technique_ref(technique_id: str) -> dict[str, str]:
    return {"source_name": MITRE_SOURCE_NAME, "external_id": technique_id}


def _entity_from_obj(obj: dict[str, Any]) -> StixEntity:
    data = dict(obj)
    kind = _ENTITY_KIND_BY_TYPE[data.pop("type")]
    ident = data.pop("id", "") or ""
    name = data.pop("name", "") or ""
    aliases = list(data.pop("aliases", []) or [])
    data.pop("spec_version", None)

    technique_id: str | None = None
    refs = data.get("external_references")
    if isinstance(refs, list):
        for ref in refs:
            if (
                isinstance(ref, dict)
                and ref.get("source_name") == MITRE_SOURCE_NAME
                and _TECHNIQUE_ID_RE.match(str(ref.get("external_id", "")))
            ):
                technique_id = str(ref["external_id"])
                break
        # Drop the reference list from extra only when it carries nothing
        # beyond the technique id we just lifted out; save() regenerates it.
        if (
            technique_id is not None
            and len(refs) == 1
            and set(refs[0]) <= {"source_name", "external_id"}
        ):
            data.pop("external_references")

    ent = StixEntity(kind=kind, name=name, aliases=aliases, technique_id=technique_id, extra=data)
    if ident:
        ent.id = ident
    return ent


def _relation_from_obj(obj: dict[str, Any]) -> StixRelation | None:
    data = dict(obj)
    data.pop("type")
    rel_type = data.pop("relationship_type", None)
    kind = _RELATION_KIND_BY_TYPE.get(rel_type)
    if kind is None:
        return None
    ident = data.pop("id", "") or ""
    source_ref = data.pop("source_ref", "") or ""
    target_ref = data.pop("target_ref", "") or ""
    data.pop("spec_version", None)
    rel = StixRelation(kind=kind, source_ref=source_ref, target_ref=target_ref, extra=data)
    if ident:
        rel.id = ident
    return rel


def load_bundle(source: Union[str, Path, dict]) -> StixBundle:
    """Parse a STIX bundle from a dict, JSON string, or file path.

    Objects of unknown type (and relationships of unknown relationship_type)
    are skipped with a warning and collected on ``bundle.skipped``.
    """
    if isinstance(source, Path):
        raw: dict = json.loads(source.read_text(encoding="utf-8"))
    elif isinstance(source, str):
        p = Path(source)
        if source.lstrip().startswith("{"):
            raw = json.loads(source)
        else:
            raw = json.loads(p.read_text(encoding="utf-8"))
    else:
        raw = source

    data = dict(raw)
    objects = data.pop("objects", []) or []
    data.pop("type", None)
    ident = data.pop("id", "") or f"bundle--{uuid.uuid5(_namespace(DEFAULT_NAMESPACE_SEED), 'bundle|')}"
    bundle = StixBundle(id=ident, extra=data)

    for obj in objects:
        if not isinstance(obj, dict) or "type" not in obj:
            logger.warning("skipping malformed bundle object: %r", obj)
            bundle.skipped.append(obj if isinstance(obj, dict) else {"object": obj})
            continue
        otype = obj["type"]
        if otype in _ENTITY_KIND_BY_TYPE:
            bundle.entities.append(_entity_from_obj(obj))
        elif otype == "relationship":
            rel = _relation_from_obj(obj)
            if rel is None:
                logger.warning(
                    "skipping relationship with unknown relationship_type %r",
                    obj.get("relationship_type"),
                )
                bundle.skipped.append(obj)
            else:
                bundle.relations.append(rel)
        else:
            logger.warning("skipping object of unknown type %r", otype)
            bundle.skipped.append(obj)
    return bundle


def _entity_to_obj(ent: StixEntity) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "type": ent.kind.value,
        "spec_version": SPEC_VERSION,
        "id": ent.id,
        "name": ent.name,
    }
    if ent.aliases:
        obj["aliases"] = list(ent.aliases)
    if ent.technique_id is not None and "external_references" not in ent.extra:
        obj["external_references"] = [_minimal_technique_ref(ent.technique_id)]
    for key in sorted(ent.extra):
        obj[key] = ent.extra[key]
    return obj


def _relation_to_obj(rel: StixRelation) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "type": "relationship",
        "spec_version": SPEC_VERSION,
        "id": rel.id,
        "relationship_type": rel.kind.value,
        "source_ref": rel.source_ref,
        "target_ref": rel.target_ref,
    }
    for key in sorted(rel.extra):
        obj[key] = rel.extra[key]
    return obj


def save_bundle(bundle: StixBundle, path: Union[str, Path, None] = None) -> str:
    """Serialize to deterministic JSON: stable key order, stable object order
    (entities first, then relations, each in list order), 2-space indent."""
    doc: dict[str, Any] = {"type": "bundle", "id": bundle.id}
    for key in sorted(bundle.extra):
        doc[key] = bundle.extra[key]
    doc["objects"] = [_entity_to_obj(e) for e in bundle.entities] + [
        _relation_to_obj(r) for r in bundle.relations
    ]
    text = json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def validate_bundle(bundle: StixBundle) -> list[Violation]:
    """Structural checks: unique ids, resolvable refs, admissible triples,
    id prefixes matching kinds, non-empty names.  Empty result means valid."""
    violations: list[Violation] = []
    seen: dict[str, str] = {}
    by_id: dict[str, StixEntity] = {}

    for ent in bundle.entities:
        if ent.id in seen:
            violations.append(Violation("duplicate-id", f"id {ent.id} appears more than once", ent.id))
        seen[ent.id] = "entity"
        by_id[ent.id] = ent
        if not ent.name.strip():
            violations.append(Violation("empty-name", f"entity {ent.id} has an empty name", ent.id))
        prefix = ent.id.split("--", 1)[0]
        if prefix != ent.kind.value:
            violations.append(
                Violation(
                    "id-kind-mismatch",
                    f"entity {ent.id} has kind {ent.kind.value} but id prefix {prefix}",
                    ent.id,
                )
            )

    for rel in bundle.relations:
        if rel.id in seen:
            violations.append(Violation("duplicate-id", f"id {rel.id} appears more than once", rel.id))
        seen[rel.id] = "relation"
        src = by_id.get(rel.source_ref)
        dst = by_id.get(rel.target_ref)
        if src is None:
            violations.append(
                Violation("dangling-ref", f"relation {rel.id} source {rel.source_ref} not in bundle", rel.id)
            )
        if dst is None:
            violations.append(
                Violation("dangling-ref", f"relation {rel.id} target {rel.target_ref} not in bundle", rel.id)
            )
        if src is not None and dst is not None and not is_admissible(src.kind, rel.kind, dst.kind):
            violations.append(
                Violation(
                    "inadmissible-triple",
                    f"{src.kind.value} -{rel.kind.value}-> {dst.kind.value} is not admissible",
                    rel.id,
                )
            )
    return violations


def new_bundle(report_id: str, namespace_seed: str = DEFAULT_NAMESPACE_SEED) -> StixBundle:
    return StixBundle(id=bundle_id(report_id, namespace_seed))
