"""Final bundle assembly: merge extracted entities with classified
techniques and wire up the edges that follow from structure alone.

The entity pipeline produces malware / threat-actor / target / indicator
entities with their relations; the attack-pattern pipeline produces technique
matches but no graph.  Assembly turns each matched technique into an
attack-pattern entity, draws a ``uses`` edge from every principal (malware or
threat actor) to it, and re-ensures ``indicates`` edges from every indicator
to every malware.  All ids are content-derived, so assembly is idempotent:
running it twice, or re-running it on its own output, changes nothing.
"""

from __future__ import annotations

import logging
from typing import Optional

from .attack_patterns import AttackPatternResult
from .stix import (
    DEFAULT_NAMESPACE_SEED,
    EntityKind,
    RelationKind,
    StixBundle,
    StixEntity,
    StixRelation,
    Violation,
    entity_id,
    relation_id,
    validate_bundle,
)

logger = logging.getLogger(__name__)

_PRINCIPAL_KINDS = (EntityKind.MALWARE, EntityKind.THREAT_ACTOR)


def _add_entity(bundle: StixBundle, entity: StixEntity) -> None:
    if all(e.id != entity.id for e in bundle.entities):
        bundle.entities.append(entity)


def _add_relation(bundle: StixBundle, relation: StixRelation) -> None:
    if all(r.id != relation.id for r in bundle.relations):
        bundle.relations.append(relation)


def technique_entity(
    technique_id: str,
    name: Optional[str],
    namespace_seed: str = DEFAULT_NAMESPACE_SEED,
) -> StixEntity:
    display = name or technique_id
    return StixEntity(
        kind=EntityKind.ATTACK_PATTERN,
        name=display,
        id=entity_id(EntityKind.ATTACK_PATTERN, display, namespace_seed),
        technique_id=technique_id,
    )


def assemble_bundle(
    entity_bundle: StixBundle,
    ap_result: Optional[AttackPatternResult] = None,
    namespace_seed: str = DEFAULT_NAMESPACE_SEED,
) -> StixBundle:
    """One merged bundle; the inputs are not modified."""
    bundle = StixBundle(
        id=entity_bundle.id,
        entities=list(entity_bundle.entities),
        relations=list(entity_bundle.relations),
        extra=dict(entity_bundle.extra),
    )

    if ap_result is not None:
        principals = [e for e in bundle.entities if e.kind in _PRINCIPAL_KINDS]
        for match in ap_result.matches:
            ap = technique_entity(match.technique_id, match.name, namespace_seed)
            _add_entity(bundle, ap)
            for principal in principals:
                _add_relation(
                    bundle,
                    StixRelation(
                        kind=RelationKind.USES,
                        source_ref=principal.id,
                        target_ref=ap.id,
                        id=relation_id(
                            RelationKind.USES, principal.id, ap.id, namespace_seed
                        ),
                    ),
                )

    # structural edge: every indicator indicates every malware in the bundle
    indicators = bundle.entities_of_kind(EntityKind.INDICATOR)
    malware = bundle.entities_of_kind(EntityKind.MALWARE)
    if indicators and not malware:
        logger.warning(
            "bundle %s has %d indicator(s) but no malware; keeping them with no indicates edge",
            bundle.id,
            len(indicators),
        )
    for indicator in indicators:
        for mal in malware:
            _add_relation(
                bundle,
                StixRelation(
                    kind=RelationKind.INDICATES,
                    source_ref=indicator.id,
                    target_ref=mal.id,
                    id=relation_id(
                        RelationKind.INDICATES, indicator.id, mal.id, namespace_seed
                    ),
                ),
            )

    return bundle


def assemble_and_validate(
    entity_bundle: StixBundle,
    ap_result: Optional[AttackPatternResult] = None,
    namespace_seed: str = DEFAULT_NAMESPACE_SEED,
) -> tuple[StixBundle, list[Violation]]:
    bundle = assemble_bundle(entity_bundle, ap_result, namespace_seed)
    violations = validate_bundle(bundle)
    for v in violations:
        logger.warning("bundle %s: %s (%s)", bundle.id, v.message, v.code)
    return bundle, violations
