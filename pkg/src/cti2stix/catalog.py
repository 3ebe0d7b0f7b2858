"""Technique catalog: names, descriptions, and example embeddings per
MITRE ATT&CK technique.

Built from the enterprise ATT&CK STIX export: ``attack-pattern`` objects give
ids, names, and descriptions; ``uses`` relationships pointing at them carry
procedure-example texts.  Sub-techniques are collapsed into their parent —
T1027.002's description and examples all land under T1027 — because the
pipeline classifies at technique granularity.

Embedding a full catalog costs real API calls, so the result is cached on
disk (vectors in an ``.npz`` with a JSON metadata blob) keyed by the content
hash of the parsed catalog plus the embedding model id; a stale or
foreign-model cache is rebuilt, never trusted.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import numpy as np

logger = logging.getLogger(__name__)

TECHNIQUE_ID_RE = re.compile(r"\bT\d{4}(?:\.\d{3})?\b")
_MITRE_SOURCE = "mitre-attack"


@dataclass
class CatalogEntry:
    technique_id: str
    name: str
    example_id: str  # "description" or "procedure-N"
    text: str
    vector: np.ndarray

    def __eq__(self, other: object) -> bool:  # vectors need array comparison
        if not isinstance(other, CatalogEntry):
            return NotImplemented
        return (
            self.technique_id == other.technique_id
            and self.name == other.name
            and self.example_id == other.example_id
            and self.text == other.text
            and np.array_equal(self.vector, other.vector)
        )


@dataclass
class TechniqueCatalog:
    model: str
    dim: int
    content_hash: str
    entries: list[CatalogEntry] = field(default_factory=list)

    def technique_names(self) -> dict[str, str]:
        return {e.technique_id: e.name for e in self.entries if e.example_id == "description"}

    def entries_for(self, technique_id: str) -> list[CatalogEntry]:
        return [e for e in self.entries if e.technique_id == technique_id]


def parent_technique(technique_id: str) -> str:
    return technique_id.split(".", 1)[0]


def _external_technique_id(obj: dict[str, Any]) -> str | None:
    for ref in obj.get("external_references", []) or []:
        if isinstance(ref, dict) and ref.get("source_name") == _MITRE_SOURCE:
            ext = str(ref.get("external_id", ""))
            if TECHNIQUE_ID_RE.fullmatch(ext):
                return ext
    return None


def parse_attack_export(source: Union[str, Path, dict]) -> dict[str, dict[str, Any]]:
    """Parse an ATT&CK STIX export into ``{technique_id: {name, description,
    examples}}`` with sub-techniques collapsed into their parents.

    Revoked and deprecated objects are ignored.  Techniques that end up with
    zero procedure examples are kept (the description still gets embedded)
    with a warning, since they will match only near-verbatim text.
    """
    if isinstance(source, (str, Path)):
        raw = json.loads(Path(source).read_text(encoding="utf-8"))
    else:
        raw = source
    objects = raw.get("objects", [])

    stix_to_tid: dict[str, str] = {}
    techniques: dict[str, dict[str, Any]] = {}
    sub_descriptions: list[tuple[str, str]] = []

    for obj in objects:
        if obj.get("type") != "attack-pattern":
            continue
        if obj.get("revoked") or obj.get("x_mitre_deprecated"):
            continue
        tid = _external_technique_id(obj)
        if tid is None:
            logger.warning("attack-pattern %s has no technique id; skipped", obj.get("id"))
            continue
        stix_to_tid[obj["id"]] = tid
        parent = parent_technique(tid)
        description = (obj.get("description") or "").strip()
        if tid == parent:
            entry = techniques.setdefault(parent, {"name": "", "description": "", "examples": []})
            entry["name"] = obj.get("name", "")
            entry["description"] = description
        elif description:
            sub_descriptions.append((parent, description))

    for parent, description in sub_descriptions:
        entry = techniques.setdefault(parent, {"name": parent, "description": "", "examples": []})
        entry["examples"].append(description)

    for obj in objects:
        if obj.get("type") != "relationship" or obj.get("relationship_type") != "uses":
            continue
        tid = stix_to_tid.get(obj.get("target_ref", ""))
        if tid is None:
            continue
        text = (obj.get("description") or "").strip()
        if not text:
            continue
        parent = parent_technique(tid)
        if parent in techniques:
            techniques[parent]["examples"].append(text)

    for tid, entry in techniques.items():
        if not entry["examples"]:
            logger.warning(
                "technique %s (%s) has no procedure examples; description-only matching",
                tid,
                entry["name"],
            )
    return techniques


def catalog_content_hash(techniques: dict[str, dict[str, Any]]) -> str:
    blob = json.dumps(techniques, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def build_catalog(
    source: Union[str, Path, dict],
    provider: Any,
    cache_path: Union[str, Path, None] = None,
) -> TechniqueCatalog:
    """Parse, embed, and return the catalog, reusing a valid cache if given.

    The cache is valid only when both the embedding model id and the content
    hash of the parsed export match.
    """
    techniques = parse_attack_export(source)
    content_hash = catalog_content_hash(techniques)
    model = provider.config.embedding_model if hasattr(provider, "config") else "stub"

    if cache_path is not None and Path(cache_path).exists():
        cached = load_catalog(cache_path)
        if cached.content_hash == content_hash and cached.model == model:
            logger.info("catalog cache hit (%d entries)", len(cached.entries))
            return cached
        logger.info(
            "catalog cache stale (model %s vs %s); rebuilding", cached.model, model
        )

    texts: list[str] = []
    meta: list[tuple[str, str, str]] = []  # (tid, name, example_id)
    for tid in sorted(techniques):
        entry = techniques[tid]
        if entry["description"]:
            texts.append(entry["description"])
            meta.append((tid, entry["name"], "description"))
        for n, example in enumerate(entry["examples"]):
            texts.append(example)
            meta.append((tid, entry["name"], f"procedure-{n}"))

    vectors = provider.embed(texts) if texts else []
    dim = len(vectors[0]) if vectors else 0
    entries = [
        CatalogEntry(tid, name, example_id, text, np.asarray(vec, dtype=np.float64))
        for (tid, name, example_id), text, vec in zip(meta, texts, vectors)
    ]
    catalog = TechniqueCatalog(model=model, dim=dim, content_hash=content_hash, entries=entries)
    if cache_path is not None:
        save_catalog(catalog, cache_path)
    return catalog


def save_catalog(catalog: TechniqueCatalog, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "model": catalog.model,
        "dim": catalog.dim,
        "content_hash": catalog.content_hash,
        "entries": [
            {
                "technique_id": e.technique_id,
                "name": e.name,
                "example_id": e.example_id,
                "text": e.text,
            }
            for e in catalog.entries
        ],
    }
    vectors = (
        np.stack([e.vector for e in catalog.entries])
        if catalog.entries
        else np.zeros((0, catalog.dim))
    )
    with path.open("wb") as fh:
        np.savez_compressed(fh, meta=json.dumps(meta, ensure_ascii=False), vectors=vectors)


def load_catalog(path: Union[str, Path]) -> TechniqueCatalog:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        vectors = data["vectors"]
    entries = [
        CatalogEntry(
            item["technique_id"], item["name"], item["example_id"], item["text"],
            np.asarray(vectors[i], dtype=np.float64),
        )
        for i, item in enumerate(meta["entries"])
    ]
    return TechniqueCatalog(
        model=meta["model"], dim=meta["dim"], content_hash=meta["content_hash"], entries=entries
    )
