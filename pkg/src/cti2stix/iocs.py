"""Regex extraction of atomic indicators from report text.

Handles the defanging conventions CTI authors use so readers cannot click an
IoC by accident (``92.118.188[.]78``, ``hxxp://evil(.)example``): matches are
normalized to their clean form and the form found in the text is preserved.

CVE identifiers become Vulnerability entities; everything else becomes an
Indicator carrying a STIX pattern for the observable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .stix import DEFAULT_NAMESPACE_SEED, EntityKind, StixEntity, entity_id

_OCTET = r"(?:25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)"
_DOT = r"(?:\.|\[\.\]|\(\.\))"

IPV4_RE = re.compile(rf"(?<![\d.])(?:{_OCTET}{_DOT}){{3}}{_OCTET}(?!\.?\d)")

URL_RE = re.compile(
    r"\b(?:h(?:tt|xx)ps?|ftp):(?:\[:?//?\]|//)[^\s\"'<>]+",
    re.IGNORECASE,
)

_URL_TRAILING_JUNK = ".,;:!?\"')]}>"

DOMAIN_RE = re.compile(
    rf"\b(?:[a-z0-9](?:[a-z0-9-]{{0,61}}[a-z0-9])?{_DOT})+[a-z]{{2,24}}\b",
    re.IGNORECASE,
)

SHA256_RE = re.compile(r"\b[a-f0-9]{64}\b", re.IGNORECASE)
SHA1_RE = re.compile(r"\b[a-f0-9]{40}\b", re.IGNORECASE)
MD5_RE = re.compile(r"\b[a-f0-9]{32}\b", re.IGNORECASE)
CVE_RE = re.compile(r"\bCVE-\d{4}-\d{4,7}\b", re.IGNORECASE)

# Domain-looking tokens whose "TLD" is really a file extension are noise in
# CTI prose ("dropped invoice.exe"), so they are filtered out.  Deliberately
# short: real two-letter TLDs that double as extensions (sh, py) stay in.
_FILE_EXT_TLDS = frozenset(
    {
        "apk", "bat", "bin", "bmp", "cfg", "cmd", "cpl", "dat", "dll", "dmg",
        "doc", "docx", "drv", "elf", "exe", "gif", "gz", "ico", "ini", "iso",
        "jar", "jpeg", "jpg", "js", "lnk", "log", "msi", "ocx", "pdf", "png",
        "ppt", "pptx", "ps1", "rar", "scr", "sys", "tar", "tmp", "txt", "vbs",
        "xls", "xlsx", "yml", "yaml", "zip",
    }
)

# scan order doubles as overlap priority: a domain inside a matched URL is
# not re-reported on its own.
_IOC_PATTERNS: list[tuple[str, re.Pattern[str]]] = [
    ("url", URL_RE),
    ("ipv4", IPV4_RE),
    ("domain", DOMAIN_RE),
    ("sha256", SHA256_RE),
    ("sha1", SHA1_RE),
    ("md5", MD5_RE),
    ("cve", CVE_RE),
]

_STIX_PATTERN_FIELD = {
    "ipv4": "ipv4-addr:value",
    "domain": "domain-name:value",
    "url": "url:value",
    "md5": "file:hashes.MD5",
    "sha1": "file:hashes.'SHA-1'",
    "sha256": "file:hashes.'SHA-256'",
}


@dataclass(frozen=True)
class IocMatch:
    ioc_type: str
    value: str       # normalized (refanged, canonical case)
    original: str    # exactly as it appeared in the text
    start: int
    end: int


def refang(value: str) -> str:
    """Undo common defanging: bracketed dots/colons and hxxp schemes."""
    out = value.replace("[.]", ".").replace("(.)", ".")
    out = out.replace("[:]", ":").replace("[://]", "://").replace("[//]", "//")
    out = re.sub(r"^h(?:xx|XX|Xx|xX)(ps?)", r"htt\1", out, flags=re.IGNORECASE)
    out = re.sub(r"^hxxp", "http", out, flags=re.IGNORECASE)
    return out


def _normalize(ioc_type: str, original: str) -> str:
    value = refang(original)
    if ioc_type in {"md5", "sha1", "sha256"}:
        return value.lower()
    if ioc_type == "cve":
        return value.upper()
    if ioc_type == "domain":
        return value.lower()
    return value


def find_iocs(text: str) -> list[IocMatch]:
    """All indicator matches in first-occurrence order, deduplicated by
    (type, normalized value); matches nested inside an earlier match of a
    higher-priority pattern are suppressed."""
    taken: list[tuple[int, int]] = []
    found: list[IocMatch] = []
    seen: set[tuple[str, str]] = set()
    for ioc_type, pattern in _IOC_PATTERNS:
        for m in pattern.finditer(text):
            start, end = m.span()
            original = m.group()
            if ioc_type == "url":
                trimmed = original.rstrip(_URL_TRAILING_JUNK)
                end -= len(original) - len(trimmed)
                original = trimmed
            if any(start < t_end and end > t_start for t_start, t_end in taken):
                continue
            value = _normalize(ioc_type, original)
            if ioc_type == "domain" and value.rsplit(".", 1)[-1] in _FILE_EXT_TLDS:
                continue
            taken.append((start, end))
            key = (ioc_type, value)
            if key in seen:
                continue
            seen.add(key)
            found.append(IocMatch(ioc_type, value, original, start, end))
    found.sort(key=lambda x: (x.start, x.end))
    return found


def _stix_pattern(ioc_type: str, value: str) -> str:
    field = _STIX_PATTERN_FIELD[ioc_type]
    escaped = value.replace("\\", "\\\\").replace("'", "\\'")
    return f"[{field} = '{escaped}']"


def ioc_entities(text: str, namespace_seed: str = DEFAULT_NAMESPACE_SEED) -> list[StixEntity]:
    """Indicator/Vulnerability entities for every IoC in *text*."""
    entities = []
    for match in find_iocs(text):
        if match.ioc_type == "cve":
            ent = StixEntity(EntityKind.VULNERABILITY, match.value)
            ent.id = entity_id(EntityKind.VULNERABILITY, match.value, namespace_seed)
        else:
            extra = {
                "indicator_type": match.ioc_type,
                "pattern": _stix_pattern(match.ioc_type, match.value),
                "pattern_type": "stix",
            }
            if match.original != match.value:
                extra["original"] = match.original
            ent = StixEntity(EntityKind.INDICATOR, match.value, extra=extra)
            ent.id = entity_id(EntityKind.INDICATOR, match.value, namespace_seed)
        entities.append(ent)
    return entities
