"""Shared fixtures: a small ransomware report, scripted LLM rules, and a
matching technique-catalog fixture for hermetic end-to-end runs."""

import json

import pytest

from cti2stix.ingest import Report, make_report

# One short report with a known entity set: malware HelloXD, threat actor
# x4k, target "Windows and Linux systems".  Deliberately free of IoCs and of
# literal technique ids, so attack patterns can only arrive via embedding
# classification.
HELLOXD_TEXT = """HelloXD Ransomware Analysis

HelloXD is a ransomware family that surfaced in November 2021 and runs double extortion operations, impacting Windows and Linux systems alike.

Unlike most crews, the operators do not host a leak site. The ransom note instead directs victims to negotiate through the Tox peer-to-peer messenger. One observed sample also deployed an open-source backdoor alongside the encryptor.

Infrastructure overlap and forum activity link the operation to a developer using the alias x4k. The encryptor derives file keys locally and secures its command and control traffic using a custom encryption scheme."""

# The sentence the relevant-text strategy returns; also the text of the
# catalog example for T1573, so the hash embedder scores it 1.0.
VTE_CANDIDATE = (
    "The encryptor derives file keys locally and secures its command and "
    "control traffic using a custom encryption scheme."
)

SBSA_RESPONSE = (
    "1. HelloXD encrypts victim files on Windows and Linux hosts.\n"
    "2. The malware talks to its operators over a custom encrypted channel.\n"
    "3. Victims negotiate through the Tox messenger."
)

GOLDEN_SCRIPT = [
    ("Question: Who/which is the malware", "HelloXD"),
    ("Question: Who/which is the threat actor", "x4k"),
    ("Question: Who/which is the target", "Windows and Linux systems"),
    ('relation between "x4k" and "HelloXD"', "uses"),
    ("Return any relevant text verbatim", VTE_CANDIDATE),
    ("Describe step by step the key facts", SBSA_RESPONSE),
]


@pytest.fixture
def helloxd_report() -> Report:
    return make_report(HELLOXD_TEXT, title="HelloXD Ransomware Analysis", report_id="helloxd-2022")


@pytest.fixture
def golden_script():
    return list(GOLDEN_SCRIPT)


# A miniature MITRE-style technique export: two techniques, one
# sub-technique that must collapse into its parent, and one procedure-example
# relationship.  Shaped like the real enterprise-attack bundle.
MITRE_SAMPLE = {
    "type": "bundle",
    "id": "bundle--11111111-1111-4111-8111-111111111111",
    "objects": [
        {
            "type": "attack-pattern",
            "id": "attack-pattern--aaaa1111-0000-4000-8000-000000000001",
            "name": "Encrypted Channel",
            "description": "Adversaries may protect command and control traffic with an encryption scheme so defenders cannot read it.",
            "external_references": [
                {"source_name": "mitre-attack", "external_id": "T1573"}
            ],
        },
        {
            "type": "attack-pattern",
            "id": "attack-pattern--aaaa1111-0000-4000-8000-000000000002",
            "name": "Obfuscated Files or Information",
            "description": "Adversaries may encode or encrypt files to make payloads hard to discover or analyze.",
            "external_references": [
                {"source_name": "mitre-attack", "external_id": "T1027"}
            ],
        },
        {
            "type": "attack-pattern",
            "id": "attack-pattern--aaaa1111-0000-4000-8000-000000000003",
            "name": "Software Packing",
            "description": "Adversaries may compress or pack an executable to hide its code from scanners.",
            "x_mitre_is_subtechnique": True,
            "external_references": [
                {"source_name": "mitre-attack", "external_id": "T1027.002"}
            ],
        },
        {
            "type": "relationship",
            "id": "relationship--bbbb1111-0000-4000-8000-000000000001",
            "relationship_type": "uses",
            "source_ref": "malware--cccc1111-0000-4000-8000-000000000001",
            "target_ref": "attack-pattern--aaaa1111-0000-4000-8000-000000000001",
            "description": VTE_CANDIDATE,
        },
        {
            "type": "relationship",
            "id": "relationship--bbbb1111-0000-4000-8000-000000000002",
            "relationship_type": "uses",
            "source_ref": "malware--cccc1111-0000-4000-8000-000000000002",
            "target_ref": "attack-pattern--aaaa1111-0000-4000-8000-000000000003",
            "description": "A packed loader hides the second stage from static analysis.",
        },
        {
            "type": "identity",
            "id": "identity--dddd1111-0000-4000-8000-000000000001",
            "name": "The MITRE Corporation",
        },
    ],
}


@pytest.fixture
def mitre_sample_path(tmp_path):
    path = tmp_path / "enterprise-attack-sample.json"
    path.write_text(json.dumps(MITRE_SAMPLE), encoding="utf-8")
    return path


@pytest.fixture
def mini_catalog():
    from cti2stix.catalog import build_catalog
    from cti2stix.llm import ScriptedProvider

    return build_catalog(MITRE_SAMPLE, ScriptedProvider(script=[]))
