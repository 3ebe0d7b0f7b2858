"""IoC extractor tests: defanging, hash classing, overlap and dedup rules."""

import pytest

from cti2stix.iocs import IocMatch, find_iocs, ioc_entities, refang
from cti2stix.stix import EntityKind


def types_and_values(text):
    return [(m.ioc_type, m.value) for m in find_iocs(text)]


def test_defanged_ipv4_normalized_with_original_kept():
    text = "the C2 server at 92.118.188[.]78 stayed online"
    matches = find_iocs(text)
    assert [(m.ioc_type, m.value, m.original) for m in matches] == [
        ("ipv4", "92.118.188.78", "92.118.188[.]78")
    ]


def test_plain_and_paren_defanged_ipv4():
    assert types_and_values("hosts 10.1.2.3 and 10(.)1(.)2(.)4 replied") == [
        ("ipv4", "10.1.2.3"),
        ("ipv4", "10.1.2.4"),
    ]


@pytest.mark.parametrize(
    "text",
    [
        "driver version 10.0.19041.1 shipped",  # 5 dotted parts
        "build 2.0.1.3.4 appeared",
        "octet overflow 999.1.2.3 is not an address",
    ],
)
def test_ipv4_rejects_versions_and_overflow(text):
    assert all(m.ioc_type != "ipv4" for m in find_iocs(text))


def test_sentence_final_ip_still_matches():
    assert types_and_values("traffic went to 10.0.0.1.") == [("ipv4", "10.0.0.1")]


def test_hash_classification_by_length():
    md5 = "d41d8cd98f00b204e9800998ecf8427e"
    sha1 = "da39a3ee5e6b4b0d3255bfef95601890afd80709"
    sha256 = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    text = f"hashes: {md5} then {sha1} then {sha256}"
    assert types_and_values(text) == [("md5", md5), ("sha1", sha1), ("sha256", sha256)]


def test_uppercase_hash_normalized():
    assert types_and_values("MD5 D41D8CD98F00B204E9800998ECF8427E seen") == [
        ("md5", "d41d8cd98f00b204e9800998ecf8427e")
    ]


def test_cve_extraction_case_insensitive():
    assert types_and_values("exploits cve-2021-44228 in the wild") == [("cve", "CVE-2021-44228")]


def test_defanged_url_and_scheme():
    matches = find_iocs("payload at hxxp://update.badcdn[.]net/stage2.bin here")
    assert [(m.ioc_type, m.value) for m in matches] == [
        ("url", "http://update.badcdn.net/stage2.bin")
    ]
    assert matches[0].original == "hxxp://update.badcdn[.]net/stage2.bin"


def test_domain_inside_url_not_duplicated():
    text = "see https://evil.example.org/path and also evil.example.org alone"
    assert types_and_values(text) == [
        ("url", "https://evil.example.org/path"),
        ("domain", "evil.example.org"),
    ]


def test_defanged_domain():
    assert types_and_values("beacons to update[.]badcdn[.]net nightly") == [
        ("domain", "update.badcdn.net")
    ]


@pytest.mark.parametrize(
    "text",
    [
        "the dropper wrote invoice.exe to disk",
        "a malicious setup.msi installer",
        "see e.g. the appendix",
        "README.txt was left behind",
    ],
)
def test_file_names_and_abbreviations_are_not_domains(text):
    assert find_iocs(text) == []


def test_duplicates_collapse_to_first_occurrence():
    text = "10.0.0.1 called twice: 10.0.0.1 and defanged 10[.]0[.]0[.]1"
    matches = find_iocs(text)
    assert len(matches) == 1
    assert matches[0].original == "10.0.0.1"


def test_matches_ordered_by_position():
    text = "CVE-2020-0601 then badcdn.net then 10.0.0.5"
    assert [m.ioc_type for m in find_iocs(text)] == ["cve", "domain", "ipv4"]


def test_refang_helper():
    assert refang("hxxps://a[.]b") == "https://a.b"
    assert refang("10(.)0(.)0(.)1") == "10.0.0.1"


# ---------------------------------------------------------------------------
# entity conversion


def test_cve_becomes_vulnerability_entity():
    ents = ioc_entities("abuses CVE-2021-44228 remotely")
    assert len(ents) == 1
    assert ents[0].kind is EntityKind.VULNERABILITY
    assert ents[0].name == "CVE-2021-44228"


def test_indicator_entities_carry_stix_patterns():
    ents = ioc_entities("C2 at 92.118.188[.]78")
    assert ents[0].kind is EntityKind.INDICATOR
    assert ents[0].name == "92.118.188.78"
    assert ents[0].extra["pattern"] == "[ipv4-addr:value = '92.118.188.78']"
    assert ents[0].extra["pattern_type"] == "stix"
    assert ents[0].extra["original"] == "92.118.188[.]78"


def test_clean_indicator_has_no_original_field():
    ents = ioc_entities("C2 at 10.0.0.1")
    assert "original" not in ents[0].extra


def test_hash_entity_pattern_field():
    sha256 = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    ents = ioc_entities(f"sample {sha256}")
    assert ents[0].extra["pattern"] == f"[file:hashes.'SHA-256' = '{sha256}']"


def test_entity_ids_deterministic_across_calls():
    a = ioc_entities("beacons to badcdn.net")[0]
    b = ioc_entities("it resolved badcdn.net again")[0]
    assert a.id == b.id


def test_no_iocs_in_clean_prose():
    assert ioc_entities("The actor moved laterally and staged archives for exfiltration.") == []
