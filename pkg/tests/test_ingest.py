"""Ingestion tests: segmentation oracle, span tiling, HTML extraction, plugins."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import cti2stix.ingest as ingest
from cti2stix.ingest import (
    FetchError,
    Report,
    SourcePlugin,
    content_hash_id,
    extract_article,
    fetch,
    load_plugins,
    make_report,
    parse_html,
    report_from_path,
    segment_sentences,
    select,
)

# Fifty sentences with the boundary hazards the segmenter must survive:
# decimals, version numbers, defanged IoCs, abbreviations, initials, quotes,
# question/exclamation endings, and digit-initial sentences.  The list is the
# oracle: joining it with single spaces and re-segmenting must return it.
FIFTY_SENTENCES = [
    "The campaign began with a phishing email sent to finance staff.",
    "Researchers at e.g. three different vendors confirmed the activity.",
    "The loader dropped version 2.0 of the implant within minutes.",
    "Victims reported encrypted files across 14 subsidiaries.",
    "The ransom note demanded payment within 72 hours.",
    "Analysts attributed the wave to a group tracked since 2019.",
    "Dr. Alvarez presented the findings at the annual summit.",
    "The beacon contacted 92.118.188[.]78 every five minutes.",
    "Command traffic used RC4 with a dynamically built key.",
    "A CVSS score of 9.8 was assigned to the flaw.",
    "Exploitation requires no authentication whatsoever!",
    "Could the operators have reused old infrastructure?",
    "The sample was compiled on a Tuesday, i.e. two days before release.",
    "Telemetry showed lateral movement via SMB shares.",
    "2022 saw a sharp rise in double-extortion incidents.",
    "The group registered lookalike domains for months.",
    "Sandbox detonation revealed a packed payload inside the installer.",
    "Defenders blocked the hash across all endpoints.",
    "The technique catalog lists T1027.002 under obfuscation.",
    "Operators switched to a new packer, etc. went unnoticed for weeks.",
    "An affiliate leaked the builder on an underground forum.",
    "J. Moreno traced the wallet through three exchanges.",
    "The backup servers survived because they were offline.",
    "\"We saw nothing unusual,\" the administrator said.",
    "Incident responders rebuilt the domain controller overnight.",
    "The stolen data included contracts and payroll records.",
    "A second wave hit logistics providers in March.",
    "The actor's toolkit overlaps with earlier espionage campaigns.",
    "Passwords were harvested from browser credential stores.",
    "The dropper checked for sandbox artifacts before detonating.",
    "Encrypted archives left the network over port 443.",
    "Defense contractors received tailored lure documents.",
    "The exploit chain abused a signed driver.",
    "Recovery took 11 days and cost millions.",
    "Negotiations collapsed after the first call.",
    "The decryptor shipped with a hardcoded test key.",
    "Hunting queries flagged anomalous PowerShell usage.",
    "The botnet counted roughly 40,000 infected routers.",
    "Forensics recovered fragments of the original loader.",
    "A kill switch domain was registered within hours.",
    "The intrusion set favored living-off-the-land binaries.",
    "Ségolène's team documented every pivot in the timeline.",
    "Outbound DNS tunneling carried the staged archives.",
    "The affiliate program paid 70 percent commissions.",
    "Monitoring caught a second implant on the print server.",
    "The advisory urged patching before the weekend.",
    "Attackers wiped logs on 6 of 9 compromised hosts.",
    "Insurance covered only part of the damages.",
    "The final report ran 58 pages.",
    "Lessons learned fed directly into the new playbook.",
]


def test_fifty_sentence_oracle():
    assert len(FIFTY_SENTENCES) == 50
    text = " ".join(FIFTY_SENTENCES)
    recovered = [s.text.strip() for s in segment_sentences(text)]
    assert recovered == FIFTY_SENTENCES


def test_segmentation_is_a_partition():
    text = " ".join(FIFTY_SENTENCES)
    sentences = segment_sentences(text)
    assert "".join(s.text for s in sentences) == text
    cursor = 0
    for i, s in enumerate(sentences):
        assert s.index == i
        assert s.start == cursor
        assert s.text == text[s.start : s.end]
        cursor = s.end
    assert cursor == len(text)


@pytest.mark.parametrize(
    "text,expected",
    [
        ("", 0),
        ("no terminal punctuation at all", 1),
        ("One. Two. Three.", 3),
        ("Version 2.0 was released. It spread fast.", 2),
        ("The host pinged 10.0.0.1 repeatedly.", 1),
        ("See fig. 3 for details. The chart explains it.", 2),
        ("Mr. Smith met Dr. Jones. They talked.", 2),
        ("Was it targeted? Yes! Entirely.", 3),
        ("Heading Without Punctuation\n\nThe body starts here.", 2),
        ("\"Stop.\" He did not stop.", 2),
        ("The C2 lived at example[.]com. Traffic resumed.", 2),
    ],
)
def test_boundary_cases(text, expected):
    assert len(segment_sentences(text)) == expected


@settings(max_examples=150, deadline=None)
@given(st.text(max_size=600))
def test_partition_property(text):
    sentences = segment_sentences(text)
    assert "".join(s.text for s in sentences) == text
    cursor = 0
    for i, s in enumerate(sentences):
        assert (s.index, s.start) == (i, cursor)
        assert s.end > s.start
        cursor = s.end
    if text:
        assert cursor == len(text)
    else:
        assert sentences == []


# ---------------------------------------------------------------------------
# HTML extraction

SAMPLE_HTML = """
<html>
  <head><title>Threat Brief: Example Intrusion</title>
    <style>p { color: red }</style>
  </head>
  <body>
    <nav><ul><li>Home</li><li>Blog</li></ul></nav>
    <script>var tracking = true;</script>
    <h1>Example Intrusion</h1>
    <div class="article-body">
      <p>First paragraph of the analysis.</p>
      <p>Second paragraph with <b>inline</b> markup.</p>
      <ul><li>Dropped file one</li><li>Dropped file two</li></ul>
      <table><tr><td>Hash</td><td>abc123</td></tr></table>
    </div>
    <div class="sidebar"><p>Subscribe to our newsletter!</p></div>
    <footer><p>Copyright 2024</p></footer>
  </body>
</html>
"""


def test_generic_extraction_keeps_blocks_in_order():
    title, body = extract_article(SAMPLE_HTML)
    assert title == "Threat Brief: Example Intrusion"
    blocks = body.split("\n\n")
    assert blocks[0] == "Example Intrusion"
    assert blocks[1] == "First paragraph of the analysis."
    assert blocks[2] == "Second paragraph with inline markup."
    assert "Dropped file one" in blocks
    assert "Hash" in blocks and "abc123" in blocks
    assert "var tracking" not in body
    assert "Home" not in body  # nav dropped
    assert "color: red" not in body


def test_plugin_selectors_limit_extraction():
    plugin = SourcePlugin(
        name="example-blog",
        hosts=["blog.example.com"],
        selectors=["div.article-body"],
    )
    _, body = extract_article(SAMPLE_HTML, url="https://blog.example.com/post/1", plugins=[plugin])
    assert "First paragraph" in body
    assert "Subscribe" not in body
    assert "Copyright" not in body


def test_first_matching_plugin_wins():
    first = SourcePlugin(name="first", hosts=["example.com"], selectors=["div.sidebar"])
    second = SourcePlugin(name="second", hosts=["example.com"], selectors=["div.article-body"])
    _, body = extract_article(SAMPLE_HTML, url="https://example.com/x", plugins=[first, second])
    assert "Subscribe" in body
    assert "First paragraph" not in body


def test_plugin_with_empty_selection_falls_back(caplog):
    plugin = SourcePlugin(name="stale", hosts=["example.com"], selectors=["div.gone"])
    with caplog.at_level("WARNING"):
        _, body = extract_article(SAMPLE_HTML, url="https://example.com/x", plugins=[plugin])
    assert "First paragraph" in body
    assert any("stale" in r.message for r in caplog.records)


def test_plugin_host_matching():
    plugin = SourcePlugin(name="p", hosts=["unit42.example.com", "*.research.net"], selectors=[])
    assert plugin.claims("https://unit42.example.com/post")
    assert plugin.claims("https://www.research.net/a")
    assert not plugin.claims("https://other.org/a")
    assert not plugin.claims("not a url")


def test_selector_subset():
    root = parse_html(SAMPLE_HTML)
    assert len(select(root, "p")) == 4
    assert len(select(root, "div.article-body p")) == 2
    assert len(select(root, ".sidebar")) == 1
    assert select(root, "h1")[0].text() == "Example Intrusion"
    with pytest.raises(ValueError):
        select(root, "p > b")


def test_load_plugins_yaml(tmp_path):
    path = tmp_path / "plugins.yaml"
    path.write_text(
        "- name: example\n"
        "  hosts: [blog.example.com]\n"
        "  selectors: ['div.article-body']\n"
        "  title_selector: h1\n"
    )
    plugins = load_plugins(path)
    assert len(plugins) == 1
    assert plugins[0].name == "example"
    assert plugins[0].title_selector == "h1"


# ---------------------------------------------------------------------------
# reports


def test_make_report_defaults_to_content_hash_id():
    report = make_report("Some body. Two sentences.")
    assert report.id == content_hash_id("Some body. Two sentences.")
    assert len(report.sentences) == 2


def test_report_from_txt_path_uses_stem(tmp_path):
    p = tmp_path / "report-007.txt"
    p.write_text("A short report. It has two sentences.")
    report = report_from_path(p)
    assert report.id == "report-007"
    assert len(report.sentences) == 2


def test_report_from_html_path(tmp_path):
    p = tmp_path / "post.html"
    p.write_text(SAMPLE_HTML)
    report = report_from_path(p)
    assert report.id == "post"
    assert report.title == "Threat Brief: Example Intrusion"
    assert "First paragraph of the analysis." in report.text


# ---------------------------------------------------------------------------
# fetch


class _FakeResponse:
    def __init__(self, status_code=200, text="body", url="https://x/final", content_type="text/html"):
        self.status_code = status_code
        self.text = text
        self.url = url
        self.headers = {"Content-Type": content_type}


def test_fetch_success(monkeypatch):
    class FakeSession:
        max_redirects = 0

        def get(self, url, timeout, headers, allow_redirects):
            assert allow_redirects
            return _FakeResponse(text="<html></html>")

    monkeypatch.setattr(ingest.requests, "Session", FakeSession)
    result = fetch("https://x/page")
    assert result.text == "<html></html>"
    assert result.final_url == "https://x/final"


def test_fetch_http_error(monkeypatch):
    class FakeSession:
        max_redirects = 0

        def get(self, url, timeout, headers, allow_redirects):
            return _FakeResponse(status_code=404)

    monkeypatch.setattr(ingest.requests, "Session", FakeSession)
    with pytest.raises(FetchError, match="HTTP 404") as err:
        fetch("https://x/missing")
    assert err.value.url == "https://x/missing"


def test_fetch_redirect_bound(monkeypatch):
    class FakeSession:
        max_redirects = 0

        def get(self, url, timeout, headers, allow_redirects):
            raise ingest.requests.TooManyRedirects()

    monkeypatch.setattr(ingest.requests, "Session", FakeSession)
    with pytest.raises(FetchError, match="redirects"):
        fetch("https://x/loop", max_redirects=3)
