"""Report ingestion: fetch, HTML-to-text extraction, sentence segmentation.

Vendor blogs wrap the useful prose in very different markup, so extraction is
plugin-driven: a source plugin is pure configuration (URL pattern plus a
selector list), never per-source code.  When no plugin claims a URL, a
generic boilerplate stripper keeps headings, paragraphs, list items, and
table cells in document order and drops script/style/nav subtrees.

Sentence segmentation is deliberately rule-based and deterministic — the rest
of the pipeline (chunking, the one-sentence candidate strategy) needs stable
sentence ids across runs.  Spans tile the source text exactly: every
character belongs to exactly one sentence span, so joining spans in order
reproduces the input byte for byte.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from fnmatch import fnmatch
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable, Union
from urllib.parse import urlparse

import requests
import yaml

logger = logging.getLogger(__name__)

_WS_RE = re.compile(r"\s+")

_SENTENCE_PUNCT = ".!?"
_CLOSER_CHARS = "\"')]”’»"
_OPENER_CHARS = "\"'“‘([«"

# Tokens before a period that end an abbreviation, not a sentence.
ABBREVIATIONS = frozenset(
    {
        "al", "approx", "apt", "aug", "ca", "cf", "co", "corp", "dec", "dept",
        "dr", "e.g", "etc", "feb", "fig", "figs", "gen", "gov", "i.e", "inc",
        "jan", "jr", "ltd", "mar", "max", "messrs", "min", "mr", "mrs", "ms",
        "no", "nov", "oct", "prof", "rev", "sep", "sept", "sr", "st", "vs",
    }
)


class FetchError(Exception):
    """A URL could not be retrieved; carries the URL and the cause."""

    def __init__(self, url: str, cause: str):
        super().__init__(f"failed to fetch {url}: {cause}")
        self.url = url
        self.cause = cause


@dataclass
class Sentence:
    index: int
    start: int
    end: int
    text: str


@dataclass
class Report:
    """One source document, segmented and ready for the pipelines."""

    id: str
    text: str
    title: str = ""
    url: str = ""
    sentences: list[Sentence] = field(default_factory=list)


@dataclass
class SourcePlugin:
    """Declarative extraction recipe for one report source."""

    name: str
    hosts: list[str]
    selectors: list[str]
    title_selector: str = ""

    def claims(self, url: str) -> bool:
        host = urlparse(url).netloc.lower()
        if not host:
            return False
        for pattern in self.hosts:
            pat = pattern.lower()
            if fnmatch(host, pat) or host == pat or host.endswith("." + pat):
                return True
        return False


def load_plugins(path: Union[str, Path]) -> list[SourcePlugin]:
    """Read plugin definitions from a YAML list (see README for the schema)."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or []
    plugins = []
    for item in raw:
        plugins.append(
            SourcePlugin(
                name=item["name"],
                hosts=list(item.get("hosts", [])),
                selectors=list(item.get("selectors", [])),
                title_selector=item.get("title_selector", ""),
            )
        )
    return plugins


def content_hash_id(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# fetching


@dataclass
class FetchResult:
    url: str
    final_url: str
    content_type: str
    text: str


def fetch(
    url: str,
    timeout: float = 30.0,
    max_redirects: int = 10,
    user_agent: str = "cti2stix/0.1",
) -> FetchResult:
    """GET a report URL with bounded redirects and a strict timeout."""
    session = requests.Session()
    session.max_redirects = max_redirects
    try:
        resp = session.get(
            url,
            timeout=timeout,
            headers={"User-Agent": user_agent},
            allow_redirects=True,
        )
    except requests.TooManyRedirects:
        raise FetchError(url, f"more than {max_redirects} redirects")
    except requests.RequestException as exc:
        raise FetchError(url, str(exc))
    if resp.status_code != 200:
        raise FetchError(url, f"HTTP {resp.status_code}")
    return FetchResult(
        url=url,
        final_url=resp.url,
        content_type=resp.headers.get("Content-Type", ""),
        text=resp.text,
    )


# ---------------------------------------------------------------------------
# a minimal DOM + CSS-ish selectors on top of html.parser

_VOID_TAGS = {
    "area", "base", "br", "col", "embed", "hr", "img", "input",
    "link", "meta", "param", "source", "track", "wbr",
}

_SKIP_TAGS = {"script", "style", "nav", "noscript", "template"}
_BLOCK_TAGS = {"h1", "h2", "h3", "h4", "h5", "h6", "p", "li", "td", "th"}


class _Element:
    __slots__ = ("tag", "attrs", "children", "parent")

    def __init__(self, tag: str, attrs: dict[str, str], parent: "_Element | None"):
        self.tag = tag
        self.attrs = attrs
        self.children: list[Union[_Element, str]] = []
        self.parent = parent

    @property
    def classes(self) -> set[str]:
        return set((self.attrs.get("class") or "").split())

    def walk(self) -> Iterable["_Element"]:
        yield self
        for child in self.children:
            if isinstance(child, _Element):
                yield from child.walk()

    def text(self) -> str:
        parts: list[str] = []
        for child in self.children:
            if isinstance(child, str):
                parts.append(child)
            else:
                parts.append(child.text())
        return "".join(parts)


class _DomBuilder(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.root = _Element("#document", {}, None)
        self._stack = [self.root]

    def handle_starttag(self, tag, attrs):
        element = _Element(tag, dict(attrs), self._stack[-1])
        self._stack[-1].children.append(element)
        if tag not in _VOID_TAGS:
            self._stack.append(element)

    def handle_endtag(self, tag):
        for i in range(len(self._stack) - 1, 0, -1):
            if self._stack[i].tag == tag:
                del self._stack[i:]
                break

    def handle_data(self, data):
        if data:
            self._stack[-1].children.append(data)


def parse_html(markup: str) -> _Element:
    builder = _DomBuilder()
    builder.feed(markup)
    builder.close()
    return builder.root


@dataclass(frozen=True)
class _SimpleSelector:
    tag: str
    id: str
    classes: frozenset[str]

    def matches(self, element: _Element) -> bool:
        if self.tag and element.tag != self.tag:
            return False
        if self.id and element.attrs.get("id") != self.id:
            return False
        return self.classes <= element.classes


def _parse_selector(selector: str) -> list[_SimpleSelector]:
    parts = []
    for token in selector.split():
        m = re.fullmatch(r"([a-zA-Z][\w-]*)?(?:#([\w-]+))?((?:\.[\w-]+)*)", token)
        if not m:
            raise ValueError(f"unsupported selector: {selector!r}")
        tag, ident, class_blob = m.group(1) or "", m.group(2) or "", m.group(3) or ""
        classes = frozenset(c for c in class_blob.split(".") if c)
        parts.append(_SimpleSelector(tag, ident, classes))
    if not parts:
        raise ValueError("empty selector")
    return parts


def select(root: _Element, selector: str) -> list[_Element]:
    """Document-order matches for a selector subset: ``tag``, ``#id``,
    ``.class`` (combinable, e.g. ``div.article-body``) and the descendant
    combinator (space)."""
    chain = _parse_selector(selector)
    out = []
    for element in root.walk():
        if element.tag == "#document" or not chain[-1].matches(element):
            continue
        remaining = len(chain) - 2
        node = element.parent
        while remaining >= 0 and node is not None:
            if chain[remaining].matches(node):
                remaining -= 1
            node = node.parent
        if remaining < 0:
            out.append(element)
    return out


def _collapse(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def _blocks_under(element: _Element) -> list[str]:
    """Heading/paragraph/list/table-cell texts under *element*, in document
    order, skipping script/style/nav subtrees.  A matched block is emitted
    whole; nested block tags inside it are not emitted again."""
    blocks: list[str] = []

    def visit(node: _Element) -> None:
        for child in node.children:
            if not isinstance(child, _Element):
                continue
            if child.tag in _SKIP_TAGS:
                continue
            if child.tag in _BLOCK_TAGS:
                text = _collapse(child.text())
                if text:
                    blocks.append(text)
                continue
            visit(child)

    visit(element)
    return blocks


def extract_article(
    markup: str,
    url: str = "",
    plugins: Iterable[SourcePlugin] = (),
) -> tuple[str, str]:
    """Turn raw HTML into (title, body text).

    The first plugin whose host pattern claims the URL is used; if it selects
    nothing (layout drifted), the generic extractor takes over with a
    warning.  Blocks are joined with blank lines so paragraph boundaries
    survive into segmentation.
    """
    root = parse_html(markup)

    title = ""
    for node in select(root, "title"):
        title = _collapse(node.text())
        if title:
            break
    if not title:
        for node in select(root, "h1"):
            title = _collapse(node.text())
            if title:
                break

    plugin = next((p for p in plugins if p.claims(url)), None)
    blocks: list[str] = []
    if plugin is not None:
        seen: set[int] = set()
        for selector in plugin.selectors:
            for region in select(root, selector):
                if id(region) in seen:
                    continue
                seen.add(id(region))
                region_blocks = _blocks_under(region)
                if region_blocks:
                    blocks.extend(region_blocks)
                else:
                    text = _collapse(region.text())
                    if text:
                        blocks.append(text)
        if plugin.title_selector:
            for node in select(root, plugin.title_selector):
                text = _collapse(node.text())
                if text:
                    title = text
                    break
        if not blocks:
            logger.warning(
                "plugin %s matched %s but selected no content; using generic extractor",
                plugin.name,
                url or "<unnamed document>",
            )
    if not blocks:
        blocks = _blocks_under(root)
    return title, "\n\n".join(blocks)


# ---------------------------------------------------------------------------
# sentence segmentation


def _prev_token(text: str, dot: int) -> str:
    """Word characters immediately before position *dot* (letters/digits)."""
    i = dot
    while i > 0 and (text[i - 1].isalnum() or text[i - 1] == "."):
        i -= 1
    return text[i:dot]


def _is_boundary(text: str, i: int) -> int:
    """If a sentence ends at punctuation index *i*, return the index where
    the next sentence starts; else -1."""
    j = i
    while j < len(text) and text[j] in _SENTENCE_PUNCT:
        j += 1
    run = text[i:j]
    while j < len(text) and text[j] in _CLOSER_CHARS:
        j += 1
    if j < len(text) and not text[j].isspace():
        return -1  # mid-token period: decimals, versions, domains, defanged IPs

    if run == ".":
        token = _prev_token(text, i).rstrip(".")
        token = token.rsplit(".", 1)[-1] if "." in token else token
        before = _prev_token(text, i).lower().rstrip(".")
        if before in ABBREVIATIONS:
            return -1
        if len(token) == 1 and token.isalpha():
            return -1  # initials such as "J. Smith" or "e.g." / "U.S."

    k = j
    while k < len(text) and text[k].isspace():
        k += 1
    if k == len(text):
        return -1  # trailing whitespace stays with the final sentence
    nxt = text[k]
    if nxt.isupper() or nxt.isdigit() or nxt in _OPENER_CHARS:
        return k
    return -1


def _blank_line_starts(text: str) -> list[int]:
    starts = []
    for m in re.finditer(r"\n[ \t\r]*\n\s*", text):
        if m.end() < len(text):
            starts.append(m.end())
    return starts


def segment_sentences(text: str) -> list[Sentence]:
    """Deterministic sentence segmentation whose spans tile the input.

    Boundaries fall after terminal punctuation followed by whitespace and an
    upper-case/digit/opening-quote start, with guards for decimals,
    abbreviations, and single-letter initials; a blank line is always a
    boundary (headings carry no terminal punctuation).
    """
    if not text:
        return []
    starts: set[int] = set(_blank_line_starts(text))
    i = 0
    while i < len(text):
        if text[i] in _SENTENCE_PUNCT:
            nxt = _is_boundary(text, i)
            if nxt > 0:
                starts.add(nxt)
                i = nxt
                continue
            while i < len(text) and text[i] in _SENTENCE_PUNCT:
                i += 1
            continue
        i += 1

    ordered = sorted(s for s in starts if 0 < s < len(text))
    bounds = [0] + ordered + [len(text)]
    sentences = []
    for index, (start, end) in enumerate(zip(bounds, bounds[1:])):
        sentences.append(Sentence(index=index, start=start, end=end, text=text[start:end]))
    return sentences


def make_report(
    text: str,
    title: str = "",
    url: str = "",
    report_id: str | None = None,
) -> Report:
    """Assemble a :class:`Report`; ids default to a hash of the body text."""
    rid = report_id if report_id else content_hash_id(text)
    return Report(id=rid, text=text, title=title, url=url, sentences=segment_sentences(text))


def report_from_path(path: Union[str, Path], plugins: Iterable[SourcePlugin] = ()) -> Report:
    """Build a report from a local ``.txt`` or ``.html`` file; the file stem
    becomes the report id."""
    p = Path(path)
    raw = p.read_text(encoding="utf-8")
    if p.suffix.lower() in {".html", ".htm"}:
        title, body = extract_article(raw, plugins=plugins)
        return make_report(body, title=title, report_id=p.stem)
    return make_report(raw, report_id=p.stem)


def report_from_url(
    url: str,
    plugins: Iterable[SourcePlugin] = (),
    timeout: float = 30.0,
    report_id: str | None = None,
) -> Report:
    result = fetch(url, timeout=timeout)
    if "html" in result.content_type.lower() or result.text.lstrip()[:1] == "<":
        title, body = extract_article(result.text, url=result.final_url, plugins=plugins)
    else:
        title, body = "", result.text
    return make_report(body, title=title, url=url, report_id=report_id)
