"""RFC ingestion: cleaning, sectionizing and persisting section records.

RFC plain text carries page furniture (running headers, ``[Page N]``
footers, form feeds) and tables of contents that would otherwise leak into
the extracted sections.  ``clean`` strips those lines and leaves everything
else untouched; ``sectionize`` splits the result at column-0 numbered
headings.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable

from .errors import NoSectionsFound, SpecforgeError, UnsupportedFormat

SOURCE_FORMATS = ("plain_text", "html")

HEADING_RE = re.compile(r"^(\d+(?:\.\d+)*)\.?\s+(\S.*)$")
APPENDIX_RE = re.compile(r"^Appendix ([A-Z])\.?(?:\s+(.*))?$")
APPENDIX_SUB_RE = re.compile(r"^([A-Z](?:\.\d+)+)\.?\s+(\S.*)$")
SECTION_ID_RE = re.compile(r"^(?:[0-9]+(?:\.[0-9]+)*|[A-Z](?:\.[0-9]+)*)$")

FOOTER_RE = re.compile(r"\[Page \d+\]\s*$")
HEADER_RE = re.compile(r"^(?:RFC|Internet-Draft)\s+\S+.*\S\s{2,}\S.*(?:19|20)\d\d\s*$")
TOC_ENTRY_RE = re.compile(r"(?:\.\s?){3,}\s*\d+\s*$")
TOC_HEADING_RE = re.compile(r"^\s*Table of Contents\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class RawDocument:
    rfc_id: str
    body: str
    source_format: str = "plain_text"

    def __post_init__(self):
        if not self.rfc_id:
            raise ValueError("rfc_id must be non-empty")
        if not self.body:
            raise ValueError("body must be non-empty")


@dataclass(frozen=True)
class Paragraph:
    index: int
    text: str


@dataclass(frozen=True)
class SectionRecord:
    rfc_id: str
    section_id: str
    title: str
    paragraphs: tuple[Paragraph, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "paragraphs", tuple(self.paragraphs))
        for i, p in enumerate(self.paragraphs):
            if p.index != i:
                raise ValueError(f"paragraph indices must be contiguous from 0 (got {p.index} at {i})")
        if not SECTION_ID_RE.match(self.section_id):
            raise ValueError(f"bad section id {self.section_id!r}")

    @property
    def ref(self) -> tuple[str, str]:
        return (self.rfc_id, self.section_id)

    @property
    def text(self) -> str:
        return "\n\n".join(p.text for p in self.paragraphs)

    def to_json(self) -> dict:
        return {
            "rfc_id": self.rfc_id,
            "section_id": self.section_id,
            "title": self.title,
            "paragraphs": [{"index": p.index, "text": p.text} for p in self.paragraphs],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SectionRecord":
        return cls(
            rfc_id=data["rfc_id"],
            section_id=data["section_id"],
            title=data["title"],
            paragraphs=tuple(Paragraph(p["index"], p["text"]) for p in data["paragraphs"]),
        )


@dataclass(frozen=True)
class Provenance:
    """Anchor tying an extracted element back to paragraphs of a section."""

    rfc_id: str
    section_id: str
    paragraph_indices: tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "paragraph_indices", tuple(sorted(set(self.paragraph_indices))))
        if not self.paragraph_indices:
            raise ValueError("provenance needs at least one paragraph index")

    def check(self, record: SectionRecord) -> None:
        if (record.rfc_id, record.section_id) != (self.rfc_id, self.section_id):
            raise ValueError(f"provenance {self} does not belong to section {record.section_id}")
        bad = [i for i in self.paragraph_indices if i >= len(record.paragraphs) or i < 0]
        if bad:
            raise ValueError(f"paragraph indices {bad} not in section {record.section_id}")

    def to_json(self) -> dict:
        return {
            "rfc_id": self.rfc_id,
            "section_id": self.section_id,
            "paragraph_indices": list(self.paragraph_indices),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Provenance":
        return cls(data["rfc_id"], data["section_id"], tuple(data["paragraph_indices"]))


class _TextExtractor(HTMLParser):
    BLOCK = {"p", "div", "pre", "br", "h1", "h2", "h3", "h4", "h5", "h6", "li", "tr", "section"}

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self._skip = 0

    def handle_starttag(self, tag, attrs):
        if tag in ("script", "style", "nav", "header", "footer"):
            self._skip += 1
        elif tag in self.BLOCK and self.parts and not self.parts[-1].endswith("\n"):
            self.parts.append("\n")

    def handle_endtag(self, tag):
        if tag in ("script", "style", "nav", "header", "footer"):
            self._skip = max(0, self._skip - 1)
        elif tag in self.BLOCK and tag != "pre":
            self.parts.append("\n")

    def handle_data(self, data):
        if not self._skip:
            self.parts.append(data)


def html_to_text(body: str) -> str:
    parser = _TextExtractor()
    parser.feed(body)
    parser.close()
    return "".join(parser.parts)


def _is_boilerplate(line: str) -> bool:
    return bool(FOOTER_RE.search(line) or HEADER_RE.match(line))


def clean(doc: RawDocument) -> str:
    """Remove page furniture and table-of-contents blocks from ``doc``.

    Each page break (footer, form feed, running header and the blank lines
    around them) collapses to a single blank line.  Other lines pass through
    unchanged.
    """
    if doc.source_format == "html":
        body = html_to_text(doc.body)
    elif doc.source_format == "plain_text":
        body = doc.body
    else:
        raise UnsupportedFormat(f"unsupported source format {doc.source_format!r}")

    lines = body.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    out: list[str] = []
    in_toc = False
    pending_break = False
    for raw in lines:
        line = raw.replace("\f", "")
        has_ff = "\f" in raw
        if TOC_HEADING_RE.match(line):
            in_toc = True
            continue
        if in_toc:
            if TOC_ENTRY_RE.search(line) or not line.strip():
                continue
            if line.startswith((" ", "\t")) and out and not out[-1].strip():
                # wrapped ToC entry whose page number is on the next line
                continue
            in_toc = False
        if _is_boilerplate(line) or (has_ff and not line.strip()):
            pending_break = True
            while out and not out[-1].strip():
                out.pop()
            continue
        if TOC_ENTRY_RE.search(line) and line.startswith((" ", "\t")):
            continue
        if pending_break:
            if not line.strip():
                continue
            out.append("")
            pending_break = False
        out.append(line.rstrip())
    while out and not out[-1].strip():
        out.pop()
    return "\n".join(out) + ("\n" if out else "")


def _heading(line: str) -> tuple[str, str] | None:
    m = HEADING_RE.match(line)
    if m:
        return m.group(1), m.group(2).strip()
    m = APPENDIX_RE.match(line)
    if m:
        return m.group(1), (m.group(2) or "").strip()
    m = APPENDIX_SUB_RE.match(line)
    if m:
        return m.group(1), m.group(2).strip()
    return None


def _paragraphs(lines: list[str]) -> tuple[Paragraph, ...]:
    blocks: list[list[str]] = []
    cur: list[str] = []
    for line in lines:
        if line.strip():
            cur.append(line)
        elif cur:
            blocks.append(cur)
            cur = []
    if cur:
        blocks.append(cur)
    return tuple(Paragraph(i, "\n".join(b)) for i, b in enumerate(blocks))


def sectionize(cleaned: str, rfc_id: str) -> list[SectionRecord]:
    """Split cleaned RFC text into section records.

    Text before the first heading becomes section ``"0"``.
    """
    if not cleaned.strip():
        return []
    sections: list[tuple[str, str, list[str]]] = []
    current = ("0", "", [])
    for line in cleaned.split("\n"):
        head = _heading(line)
        if head is not None:
            sections.append(current)
            current = (head[0], head[1], [])
        else:
            current[2].append(line)
    sections.append(current)
    if len(sections) == 1:
        raise NoSectionsFound(f"no numbered headings found in {rfc_id}")
    records = []
    for sid, title, body in sections:
        paras = _paragraphs(body)
        if sid == "0" and not paras:
            continue
        records.append(SectionRecord(rfc_id, sid, title, paras))
    return records


def section_sort_key(section_id: str) -> tuple:
    parts = section_id.split(".")
    if parts[0].isdigit():
        return (0, tuple(int(p) for p in parts))
    return (1, (ord(parts[0]),) + tuple(int(p) for p in parts[1:]))


def section_dir(root: Path | str, rfc_id: str) -> Path:
    return Path(root) / "data" / "RFC" / rfc_id


def store_sections(records: Iterable[SectionRecord], root: Path | str) -> list[Path]:
    paths = []
    try:
        for rec in records:
            d = section_dir(root, rec.rfc_id)
            d.mkdir(parents=True, exist_ok=True)
            p = d / f"{rec.section_id}.json"
            p.write_text(json.dumps(rec.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
            paths.append(p)
    except OSError as exc:
        raise SpecforgeError(f"cannot store sections: {exc}") from exc
    return paths


def load_sections(root: Path | str, rfc_id: str) -> list[SectionRecord]:
    d = section_dir(root, rfc_id)
    records = [SectionRecord.from_json(json.loads(p.read_text(encoding="utf-8"))) for p in d.glob("*.json")]
    return sorted(records, key=lambda r: section_sort_key(r.section_id))


def ingest_file(path: Path | str, rfc_id: str | None = None) -> list[SectionRecord]:
    path = Path(path)
    fmt = "html" if path.suffix.lower() in (".html", ".htm") else "plain_text"
    rfc_id = rfc_id or re.sub(r"\D", "", path.stem) or path.stem
    doc = RawDocument(rfc_id, path.read_text(encoding="utf-8"), fmt)
    return sectionize(clean(doc), rfc_id)
