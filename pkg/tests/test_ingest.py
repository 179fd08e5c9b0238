import pytest
from hypothesis import given, settings, strategies as st

from specforge.errors import NoSectionsFound, UnsupportedFormat
from specforge.ingest import (RawDocument, SectionRecord, clean, ingest_file, load_sections, sectionize,
                              store_sections, _heading)
from specforge.protocols import POP3

from conftest import DATA

PAGE_FURNITURE = {
    "sample_a": ["Example                      Informational                      [Page 1]",
                 "RFC 9901                     Sample Echo Protocol             March 2001"],
}


def _nonblank(text):
    return [l.rstrip() for l in text.replace("\f", "").splitlines() if l.strip()]


@pytest.mark.parametrize("name", ["sample_a", "sample_b", "sample_c"])
def test_toc_lines_dropped_exactly(name):
    src = (DATA / f"{name}.txt").read_text()
    toc = [l.rstrip() for l in (DATA / f"{name}.toc").read_text().splitlines() if l.strip()]
    assert toc and all(l in _nonblank(src) for l in toc)
    out = clean(RawDocument("x", src, "plain_text"))
    drop = set(toc) | set(PAGE_FURNITURE.get(name, ()))
    drop.add("Table of Contents")
    expected = [l for l in _nonblank(src) if l not in drop]
    assert _nonblank(out) == expected


def test_form_feed_line_removed():
    out = clean(RawDocument("x", "1. A\n\n   one\n\f\n   two\n", "plain_text"))
    assert "\f" not in out
    assert _nonblank(out) == ["1. A", "   one", "   two"]


def test_unsupported_format():
    with pytest.raises(UnsupportedFormat):
        clean(RawDocument("x", "text", "pdf"))


def test_html_is_reduced_to_text():
    out = clean(RawDocument("x", "<html><body><pre>1. Intro\n\n   Hello &amp; bye.\n</pre></body></html>", "html"))
    assert "Hello & bye." in out
    assert "<pre>" not in out


def test_rfc1939_section5_describes_transaction():
    text = (POP3.dir / POP3.rfc_file).read_text()
    out = clean(RawDocument("1939", text, "plain_text"))
    assert "TRANSACTION" in out
    recs = {r.section_id: r for r in sectionize(out, "1939")}
    assert "5" in recs
    assert "TRANSACTION" in recs["5"].text
    for r in recs.values():
        for p in r.paragraphs:
            assert "[Page" not in p.text


def test_synthetic_paragraph_counts():
    recs = sectionize((DATA / "synthetic.txt").read_text(), "x")
    assert [r.section_id for r in recs] == ["1", "2", "3"]
    assert [len(r.paragraphs) for r in recs] == [2, 1, 4]
    assert [p.index for p in recs[2].paragraphs] == [0, 1, 2, 3]


def test_empty_text():
    assert sectionize("", "x") == []


def test_no_heading():
    with pytest.raises(NoSectionsFound):
        sectionize("just prose\n\nmore prose\n", "x")


def test_appendix_headings():
    assert _heading("Appendix A.  Examples") == ("A", "Examples")
    assert _heading("A.1.  More") == ("A.1", "More")
    assert _heading("   3. indented") is None


def test_store_layout_and_reload(tmp_path):
    recs = sectionize((DATA / "sample_a.txt").read_text(), "9901")
    paths = store_sections(recs, tmp_path)
    assert {p.relative_to(tmp_path).as_posix() for p in paths} == {f"data/RFC/9901/{r.section_id}.json" for r in recs}
    assert load_sections(tmp_path, "9901") == recs


def test_ingest_file_infers_rfc_id():
    recs = ingest_file(POP3.dir / POP3.rfc_file)
    assert {r.rfc_id for r in recs} == {"1939"}


# --- properties -----------------------------------------------------------------

_word = st.text(alphabet="abcdefghij", min_size=1, max_size=6)
_line = st.lists(_word, min_size=1, max_size=5).map(lambda ws: "   " + " ".join(ws))
_para = st.lists(_line, min_size=1, max_size=3)
_section = st.tuples(st.lists(_word, min_size=1, max_size=3), st.lists(_para, min_size=0, max_size=4))
_doc = st.lists(_section, min_size=1, max_size=5)


def _render(doc):
    out = []
    for n, (title, paras) in enumerate(doc, 1):
        out.append(f"{n}.  {' '.join(title)}")
        out.append("")
        for p in paras:
            out.extend(p)
            out.append("")
    return "\n".join(out)


@settings(max_examples=60, deadline=None)
@given(_doc)
def test_sectionize_properties(doc):
    text = _render(doc)
    a, b = sectionize(text, "x"), sectionize(text, "x")
    assert a == b
    assert [len(r.paragraphs) for r in a] == [len(p) for _, p in doc]
    got = [l for r in a for p in r.paragraphs for l in p.text.split("\n")]
    want = [l for l in text.split("\n") if l.strip() and _heading(l) is None]
    assert got == want
    for r in a:
        assert [p.index for p in r.paragraphs] == list(range(len(r.paragraphs)))


@settings(max_examples=30, deadline=None)
@given(_doc)
def test_store_load_roundtrip(tmp_path_factory, doc):
    root = tmp_path_factory.mktemp("rt")
    recs = sectionize(_render(doc), "77")
    store_sections(recs, root)
    assert load_sections(root, "77") == recs
    assert [SectionRecord.from_json(r.to_json()) for r in recs] == recs
