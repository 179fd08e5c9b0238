"""Okapi BM25 over section records, queried with MTP labels."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

from .errors import EmptyCorpus
from .ingest import SectionRecord, section_sort_key

K1 = 1.2
B = 0.75
TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class SectionIndex:
    postings: dict[str, list[tuple[tuple[str, str], int]]]
    doc_lengths: dict[tuple[str, str], int]
    avg_doc_length: float
    N: int

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log((self.N - df + 0.5) / (df + 0.5) + 1.0)

    def score(self, terms, ref) -> float:
        total = 0.0
        dl = self.doc_lengths[ref]
        for t in dict.fromkeys(terms):
            tf = dict(self.postings.get(t, ())).get(ref, 0)
            if tf:
                total += self.idf(t) * tf * (K1 + 1) / (tf + K1 * (1 - B + B * dl / self.avg_doc_length))
        return total


def build_index(records: list[SectionRecord]) -> SectionIndex:
    if not records:
        raise EmptyCorpus("cannot index an empty corpus")
    postings: dict[str, list] = {}
    lengths = {}
    for rec in records:
        toks = tokenize(rec.title + "\n" + rec.text)
        lengths[rec.ref] = len(toks)
        for term, tf in sorted(Counter(toks).items()):
            postings.setdefault(term, []).append((rec.ref, tf))
    avg = sum(lengths.values()) / len(lengths) or 1.0
    return SectionIndex(postings, lengths, avg, len(records))


def mtp_terms(mtp) -> list[str]:
    labels = list(getattr(mtp, "commands", []))
    labels += list(getattr(mtp, "states", []))
    return [t for lab in labels for t in tokenize(lab.replace("_", " "))]


def rank(index: SectionIndex, terms: list[str], k: int) -> list[tuple[tuple[str, str], float]]:
    if k < 1:
        raise ValueError("k must be >= 1")
    terms = list(dict.fromkeys(terms))
    candidates = {ref for t in terms for ref, _ in index.postings.get(t, ())}
    scored = [(ref, index.score(terms, ref)) for ref in candidates]
    scored = [s for s in scored if s[1] > 0]
    scored.sort(key=lambda s: (-s[1], s[0][0], section_sort_key(s[0][1])))
    return scored[:k]


def query(index: SectionIndex, mtp, k: int = 5) -> list[tuple[tuple[str, str], float]]:
    """Top-``k`` sections for the command and state labels on ``mtp``."""
    return rank(index, mtp_terms(mtp), k)
