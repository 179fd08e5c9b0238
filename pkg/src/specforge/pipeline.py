"""Stage orchestration over the on-disk artifact layout.

    <root>/data/RFC/<rfc>/<section>.json
    <root>/output/flows/<rfc>/{extraction,graph,mtps,skeleton}.json
    <root>/output/grammars/<rfc>/round_<n>.grammar
    <root>/output/runs/<run_id>/{trace_<n>,metrics,fix_round_<n>}.json, rounds.csv, events.jsonl

Each stage reads only what earlier stages wrote, so stages can be rerun
one at a time from the command line.
"""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import re
from pathlib import Path
from typing import Iterator, Optional

from .config import RunConfig
from .errors import ConfigError, MissingArtifact, SpecforgeError
from .extract import classify_section, extract_fragment, propose_micrograph
from .graph import Micrograph, Multigraph, accept_micrograph, compute_mtps, export_artifacts, load_aliases, load_mtps, merge
from .harness.classify import label_failure_cause
from .harness.metrics import compute_metrics
from .harness.mockpop3 import MockConfig, MockPop3Server
from .harness.session import SutCapabilities, SutConfig, Trace, run_session
from .ingest import Paragraph, SectionRecord, ingest_file, load_sections, section_dir, store_sections
from .iogrammar.analysis import GrammarElements, MandatedForm, grammar_elements
from .iogrammar.model import IOGrammar
from .iogrammar.text import parse_grammar, serialize_grammar
from .llm import CachedProvider, HttpProvider, LlmProvider, LoggingProvider, RateLimiter, RecordingProvider, ReplayProvider
from .logs import EventLog
from .repair.loop import repair_loop
from .retrieve import build_index, query
from .synth import build_skeleton, naive_synthesize, synthesize

log = logging.getLogger(__name__)

STAGES = ("ingest", "extract", "graph", "synthesize", "test", "repair", "report")
RUN_ORDER = ("ingest", "extract", "graph", "synthesize", "repair", "test", "report")
_ROUND_RE = re.compile(r"^round_(\d+)\.grammar$")
_TRACE_RE = re.compile(r"^trace_(\d+)\.json$")


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def _read_json(path: Path, what: str):
    if not path.is_file():
        raise MissingArtifact(f"{what} not found at {path}; run the earlier stage first")
    return json.loads(path.read_text(encoding="utf-8"))


class Pipeline:
    def __init__(self, cfg: RunConfig, provider: Optional[LlmProvider] = None, naive: bool = False):
        self.cfg = cfg
        self.root = cfg.root
        self.rfc = cfg.primary_rfc
        self.run_id = cfg.effective_run_id
        self.run_dir = self.root / "output" / "runs" / self.run_id
        self.flow_dir = self.root / "output" / "flows" / self.rfc
        self.grammar_dir = self.root / "output" / "grammars" / self.rfc
        self.events = EventLog(self.run_dir / "events.jsonl", self.run_id)
        self._provider = provider
        self.naive = naive
        self.aliases = self._aliases()

    # --- shared resources -------------------------------------------------------

    def _aliases(self) -> dict:
        p = self.cfg.resolve(self.cfg.reference.aliases)
        if p is None:
            return load_aliases(self.cfg.protocol)
        return json.loads(p.read_text(encoding="utf-8"))

    @property
    def provider(self) -> LlmProvider:
        if self._provider is None:
            self._provider = self._make_provider()
        return self._provider

    def _make_provider(self) -> LlmProvider:
        p = self.cfg.provider
        fixtures = self.cfg.resolve(p.fixture_dir)
        if p.mode == "replay":
            if not fixtures.is_dir():
                raise ConfigError(f"replay fixture directory does not exist: {fixtures}")
            inner: LlmProvider = ReplayProvider(fixtures)
        else:
            live: LlmProvider = HttpProvider(p.base_url, p.model, limiter=RateLimiter(p.rate))
            cache = self.cfg.resolve(p.cache_dir)
            if cache is not None:
                live = CachedProvider(live, cache)
            inner = live if p.mode == "live" else RecordingProvider(live, fixtures)
        return LoggingProvider(inner, self.events.emit)

    @property
    def model(self) -> str:
        return self.cfg.provider.model

    def sections(self, rfc_id: str) -> list[SectionRecord]:
        if not section_dir(self.root, rfc_id).is_dir():
            raise MissingArtifact(f"no ingested sections for RFC {rfc_id} under {section_dir(self.root, rfc_id)}")
        return load_sections(self.root, rfc_id)

    def corpus(self) -> list[SectionRecord]:
        """Sections as the later stages see them: summarized sections keep only their summary."""
        out = []
        for r in self.cfg.rfc:
            records = {s.section_id: s for s in self.sections(r.id)}
            extraction = _read_json(self.root / "output" / "flows" / r.id / "extraction.json", "extraction results")
            for entry in extraction:
                rec = records[entry["section_id"]]
                cls = entry["classification"]
                if cls["action"] == "summarize":
                    rec = SectionRecord(rec.rfc_id, rec.section_id, rec.title, (Paragraph(0, cls["summary"]),))
                out.append(rec)
        return out

    def mtps(self):
        p = self.flow_dir / "mtps.json"
        if not p.is_file():
            raise MissingArtifact(f"MTPs not found at {p}; run the graph stage first")
        return load_mtps(p)

    def rounds(self) -> list[int]:
        if not self.grammar_dir.is_dir():
            return []
        return sorted(int(m.group(1)) for f in self.grammar_dir.iterdir() if (m := _ROUND_RE.match(f.name)))

    def grammar(self, round_no: Optional[int] = None) -> IOGrammar:
        rounds = self.rounds()
        if not rounds:
            raise MissingArtifact(f"no grammar under {self.grammar_dir}; run the synthesize stage first")
        n = rounds[-1] if round_no is None else round_no
        return parse_grammar((self.grammar_dir / f"round_{n}.grammar").read_text(encoding="utf-8"))

    def mandated_forms(self) -> list[MandatedForm]:
        p = self.cfg.resolve(self.cfg.reference.mandated_forms)
        if p is None:
            return []
        return [MandatedForm.from_json(d) for d in json.loads(p.read_text(encoding="utf-8"))]

    def golden_elements(self) -> Optional[GrammarElements]:
        ref = self.cfg.reference
        if ref.golden_elements:
            return GrammarElements.from_dict(json.loads(self.cfg.resolve(ref.golden_elements).read_text(encoding="utf-8")))
        if ref.golden_grammar:
            return grammar_elements(parse_grammar(self.cfg.resolve(ref.golden_grammar).read_text(encoding="utf-8")))
        return None

    @contextlib.contextmanager
    def sut(self) -> Iterator[SutConfig]:
        s = self.cfg.sut
        caps = SutCapabilities(tuple(s.capabilities.tls_required), tuple(s.capabilities.unrecognized_markers),
                               tuple(s.capabilities.data_state_markers))
        if not s.mock:
            yield SutConfig(s.host, s.port, s.connect_timeout_ms, s.read_timeout_ms, s.greeting_expected, caps)
            return
        if self.cfg.protocol.lower() != "pop3":
            raise ConfigError(f"the bundled mock server speaks POP3, not {self.cfg.protocol}")
        with MockPop3Server(MockConfig(host=s.host, port=s.port)) as srv:
            yield SutConfig(s.host, srv.port, s.connect_timeout_ms, s.read_timeout_ms, s.greeting_expected, caps)

    def seeds(self) -> list[int]:
        return [self.cfg.seed + i for i in range(self.cfg.budgets.derivations_per_mtp)]

    # --- stages -------------------------------------------------------------------

    def ingest(self) -> list[Path]:
        paths = []
        for r in self.cfg.rfc:
            src = self.cfg.resolve(r.path)
            if not src.is_file():
                raise MissingArtifact(f"RFC input {r.id} not found at {src}")
            records = ingest_file(src, r.id)
            d = section_dir(self.root, r.id)
            if d.is_dir():
                for old in d.glob("*.json"):
                    old.unlink()
            paths += store_sections(records, self.root)
            self.events.emit("ingest", rfc_id=r.id, sections=len(records))
        return paths

    def extract(self) -> list[Path]:
        out = []
        for r in self.cfg.rfc:
            entries = []
            for rec in self.sections(r.id):
                if not rec.paragraphs:
                    continue
                cls = classify_section(rec, self.provider, self.model)
                entry = {"section_id": rec.section_id, "classification": cls.model_dump()}
                if cls.action == "extract":
                    frag = extract_fragment(rec, self.provider, self.model)
                    entry["fragment"] = frag.model_dump()
                    if not frag.is_empty:
                        proposal = propose_micrograph(rec, frag, self.provider, cls.normative, self.model)
                        entry["micrograph"] = accept_micrograph(frag, proposal, self.aliases).to_json()
                entries.append(entry)
                self.events.emit("classified", rfc_id=r.id, section_id=rec.section_id, label=cls.label, action=cls.action)
            out.append(_write_json(self.root / "output" / "flows" / r.id / "extraction.json", entries))
        return out

    def graph(self) -> list[Path]:
        micrographs = []
        for r in self.cfg.rfc:
            for entry in _read_json(self.root / "output" / "flows" / r.id / "extraction.json", "extraction results"):
                if "micrograph" in entry:
                    micrographs.append(Micrograph.from_json(entry["micrograph"]))
        g = merge(micrographs, self.aliases)
        gs = self.cfg.graph
        targets = gs.targets or g.commands
        mtps = compute_mtps(g, gs.initial_states, targets, gs.terminal_states or None, strict=False)
        missing = sorted(set(targets) - {m.target for m in mtps})
        self.events.emit("graph", states=g.states, commands=g.commands, mtps=len(mtps), unreachable=missing)
        return export_artifacts(g, mtps, self.root, self.rfc)

    def multigraph(self) -> Multigraph:
        p = self.flow_dir / "graph.json"
        if not p.is_file():
            raise MissingArtifact(f"multigraph not found at {p}")
        return Multigraph.load(p)

    def synthesize(self) -> Path:
        if self.naive:
            g = naive_synthesize(self.cfg.protocol, self.provider, self.model)
        else:
            mtps = self.mtps()
            corpus = self.corpus()
            index = build_index(corpus)
            by_ref = {r.ref: r for r in corpus}
            picked: dict = {}
            for m in mtps:
                for ref, _score in query(index, m, self.cfg.budgets.retrieval_k):
                    picked.setdefault(ref, by_ref[ref])
            skeleton = build_skeleton(mtps)
            _write_json(self.flow_dir / "skeleton.json", skeleton.to_json())
            g = synthesize(skeleton, list(picked.values()), self.provider, self.model)
            self.events.emit("retrieved", sections=[f"{a}/{b}" for a, b in picked])
        for n in self.rounds():
            (self.grammar_dir / f"round_{n}.grammar").unlink()
        p = self.grammar_dir / "round_0.grammar"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(serialize_grammar(g), encoding="utf-8")
        self.events.emit("synthesized", grammar=str(p), rules=len(g.rules))
        return p

    def test(self) -> Path:
        g = self.grammar()
        mtps = self.mtps()
        if self.run_dir.is_dir():
            for f in self.run_dir.iterdir():
                if _TRACE_RE.match(f.name):
                    f.unlink()
        traces: list[Trace] = []
        with self.sut() as sut:
            for m in mtps:
                for s in self.seeds():
                    t = run_session(g, m, sut, s)
                    if not t.accepted:
                        t.failure_cause = label_failure_cause(t, sut.capabilities)
                    n = len(traces)
                    _write_json(self.run_dir / f"trace_{n}.json", t.to_json())
                    self.events.emit("trace", n=n, target=m.target, seed=s, accepted=t.accepted,
                                     verdicts=[e.verdict for e in t.exchanges], failure_cause=t.failure_cause)
                    traces.append(t)
        golden = self.golden_elements()
        report = compute_metrics(traces, grammar_elements(g) if golden else None, golden, self.cfg.reference.canonical_routes)
        p = _write_json(self.run_dir / "metrics.json", report.to_json())
        self.events.emit("metrics", **report.to_json())
        return p

    def repair(self):
        g0 = self.grammar(0)
        for n in self.rounds():
            if n > 0:
                (self.grammar_dir / f"round_{n}.grammar").unlink()
        if self.run_dir.is_dir():
            for f in self.run_dir.glob("fix_round_*.json"):
                f.unlink()
        with self.sut() as sut:
            result = repair_loop(
                g0, self.mtps(), sut, self.provider, self.cfg.budgets.repair_rounds,
                mandated_forms=self.mandated_forms(), records=self.corpus(), seeds=self.seeds(),
                model_id=self.model, per_mtp_cap=self.cfg.budgets.per_mtp_cap,
                run_dir=self.run_dir, grammar_dir=self.grammar_dir, emit=self.events.emit,
            )
        self.events.emit("repair_done", status=result.status, rounds=len(result.outcomes), outcomes=result.outcomes)
        return result

    def report(self) -> dict:
        metrics = _read_json(self.run_dir / "metrics.json", "metrics")
        rounds = []
        rp = self.run_dir / "rounds.csv"
        if rp.is_file():
            with rp.open(encoding="utf-8") as fh:
                rounds = [{k: int(v) for k, v in row.items()} for row in csv.DictReader(fh)]
        summary = {"run_id": self.run_id, "metrics": metrics, "rounds": rounds, "grammar_rounds": self.rounds()}
        _write_json(self.run_dir / "report.json", summary)
        return summary

    def run_stage(self, name: str):
        if name not in STAGES:
            raise ValueError(name)
        return getattr(self, name)()

    def run(self) -> dict:
        for name in RUN_ORDER:
            self.events.emit("stage", name=name)
            out = self.run_stage(name)
        return out


def format_report(summary: dict) -> str:
    m = summary["metrics"]
    lines = [f"run {summary['run_id']}"]
    for key, label in (("message_acceptance", "MA"), ("trace_acceptance", "TA")):
        r = m[key]
        lines.append(f"  {label}: {r['accepted']}/{r['total']} ({100 * r['ratio']:.1f}%)")
    for key, label in (("rtcma", "RtC-MA"), ("rtcta", "RtC-TA")):
        r = m[key]
        if r.get("quotient") is not None:
            lines.append(f"  {label}: {r['quotient']:.3f}")
    for kind, s in m.get("elements", {}).items():
        lines.append(f"  {kind}: P={s['precision']:.3f} R={s['recall']:.3f}")
    if m.get("failure_cause_histogram"):
        lines.append("  failure causes: " + ", ".join(f"{k}={v}" for k, v in m["failure_cause_histogram"].items()))
    for r in summary["rounds"]:
        lines.append(f"  round {r['round']}: at_risk={r['at_risk']} fixed={r['fixed']} gsyn={r['gsyn']} tmism={r['tmism']} gmiss={r['gmiss']}")
    return "\n".join(lines)


__all__ = ["Pipeline", "STAGES", "RUN_ORDER", "format_report", "SpecforgeError"]
