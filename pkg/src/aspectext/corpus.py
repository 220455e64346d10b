"""Data model, canonical JSON format, validation, statistics, and annotator agreement."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)

Tokenizer = Callable[[str], Iterable[tuple[str, int, int]]]


class AspectType(Enum):
    """The four aspect categories. Definition order is the decoding tie-break order."""

    TASK = "Task"
    CONTRIBUTION = "Contribution"
    METHOD = "Method"
    CONCLUSION = "Conclusion"

    @property
    def tag(self) -> str:
        """Short form used in inline-tagged output (<Task>, <Contrib>, <Method>, <Conc>)."""
        return _TAGS[self]

    @property
    def index(self) -> int:
        return _INDEX[self]

    @classmethod
    def parse(cls, value: str) -> "AspectType":
        key = value.strip().lower()
        if key in _ALIASES:
            return _ALIASES[key]
        raise ValueError(f"unknown aspect type: {value!r}")


ASPECT_TYPES: tuple[AspectType, ...] = tuple(AspectType)
_TAGS = {
    AspectType.TASK: "Task",
    AspectType.CONTRIBUTION: "Contrib",
    AspectType.METHOD: "Method",
    AspectType.CONCLUSION: "Conc",
}
_INDEX = {a: i for i, a in enumerate(ASPECT_TYPES)}
_ALIASES = {"task": AspectType.TASK,
            "contribution": AspectType.CONTRIBUTION,
            "contrib": AspectType.CONTRIBUTION,
            "method": AspectType.METHOD,
            "conclusion": AspectType.CONCLUSION,
            "conc": AspectType.CONCLUSION}


@dataclass(frozen=True, order=True)
class AspectSpan:
    """A typed character interval, code-point offsets, end exclusive."""

    start: int
    end: int
    aspect_type: AspectType = field(compare=False)

    def __post_init__(self):
        if not isinstance(self.start, int) or not isinstance(self.end, int):
            raise TypeError("span offsets must be integers")

    @property
    def sort_key(self) -> tuple[int, int, int]:
        return (self.start, -self.end, self.aspect_type.index)

    def overlaps(self, other: "AspectSpan") -> bool:
        return max(self.start, other.start) < min(self.end, other.end)

    def to_json(self) -> dict:
        return {"type": self.aspect_type.value, "start": self.start, "end": self.end}

    @classmethod
    def from_json(cls, obj: dict) -> "AspectSpan":
        return cls(start=int(obj["start"]), end=int(obj["end"]),
                   aspect_type=AspectType.parse(str(obj["type"])))


@dataclass
class Document:
    """One abstract with its gold aspect spans, kept sorted by (start, -end)."""

    id: str
    domain: str
    text: str
    spans: list[AspectSpan] = field(default_factory=list)

    def __post_init__(self):
        self.spans = sorted(self.spans, key=lambda s: s.sort_key)

    def span_text(self, span: AspectSpan) -> str:
        return self.text[span.start:span.end]

    def to_json(self) -> dict:
        return {"id": self.id, "domain": self.domain, "text": self.text,
                "spans": [s.to_json() for s in self.spans]}

    @classmethod
    def from_json(cls, obj: dict) -> "Document":
        return cls(id=str(obj["id"]), domain=str(obj["domain"]), text=str(obj["text"]),
                   spans=[AspectSpan.from_json(s) for s in obj.get("spans", [])])


@dataclass
class Dataset:
    documents: list[Document] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def by_id(self) -> dict[str, Document]:
        return {d.id: d for d in self.documents}

    def domains(self) -> list[str]:
        seen: dict[str, None] = {}
        for d in self.documents:
            seen.setdefault(d.domain)
        return list(seen)

    def subset(self, ids: Iterable[str]) -> "Dataset":
        wanted = set(ids)
        return Dataset([d for d in self.documents if d.id in wanted], dict(self.metadata))


class CorpusError(Exception):
    pass


class DatasetParseError(CorpusError):
    pass


class DatasetValidationError(CorpusError):
    def __init__(self, problems: list[tuple[str, "Violation"]]):
        self.problems = problems
        lines = [f"{doc_id}: {v.rule}: {v.message}" for doc_id, v in problems]
        super().__init__("dataset validation failed:\n" + "\n".join(lines))


@dataclass(frozen=True)
class Violation:
    rule: str
    span_indices: tuple[int, ...]
    message: str


def validate_document(doc: Document) -> list[Violation]:
    """Check offset bounds, same-type overlap, and nesting depth; empty list means valid."""
    violations: list[Violation] = []
    n = len(doc.text)
    in_bounds = []
    for i, s in enumerate(doc.spans):
        if not (0 <= s.start < s.end <= n):
            violations.append(Violation(
                "offset-bounds", (i,),
                f"span {i} ({s.start},{s.end},{s.aspect_type.value}) outside 0..{n}"))
        else:
            in_bounds.append(i)

    for a in range(len(in_bounds)):
        for b in range(a + 1, len(in_bounds)):
            i, j = in_bounds[a], in_bounds[b]
            si, sj = doc.spans[i], doc.spans[j]
            if si.aspect_type is sj.aspect_type and si.overlaps(sj):
                violations.append(Violation(
                    "same-type-overlap", (i, j),
                    f"{si.aspect_type.value} spans {i} ({si.start},{si.end}) "
                    f"and {j} ({sj.start},{sj.end}) overlap"))

    # Depth check over elementary intervals between span boundaries.
    bounds = sorted({b for i in in_bounds for b in (doc.spans[i].start, doc.spans[i].end)})
    deep: list[tuple[int, int, tuple[int, ...]]] = []
    for lo, hi in zip(bounds, bounds[1:]):
        active = tuple(i for i in in_bounds
                       if doc.spans[i].start <= lo and doc.spans[i].end >= hi)
        if len(active) > 2:
            if deep and deep[-1][1] == lo and deep[-1][2] == active:
                deep[-1] = (deep[-1][0], hi, active)
            else:
                deep.append((lo, hi, active))
    for lo, hi, active in deep:
        violations.append(Violation(
            "nesting-depth", active,
            f"chars {lo}-{hi} covered by {len(active)} spans (max 2)"))
    return violations


def same_type_adjacency_warnings(doc: Document) -> list[Violation]:
    """Zero-gap same-type spans; legal (model output may produce them) but suspicious in gold."""
    warnings = []
    for i in range(len(doc.spans)):
        for j in range(len(doc.spans)):
            if i == j:
                continue
            si, sj = doc.spans[i], doc.spans[j]
            if si.aspect_type is sj.aspect_type and si.end == sj.start:
                warnings.append(Violation(
                    "same-type-adjacency", (i, j),
                    f"{si.aspect_type.value} spans {i} and {j} touch at char {si.end}"))
    return warnings


def validate_dataset(ds: Dataset) -> list[tuple[str, Violation]]:
    problems: list[tuple[str, Violation]] = []
    seen: dict[str, int] = {}
    for d in ds.documents:
        if d.id in seen:
            problems.append((d.id, Violation("duplicate-id", (), f"document id {d.id!r} reused")))
        seen[d.id] = 1
        for v in validate_document(d):
            problems.append((d.id, v))
        for w in same_type_adjacency_warnings(d):
            logger.warning("document %s: %s: %s", d.id, w.rule, w.message)
    return problems


# ---------------------------------------------------------------------------
# Canonical JSON format: a list of {id, domain, text, spans:[{type,start,end}]}.
# When metadata is present the file is {"metadata": {...}, "documents": [...]}.

def save_dataset(ds: Dataset, path: str | Path) -> None:
    docs = [d.to_json() for d in ds.documents]
    payload = docs if not ds.metadata else {"metadata": ds.metadata, "documents": docs}
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8")


def load_dataset(path: str | Path, format: str = "canonical-json") -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DatasetParseError(f"dataset path does not exist: {path}")
    if format == "canonical-json":
        ds = _load_canonical(path)
    elif format == "published-repo":
        ds = convert_published_repo(path)
    else:
        raise ValueError(f"unknown dataset format: {format!r}")
    problems = validate_dataset(ds)
    if problems:
        raise DatasetValidationError(problems)
    return ds


def _load_canonical(path: Path) -> Dataset:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetParseError(f"cannot parse {path}: {e}") from e
    if isinstance(payload, dict):
        metadata = payload.get("metadata", {}) or {}
        docs = payload.get("documents", [])
    elif isinstance(payload, list):
        metadata, docs = {}, payload
    else:
        raise DatasetParseError(f"{path}: expected a JSON list or object")
    try:
        documents = [Document.from_json(obj) for obj in docs]
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetParseError(f"{path}: malformed document record: {e}") from e
    return Dataset(documents, metadata)


# ---------------------------------------------------------------------------
# Converter for the published repository layout. The repository itself was not
# reachable from the build environment, so this accepts the two common layouts
# for span-annotated corpora: BRAT standoff (.txt/.ann pairs, optionally inside
# per-domain subdirectories) and JSON/JSONL lists of document records with the
# usual key aliases.

_SPAN_KEYS = ("spans", "entities", "aspects", "annotations")
_TYPE_KEYS = ("type", "label", "aspect", "tag")
_START_KEYS = ("start", "begin", "start_offset", "char_start")
_END_KEYS = ("end", "stop", "end_offset", "char_end")


def convert_published_repo(path: str | Path) -> Dataset:
    path = Path(path)
    if path.is_dir():
        ann_files = sorted(path.rglob("*.ann"))
        if ann_files:
            return _convert_brat(path, ann_files)
        json_files = sorted(list(path.rglob("*.json")) + list(path.rglob("*.jsonl")))
        if not json_files:
            raise DatasetParseError(f"{path}: no .ann or .json files found to convert")
        docs: list[Document] = []
        for f in json_files:
            docs.extend(_read_json_docs(f))
        return Dataset(docs, {"source": str(path)})
    return Dataset(list(_read_json_docs(path)), {"source": str(path)})


def _convert_brat(root: Path, ann_files: list[Path]) -> Dataset:
    docs = []
    for ann in ann_files:
        txt = ann.with_suffix(".txt")
        if not txt.exists():
            raise DatasetParseError(f"{ann}: no matching .txt file")
        text = txt.read_text(encoding="utf-8")
        domain = ann.parent.name if ann.parent != root else "unknown"
        spans = []
        for line in ann.read_text(encoding="utf-8").splitlines():
            if not line.startswith("T"):
                continue
            try:
                _, middle, _surface = line.split("\t", 2)
            except ValueError as e:
                raise DatasetParseError(f"{ann}: malformed standoff line: {line!r}") from e
            label, offsets = middle.split(" ", 1)
            # Discontinuous annotations ("s1 e1;s2 e2") are folded to their envelope.
            numbers = [int(x) for x in re.findall(r"\d+", offsets)]
            spans.append(AspectSpan(min(numbers), max(numbers), AspectType.parse(label)))
        docs.append(Document(id=ann.stem, domain=domain, text=text, spans=spans))
    return Dataset(docs, {"source": str(root), "layout": "brat"})


def _read_json_docs(path: Path) -> Iterator[Document]:
    raw = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        records = [json.loads(line) for line in raw.splitlines() if line.strip()]
    else:
        payload = json.loads(raw)
        if isinstance(payload, dict):
            payload = payload.get("documents", payload.get("data", []))
        records = payload
    if not isinstance(records, list):
        raise DatasetParseError(f"{path}: expected a list of document records")
    for k, obj in enumerate(records):
        yield _convert_record(obj, default_id=f"{path.stem}-{k}")


def _pick(obj: dict, keys: Sequence[str]):
    for key in keys:
        if key in obj:
            return obj[key]
    return None


def _convert_record(obj: dict, default_id: str) -> Document:
    text = obj.get("text") or obj.get("abstract")
    if text is None:
        raise DatasetParseError(f"record {default_id}: no text field")
    raw_spans = _pick(obj, _SPAN_KEYS) or []
    spans = []
    for s in raw_spans:
        if isinstance(s, (list, tuple)) and len(s) >= 3:
            label, start, end = s[0], s[1], s[2]
            if isinstance(start, str):  # (start, end, label) triples
                label, start, end = s[2], s[0], s[1]
        else:
            label = _pick(s, _TYPE_KEYS)
            start = _pick(s, _START_KEYS)
            end = _pick(s, _END_KEYS)
        if label is None or start is None or end is None:
            raise DatasetParseError(f"record {default_id}: malformed span {s!r}")
        spans.append(AspectSpan(int(start), int(end), AspectType.parse(str(label))))
    return Document(
        id=str(obj.get("id") or obj.get("doc_id") or obj.get("name") or default_id),
        domain=str(obj.get("domain") or obj.get("topic") or "unknown"),
        text=str(text), spans=spans)


# ---------------------------------------------------------------------------
# Corpus statistics (document counts, token lengths, aspect counts).

@dataclass
class DomainStats:
    documents: int
    mean_tokens: float
    aspects: int
    per_type: dict[AspectType, int]


@dataclass
class CorpusStats:
    domains: dict[str, DomainStats]
    total_documents: int
    total_aspects: int
    mean_aspects_per_document: float
    mean_aspect_tokens: dict[AspectType, float]
    per_type_totals: dict[AspectType, int]


def corpus_stats(ds: Dataset, tokenizer: Tokenizer) -> CorpusStats:
    problems = validate_dataset(ds)
    if problems:
        raise DatasetValidationError(problems)
    domains: dict[str, DomainStats] = {}
    token_sums: dict[str, int] = {}
    aspect_token_sum = {a: 0 for a in ASPECT_TYPES}
    per_type_totals = {a: 0 for a in ASPECT_TYPES}
    for doc in ds.documents:
        tokens = list(tokenizer(doc.text))
        st = domains.get(doc.domain)
        if st is None:
            st = domains[doc.domain] = DomainStats(0, 0.0, 0, {a: 0 for a in ASPECT_TYPES})
            token_sums[doc.domain] = 0
        st.documents += 1
        st.aspects += len(doc.spans)
        token_sums[doc.domain] += len(tokens)
        for span in doc.spans:
            st.per_type[span.aspect_type] += 1
            per_type_totals[span.aspect_type] += 1
            aspect_token_sum[span.aspect_type] += sum(
                1 for _, ts, te in tokens if ts < span.end and te > span.start)
    for name, st in domains.items():
        st.mean_tokens = token_sums[name] / st.documents
    total_aspects = sum(st.aspects for st in domains.values())
    return CorpusStats(
        domains=domains,
        total_documents=len(ds.documents),
        total_aspects=total_aspects,
        mean_aspects_per_document=(total_aspects / len(ds.documents)) if ds.documents else 0.0,
        mean_aspect_tokens={
            a: (aspect_token_sum[a] / per_type_totals[a]) if per_type_totals[a] else 0.0
            for a in ASPECT_TYPES},
        per_type_totals=per_type_totals)


def stats_to_json(stats: CorpusStats) -> dict:
    return {
        "total_documents": stats.total_documents,
        "total_aspects": stats.total_aspects,
        "mean_aspects_per_document": stats.mean_aspects_per_document,
        "mean_aspect_tokens": {a.value: v for a, v in stats.mean_aspect_tokens.items()},
        "per_type_totals": {a.value: v for a, v in stats.per_type_totals.items()},
        "domains": {
            name: {"documents": st.documents,
                   "mean_tokens": st.mean_tokens,
                   "aspects": st.aspects,
                   "per_type": {a.value: c for a, c in st.per_type.items()}}
            for name, st in stats.domains.items()},
    }


def format_stats_table(stats: CorpusStats) -> str:
    header = f"{'Domain':<20}{'Docs':>6}{'Mean tokens':>13}{'Aspects':>9}"
    lines = [header, "-" * len(header)]
    for name in sorted(stats.domains, key=lambda n: stats.domains[n].mean_tokens):
        st = stats.domains[name]
        lines.append(f"{name:<20}{st.documents:>6}{st.mean_tokens:>13.1f}{st.aspects:>9}")
    lines.append("-" * len(header))
    lines.append(f"{'Total':<20}{stats.total_documents:>6}{'':>13}{stats.total_aspects:>9}")
    lines.append("")
    lines.append(f"{'Aspect':<20}{'Count':>6}{'Mean tokens':>13}")
    for a in ASPECT_TYPES:
        lines.append(f"{a.value:<20}{stats.per_type_totals[a]:>6}"
                     f"{stats.mean_aspect_tokens[a]:>13.1f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Inter-annotator agreement: strict span F1, per-aspect counts pooled over
# documents; 2a / (2a + b + c) with a = identical spans, b/c = unique to one side.

@dataclass
class AgreementReport:
    per_type: dict[AspectType, float]
    macro: float
    counts: dict[AspectType, tuple[int, int, int]]

    def to_json(self) -> dict:
        return {"per_type": {a.value: f for a, f in self.per_type.items()},
                "macro": self.macro,
                "counts": {a.value: list(c) for a, c in self.counts.items()}}


def agreement_f1(ann_a: Dataset, ann_b: Dataset) -> AgreementReport:
    docs_a, docs_b = ann_a.by_id(), ann_b.by_id()
    if set(docs_a) != set(docs_b):
        missing = set(docs_a) ^ set(docs_b)
        raise CorpusError(f"annotations cover different documents: {sorted(missing)[:5]}")
    for doc_id, da in docs_a.items():
        if da.text != docs_b[doc_id].text:
            raise CorpusError(f"document {doc_id!r} has different texts in the two annotations")

    per_type: dict[AspectType, float] = {}
    counts: dict[AspectType, tuple[int, int, int]] = {}
    for aspect in ASPECT_TYPES:
        set_a = {(doc_id, s.start, s.end)
                 for doc_id, d in docs_a.items() for s in d.spans if s.aspect_type is aspect}
        set_b = {(doc_id, s.start, s.end)
                 for doc_id, d in docs_b.items() for s in d.spans if s.aspect_type is aspect}
        a = len(set_a & set_b)
        b = len(set_a - set_b)
        c = len(set_b - set_a)
        counts[aspect] = (a, b, c)
        # Vacuous agreement on an absent aspect type counts as perfect.
        per_type[aspect] = 2 * a / (2 * a + b + c) if (a + b + c) else 1.0
    macro = sum(per_type.values()) / len(ASPECT_TYPES)
    return AgreementReport(per_type=per_type, macro=macro, counts=counts)
