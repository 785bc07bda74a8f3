"""Document corpus: ingest, validation, and paper-mention linking.

Documents arrive as JSON lines, one object per line, and live in an
in-memory store grouped by source kind. Export re-serializes records in a
canonical field order so ingest-then-export round-trips byte for byte.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ValidationError

SOURCE_KINDS = ("paper", "news", "tweet")
FIELDS = ("computer_science", "medicine", "biology", "psychology", "other")
OUTLET_TYPES = ("general_news", "press_release", "sci_tech_news")

_DOC_KEYS = ("doc_id", "source_kind", "doi", "linked_doi", "field",
             "outlet_type", "text", "user_meta", "published_at")
_META_KEYS = ("is_verified", "is_organization", "followers", "following",
              "account_age_years")


def normalize_doi(raw: str) -> str:
    """Canonical DOI form used for matching: trimmed, lowercased, any
    doi.org URL prefix removed."""
    doi = raw.strip().lower()
    for prefix in ("https://doi.org/", "http://doi.org/", "doi.org/"):
        if doi.startswith(prefix):
            doi = doi[len(prefix):]
            break
    return doi


@dataclass
class UserMeta:
    """Account metadata carried by tweet documents."""
    is_verified: bool
    is_organization: bool
    followers: int
    following: int
    account_age_years: float

    def validate(self) -> None:
        for name in ("followers", "following", "account_age_years"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValidationError(f"user_meta.{name} must be a number")
            if value < 0 or value != value or value in (float("inf"), float("-inf")):
                raise ValidationError(f"user_meta.{name} must be finite and non-negative")
        for name in ("is_verified", "is_organization"):
            if not isinstance(getattr(self, name), bool):
                raise ValidationError(f"user_meta.{name} must be a boolean")


@dataclass
class Document:
    doc_id: str
    source_kind: str
    text: str
    doi: str | None = None
    linked_doi: str | None = None
    field: str | None = None
    outlet_type: str | None = None
    user_meta: UserMeta | None = None
    published_at: str | None = None

    def validate(self) -> None:
        if not self.doc_id or not isinstance(self.doc_id, str):
            raise ValidationError("doc_id must be a non-empty string")
        if self.source_kind not in SOURCE_KINDS:
            raise ValidationError(
                f"doc {self.doc_id}: source_kind {self.source_kind!r} not one of {SOURCE_KINDS}")
        if not self.text or not isinstance(self.text, str):
            raise ValidationError(f"doc {self.doc_id}: text must be non-empty")
        if self.field is not None and self.field not in FIELDS:
            raise ValidationError(f"doc {self.doc_id}: unknown field {self.field!r}")
        if self.source_kind == "paper":
            if not self.doi or not normalize_doi(self.doi):
                raise ValidationError(f"doc {self.doc_id}: paper requires a non-empty doi")
            if self.field is None:
                raise ValidationError(f"doc {self.doc_id}: paper requires a field")
        else:
            if not self.linked_doi or not normalize_doi(self.linked_doi):
                raise ValidationError(
                    f"doc {self.doc_id}: {self.source_kind} requires a linked_doi")
        if self.source_kind == "news":
            if self.outlet_type not in OUTLET_TYPES:
                raise ValidationError(
                    f"doc {self.doc_id}: news outlet_type {self.outlet_type!r} "
                    f"not one of {OUTLET_TYPES}")
        if self.source_kind == "tweet":
            if self.user_meta is None:
                raise ValidationError(f"doc {self.doc_id}: tweet requires user_meta")
            self.user_meta.validate()


def document_from_json(obj: dict, kind_hint: str | None = None) -> Document:
    """Build and validate a Document from a parsed JSON object."""
    if not isinstance(obj, dict):
        raise ValidationError("document record must be a JSON object")
    unknown = set(obj) - set(_DOC_KEYS)
    if unknown:
        raise ValidationError(f"unknown document keys: {sorted(unknown)}")
    meta = None
    if obj.get("user_meta") is not None:
        raw = obj["user_meta"]
        if not isinstance(raw, dict):
            raise ValidationError("user_meta must be an object")
        bad = set(raw) - set(_META_KEYS)
        if bad:
            raise ValidationError(f"unknown user_meta keys: {sorted(bad)}")
        missing = set(_META_KEYS) - set(raw)
        if missing:
            raise ValidationError(f"user_meta missing keys: {sorted(missing)}")
        meta = UserMeta(**{k: raw[k] for k in _META_KEYS})
    doc = Document(
        doc_id=obj.get("doc_id", ""),
        source_kind=obj.get("source_kind") or (kind_hint or ""),
        text=obj.get("text", ""),
        doi=obj.get("doi"),
        linked_doi=obj.get("linked_doi"),
        field=obj.get("field"),
        outlet_type=obj.get("outlet_type"),
        user_meta=meta,
        published_at=obj.get("published_at"),
    )
    doc.validate()
    return doc


def document_to_json(doc: Document) -> str:
    """Canonical one-line JSON: schema field order, absent optionals omitted."""
    out: dict = {"doc_id": doc.doc_id, "source_kind": doc.source_kind}
    if doc.doi is not None:
        out["doi"] = doc.doi
    if doc.linked_doi is not None:
        out["linked_doi"] = doc.linked_doi
    if doc.field is not None:
        out["field"] = doc.field
    if doc.outlet_type is not None:
        out["outlet_type"] = doc.outlet_type
    out["text"] = doc.text
    if doc.user_meta is not None:
        m = doc.user_meta
        out["user_meta"] = {k: getattr(m, k) for k in _META_KEYS}
    if doc.published_at is not None:
        out["published_at"] = doc.published_at
    return json.dumps(out, ensure_ascii=False, separators=(",", ":"))


@dataclass
class IngestReport:
    accepted: int = 0
    rejected: list[tuple[int, str]] = dc_field(default_factory=list)


@dataclass
class LinkEntry:
    paper_doi: str
    mention_doc_id: str


@dataclass
class LinkTable:
    entries: list[LinkEntry]
    unresolved: list[tuple[str, str]]


class DocumentStore:
    """In-memory corpus keyed by doc_id, grouped by source kind."""

    def __init__(self) -> None:
        self._docs: dict[str, Document] = {}
        self._by_kind: dict[str, list[str]] = {k: [] for k in SOURCE_KINDS}

    def __len__(self) -> int:
        return len(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def get(self, doc_id: str) -> Document:
        try:
            return self._docs[doc_id]
        except KeyError:
            raise ValidationError(f"unknown doc_id {doc_id!r}") from None

    def add(self, doc: Document) -> None:
        if doc.doc_id in self._docs:
            raise ValidationError(f"duplicate doc_id {doc.doc_id!r}")
        self._docs[doc.doc_id] = doc
        self._by_kind[doc.source_kind].append(doc.doc_id)

    def by_kind(self, kind: str) -> list[Document]:
        if kind not in SOURCE_KINDS:
            raise ValidationError(f"unknown source kind {kind!r}")
        return [self._docs[i] for i in self._by_kind[kind]]

    def all_documents(self) -> Iterator[Document]:
        for doc_id in self._docs:
            yield self._docs[doc_id]

    def papers_by_doi(self) -> dict[str, Document]:
        """Normalized DOI -> paper document. Ambiguous DOIs are fatal."""
        index: dict[str, Document] = {}
        for doc in self.by_kind("paper"):
            key = normalize_doi(doc.doi or "")
            if key in index:
                raise ValidationError(
                    f"papers {index[key].doc_id!r} and {doc.doc_id!r} share DOI {key!r}")
            index[key] = doc
        return index


def ingest_documents(path: str | Path, kind_hint: str | None = None, *,
                     strict: bool = False,
                     store: DocumentStore | None = None) -> tuple[DocumentStore, IngestReport]:
    """Read one JSON-lines file into a store.

    Duplicate doc_ids are fatal regardless of mode. Other malformed lines
    raise under strict mode and are skipped (and reported with their line
    number) otherwise.
    """
    store = store if store is not None else DocumentStore()
    report = IngestReport()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc = document_from_json(obj, kind_hint)
            except (json.JSONDecodeError, ValidationError, TypeError) as exc:
                if strict:
                    raise ValidationError(f"{path}:{line_no}: {exc}") from exc
                report.rejected.append((line_no, str(exc)))
                continue
            store.add(doc)
            report.accepted += 1
    return store, report


def load_corpus_dir(corpus_dir: str | Path, *, strict: bool = False) -> tuple[DocumentStore, IngestReport]:
    """Ingest papers.jsonl, news.jsonl, and tweets.jsonl from a directory."""
    corpus_dir = Path(corpus_dir)
    store = DocumentStore()
    total = IngestReport()
    for name, hint in (("papers.jsonl", "paper"), ("news.jsonl", "news"),
                       ("tweets.jsonl", "tweet")):
        file = corpus_dir / name
        if not file.exists():
            continue
        _, rep = ingest_documents(file, hint, strict=strict, store=store)
        total.accepted += rep.accepted
        total.rejected.extend(rep.rejected)
    if total.accepted == 0:
        raise ValidationError(f"no documents found under {corpus_dir}")
    return store, total


def export_documents(docs: Iterable[Document], path: str | Path) -> int:
    """Write canonical JSON lines; returns the number written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(document_to_json(doc))
            fh.write("\n")
            count += 1
    return count


def link_mentions(store: DocumentStore) -> LinkTable:
    """Resolve each news/tweet linked_doi against the paper index.

    Entries come back sorted by (paper_doi, mention_doc_id); mentions whose
    DOI matches no paper land in ``unresolved`` instead.
    """
    papers = store.papers_by_doi()
    entries: list[LinkEntry] = []
    unresolved: list[tuple[str, str]] = []
    for kind in ("news", "tweet"):
        for doc in store.by_kind(kind):
            key = normalize_doi(doc.linked_doi or "")
            if key in papers:
                entries.append(LinkEntry(paper_doi=key, mention_doc_id=doc.doc_id))
            else:
                unresolved.append((doc.doc_id, doc.linked_doi or ""))
    entries.sort(key=lambda e: (e.paper_doi, e.mention_doc_id))
    unresolved.sort()
    return LinkTable(entries=entries, unresolved=unresolved)
