"""Offline page-embedding index with centroid shortlisting.

The index keeps every page's multi-vector matrix plus one pooled vector per
page (the L2-normalized mean of its rows). Shortlisting ranks pages by the dot
product between the pooled query and these centroids with an exhaustive scan;
exact MaxSim rescoring of the shortlist happens in :mod:`litta.scoring`.

Binary layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"LITTAIDX"
    8       4     u32    format version (currently 1)
    --- payload (covered by the trailing CRC32) ---
    12      4     u32    manifest length in bytes, n
    16      n     UTF-8 JSON manifest
            per page, in index order:
              2     u16  page id length in bytes, s
              s     UTF-8 page id (``corpus#index``)
              4     u32  M (vectors on this page)
              4     u32  d (dimension)
              4*M*d f32  row-major matrix
    --- trailer ---
    -4      4     u32    CRC32 (zlib) of the payload bytes

Page vectors are stored exactly as given; the engine never normalizes them.
"""

from __future__ import annotations

import base64
import binascii
import datetime as _dt
import io
import json
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator

import numpy as np

from .core import PageEmbedding, PageId, QueryTokens, RankedList, parse_page_id

MAGIC = b"LITTAIDX"
FORMAT_VERSION = 1

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


class IndexBuildError(ValueError):
    pass


class IndexLookupError(KeyError):
    pass


class DimensionMismatchError(ValueError):
    pass


class IngestFormatError(ValueError):
    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message if line_number is None else f"line {line_number}: {message}")
        self.line_number = line_number


class IndexFileError(Exception):
    """Base class for problems reading a serialized index."""


class IndexFormatError(IndexFileError):
    pass


class IndexVersionError(IndexFileError):
    def __init__(self, found: int):
        super().__init__(f"unsupported index format version {found} (supported: {FORMAT_VERSION})")
        self.found = found


class IndexTruncatedError(IndexFileError):
    def __init__(self, where: str, page_ordinal: int | None = None):
        super().__init__(f"index file truncated in {where}")
        self.where = where
        self.page_ordinal = page_ordinal


class IndexChecksumError(IndexFileError):
    def __init__(self, stored: int, computed: int):
        super().__init__(f"index checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")
        self.stored = stored
        self.computed = computed


@dataclass(frozen=True)
class IndexManifest:
    format_version: int
    dim: int
    num_pages: int
    corpora: tuple[tuple[str, int], ...]
    created_at: str

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "dim": self.dim,
            "num_pages": self.num_pages,
            "corpora": [{"corpus_id": c, "num_pages": n} for c, n in self.corpora],
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "IndexManifest":
        return cls(
            format_version=int(obj["format_version"]),
            dim=int(obj["dim"]),
            num_pages=int(obj["num_pages"]),
            corpora=tuple((str(c["corpus_id"]), int(c["num_pages"])) for c in obj["corpora"]),
            created_at=str(obj["created_at"]),
        )


def page_centroid(vectors: np.ndarray) -> np.ndarray:
    """L2-normalized mean of the rows, computed in float64. A zero mean stays zero."""
    mean = np.asarray(vectors, dtype=np.float64).mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm > 0:
        mean = mean / norm
    return mean


class EmbeddingIndex:
    """Immutable collection of page embeddings sharing one dimension."""

    def __init__(self, pages: tuple[PageEmbedding, ...], manifest: IndexManifest):
        self.pages = pages
        self.manifest = manifest
        self.dim = manifest.dim
        self._positions = {p.page_id: i for i, p in enumerate(pages)}
        centroids = np.stack([page_centroid(p.vectors) for p in pages]).astype(np.float32)
        centroids.setflags(write=False)
        self.centroids = centroids
        # position of each page in ascending PageId order, used as the tie-break key
        order = sorted(range(len(pages)), key=lambda i: pages[i].page_id)
        id_rank = np.empty(len(pages), dtype=np.int64)
        id_rank[order] = np.arange(len(pages))
        self._id_rank = id_rank

    def __len__(self) -> int:
        return len(self.pages)

    def __contains__(self, page_id: object) -> bool:
        return page_id in self._positions

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingIndex):
            return NotImplemented
        return (
            self.manifest == other.manifest
            and self.pages == other.pages
            and np.array_equal(self.centroids, other.centroids)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def page_ids(self) -> list[PageId]:
        return [p.page_id for p in self.pages]

    @property
    def total_vectors(self) -> int:
        return sum(p.num_vectors for p in self.pages)

    def position(self, page_id: PageId) -> int:
        try:
            return self._positions[page_id]
        except KeyError:
            raise IndexLookupError(f"page {page_id} is not in the index") from None

    def page(self, page_id: PageId) -> PageEmbedding:
        return self.pages[self.position(page_id)]

    def id_rank(self, positions: np.ndarray) -> np.ndarray:
        return self._id_rank[positions]


def _default_timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        moment = _dt.datetime.fromtimestamp(int(epoch), tz=_dt.timezone.utc)
    else:
        moment = _dt.datetime.now(tz=_dt.timezone.utc)
    return moment.replace(microsecond=0).isoformat()


def build_index(pages: Iterable[PageEmbedding], created_at: str | None = None) -> EmbeddingIndex:
    """Materialize an index from a stream of pages, keeping input order.

    ``created_at`` defaults to ``SOURCE_DATE_EPOCH`` when set, else the current
    UTC time; everything else is a pure function of the input.
    """
    collected: list[PageEmbedding] = []
    seen: set[PageId] = set()
    dim: int | None = None
    corpora: dict[str, int] = {}
    for page in pages:
        if dim is None:
            dim = page.dim
        elif page.dim != dim:
            raise DimensionMismatchError(
                f"page {page.page_id} has dimension {page.dim}, expected {dim} (from first page)"
            )
        if page.page_id in seen:
            raise IndexBuildError(f"duplicate page id {page.page_id}")
        seen.add(page.page_id)
        corpora[page.page_id.corpus_id] = corpora.get(page.page_id.corpus_id, 0) + 1
        collected.append(page)
    if not collected:
        raise IndexBuildError("cannot build an index from zero pages")
    manifest = IndexManifest(
        format_version=FORMAT_VERSION,
        dim=dim,
        num_pages=len(collected),
        corpora=tuple(corpora.items()),
        created_at=created_at if created_at is not None else _default_timestamp(),
    )
    return EmbeddingIndex(tuple(collected), manifest)


def pooled_query(query: QueryTokens) -> np.ndarray:
    return page_centroid(query.vectors)


def shortlist(index: EmbeddingIndex, query: QueryTokens, size: int) -> RankedList:
    """Top ``min(size, N)`` pages by centroid cosine, ties broken by page id."""
    if size < 1:
        raise ValueError(f"shortlist size must be >= 1, got {size}")
    if query.dim != index.dim:
        raise DimensionMismatchError(f"query dimension {query.dim} does not match index dimension {index.dim}")
    scores = index.centroids.astype(np.float64) @ pooled_query(query)
    positions = np.arange(len(index))
    order = np.lexsort((index.id_rank(positions), -scores))[: min(size, len(index))]
    entries = tuple((index.pages[i].page_id, float(scores[i])) for i in order)
    return RankedList.for_variant(query.variant_index, entries)


# -- serialization -----------------------------------------------------------


def _encode_payload(index: EmbeddingIndex) -> bytes:
    buf = io.BytesIO()
    manifest = json.dumps(index.manifest.to_json(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(_U32.pack(len(manifest)))
    buf.write(manifest)
    for page in index.pages:
        pid = str(page.page_id).encode("utf-8")
        buf.write(_U16.pack(len(pid)))
        buf.write(pid)
        buf.write(_U32.pack(page.num_vectors))
        buf.write(_U32.pack(page.dim))
        buf.write(np.ascontiguousarray(page.vectors, dtype="<f4").tobytes())
    return buf.getvalue()


def dumps_index(index: EmbeddingIndex) -> bytes:
    payload = _encode_payload(index)
    return MAGIC + _U32.pack(FORMAT_VERSION) + payload + _U32.pack(zlib.crc32(payload))


def save_index(index: EmbeddingIndex, path: str | os.PathLike) -> int:
    """Write ``index`` to ``path`` and return the number of bytes written."""
    data = dumps_index(index)
    Path(path).write_bytes(data)
    return len(data)


class _Reader:
    def __init__(self, data: bytes, start: int):
        self.data = data
        self.pos = start

    def take(self, n: int, where: str, ordinal: int | None = None) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise IndexTruncatedError(where, ordinal)
        chunk = self.data[self.pos : end]
        self.pos = end
        return chunk


def loads_index(data: bytes) -> EmbeddingIndex:
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise IndexFormatError("not an index file: bad magic bytes")
    reader = _Reader(data, len(MAGIC))
    (version,) = _U32.unpack(reader.take(4, "header"))
    if version != FORMAT_VERSION:
        raise IndexVersionError(version)
    payload_start = reader.pos

    def checksum_or(exc: Exception) -> Exception:
        # a structurally odd payload is most likely corruption; prefer the CRC verdict
        if len(data) >= payload_start + 4:
            stored = _U32.unpack(data[-4:])[0]
            computed = zlib.crc32(data[payload_start:-4])
            if stored != computed:
                return IndexChecksumError(stored, computed)
        return exc

    (manifest_len,) = _U32.unpack(reader.take(4, "manifest length"))
    raw_manifest = reader.take(manifest_len, "manifest")
    try:
        manifest = IndexManifest.from_json(json.loads(raw_manifest.decode("utf-8")))
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise checksum_or(IndexFormatError(f"unreadable manifest: {exc}")) from None

    records = []
    for ordinal in range(manifest.num_pages):
        where = f"page record {ordinal}"
        (id_len,) = _U16.unpack(reader.take(2, where, ordinal))
        raw_id = reader.take(id_len, where, ordinal)
        (m,) = _U32.unpack(reader.take(4, where, ordinal))
        (d,) = _U32.unpack(reader.take(4, where, ordinal))
        raw = reader.take(4 * m * d, where, ordinal)
        records.append((ordinal, raw_id, m, d, raw))
    payload_end = reader.pos
    (stored,) = _U32.unpack(reader.take(4, "checksum trailer"))
    if reader.pos != len(data):
        raise checksum_or(IndexFormatError(f"{len(data) - reader.pos} unexpected bytes after checksum"))
    computed = zlib.crc32(data[payload_start:payload_end])
    if stored != computed:
        raise IndexChecksumError(stored, computed)

    pages = []
    for ordinal, raw_id, m, d, raw in records:
        if d != manifest.dim:
            raise IndexFormatError(f"page record {ordinal} has dimension {d}, manifest says {manifest.dim}")
        try:
            page_id = parse_page_id(raw_id.decode("utf-8"))
            vectors = np.frombuffer(raw, dtype="<f4").reshape(m, d)
            pages.append(PageEmbedding(page_id, vectors))
        except ValueError as exc:
            raise IndexFormatError(f"page record {ordinal}: {exc}") from None
    if not pages:
        raise IndexFormatError("index file contains no pages")
    return EmbeddingIndex(tuple(pages), manifest)


def load_index(path: str | os.PathLike) -> EmbeddingIndex:
    return loads_index(Path(path).read_bytes())


# -- text ingestion format ---------------------------------------------------
# one page per line: page_id \t M \t d \t base64(row-major little-endian f32)


def format_ingest_line(page: PageEmbedding) -> str:
    blob = base64.b64encode(np.ascontiguousarray(page.vectors, dtype="<f4").tobytes()).decode("ascii")
    return f"{page.page_id}\t{page.num_vectors}\t{page.dim}\t{blob}"


def write_ingest(pages: Iterable[PageEmbedding], fh: IO[str]) -> None:
    for page in pages:
        fh.write(format_ingest_line(page) + "\n")


def read_ingest(lines: Iterable[str]) -> Iterator[PageEmbedding]:
    """Parse ingestion lines lazily; blank lines are skipped."""
    for line_number, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise IngestFormatError(f"expected 4 tab-separated fields, got {len(fields)}", line_number)
        raw_id, raw_m, raw_d, blob = fields
        try:
            page_id = parse_page_id(raw_id)
            m, d = int(raw_m), int(raw_d)
        except ValueError as exc:
            raise IngestFormatError(str(exc), line_number) from None
        if m < 1 or d < 1:
            raise IngestFormatError(f"M and d must be positive, got M={m} d={d}", line_number)
        try:
            raw = base64.b64decode(blob, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise IngestFormatError(f"bad base64 matrix: {exc}", line_number) from None
        if len(raw) != 4 * m * d:
            raise IngestFormatError(f"matrix has {len(raw)} bytes, expected {4 * m * d} for {m}x{d}", line_number)
        try:
            yield PageEmbedding(page_id, np.frombuffer(raw, dtype="<f4").reshape(m, d))
        except ValueError as exc:
            raise IngestFormatError(str(exc), line_number) from None
