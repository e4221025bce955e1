"""Triple knowledge-graph store: loading, completeness filtering, adjacency.

Entities and relations are interned to dense integer handles. Triples are
held as three parallel ``int32`` arrays and the head adjacency is a CSR
index (``offsets``/``order``) so that ``neighbors`` is a slice.

Snapshot layout (``SPQKG1``, all integers little-endian)::

    magic        6 bytes   b"SPQKG1"
    version      u16       currently 1
    n_entities   u32
    n_relations  u32
    n_triples    u64
    stats        6 x u64   entities_in, entities_out, relations_in,
                           relations_out, triples_in, triples_out
    entities     n_entities records: str id, u32 n_names, n_names x str,
                 str description
    relations    n_relations records: str id, u32 n_names, n_names x str
    triples      n_triples x 3 int32 (head, relation, tail), row-major

where ``str`` is a u32 byte length followed by UTF-8 bytes. The adjacency
index is rebuilt on load.
"""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"SPQKG1"
SNAPSHOT_VERSION = 1


class KGFormatError(ValueError):
    """Malformed input line; carries the file path and 1-based line number."""

    def __init__(self, path: str | Path, lineno: int, message: str) -> None:
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


class KGEmptyError(ValueError):
    pass


class UnknownEntityError(KeyError):
    pass


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass
class FilterStats:
    entities_in: int
    entities_out: int
    relations_in: int
    relations_out: int
    triples_in: int
    triples_out: int

    @staticmethod
    def _pct(n_in: int, n_out: int) -> float:
        return 100.0 * (n_in - n_out) / n_in if n_in else 0.0

    @property
    def entities_removed_pct(self) -> float:
        return self._pct(self.entities_in, self.entities_out)

    @property
    def relations_removed_pct(self) -> float:
        return self._pct(self.relations_in, self.relations_out)

    @property
    def triples_removed_pct(self) -> float:
        return self._pct(self.triples_in, self.triples_out)

    def to_dict(self) -> dict:
        return {
            "entities_in": self.entities_in,
            "entities_out": self.entities_out,
            "relations_in": self.relations_in,
            "relations_out": self.relations_out,
            "triples_in": self.triples_in,
            "triples_out": self.triples_out,
            "entities_removed_pct": self.entities_removed_pct,
            "relations_removed_pct": self.relations_removed_pct,
            "triples_removed_pct": self.triples_removed_pct,
        }


@dataclass
class RawKG:
    """Parsed but unfiltered KG. Triple arrays index into the raw tables."""

    entity_ids: list[str]
    entity_names: list[list[str]]
    descriptions: list[str | None]
    relation_ids: list[str]
    relation_names: list[list[str]]
    heads: np.ndarray
    relations: np.ndarray
    tails: np.ndarray
    warnings: list[str] = field(default_factory=list)
    dangling: int = 0
    duplicates: int = 0

    @property
    def n_triples(self) -> int:
        return int(self.heads.shape[0])

    @classmethod
    def from_records(
        cls,
        entities: dict[str, tuple[Sequence[str], str | None]],
        relations: dict[str, Sequence[str]],
        triples: Iterable[tuple[str, str, str]],
    ) -> "RawKG":
        """Build from in-memory records (``id -> (names, description)``)."""
        entity_ids = list(entities)
        relation_ids = list(relations)
        raw = cls(
            entity_ids=entity_ids,
            entity_names=[list(entities[e][0]) for e in entity_ids],
            descriptions=[entities[e][1] for e in entity_ids],
            relation_ids=relation_ids,
            relation_names=[list(relations[r]) for r in relation_ids],
            heads=np.empty(0, np.int32),
            relations=np.empty(0, np.int32),
            tails=np.empty(0, np.int32),
        )
        raw._set_triples(triples)
        return raw

    def _set_triples(self, triples: Iterable[tuple[str, str, str]], source: str = "<records>") -> None:
        eidx = {e: i for i, e in enumerate(self.entity_ids)}
        ridx = {r: i for i, r in enumerate(self.relation_ids)}
        seen: set[tuple[int, int, int]] = set()
        rows: list[tuple[int, int, int]] = []
        for n, (h, r, t) in enumerate(triples, 1):
            hi, ri, ti = eidx.get(h), ridx.get(r), eidx.get(t)
            if hi is None or ri is None or ti is None:
                self.dangling += 1
                self.warnings.append(f"{source}:{n}: dangling reference in ({h}, {r}, {t})")
                continue
            key = (hi, ri, ti)
            if key in seen:
                self.duplicates += 1
                continue
            seen.add(key)
            rows.append(key)
        arr = np.asarray(rows, dtype=np.int32).reshape(-1, 3)
        self.heads, self.relations, self.tails = (np.ascontiguousarray(arr[:, i]) for i in range(3))


def _read_tsv(path: str | Path, min_fields: int, max_split: int = -1):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t", max_split) if max_split >= 0 else line.split("\t")
            if len(parts) < min_fields or not parts[0]:
                raise KGFormatError(path, lineno, f"expected at least {min_fields} tab-separated fields")
            yield lineno, parts


def _read_names(path: str | Path) -> tuple[list[str], list[list[str]]]:
    ids: list[str] = []
    names: list[list[str]] = []
    seen: set[str] = set()
    for lineno, parts in _read_tsv(path, 1):
        if parts[0] in seen:
            raise KGFormatError(path, lineno, f"duplicate id {parts[0]!r}")
        seen.add(parts[0])
        ids.append(parts[0])
        names.append([p for p in parts[1:] if p])
    return ids, names


def load_raw(
    triples_path: str | Path,
    entities_path: str | Path,
    relations_path: str | Path,
    descriptions_path: str | Path | None = None,
) -> RawKG:
    """Parse the TSV inputs. Triples naming unknown ids are dropped with a warning."""
    entity_ids, entity_names = _read_names(entities_path)
    relation_ids, relation_names = _read_names(relations_path)
    descriptions: list[str | None] = [None] * len(entity_ids)
    warnings: list[str] = []
    if descriptions_path is not None:
        eidx = {e: i for i, e in enumerate(entity_ids)}
        for lineno, parts in _read_tsv(descriptions_path, 2, max_split=1):
            i = eidx.get(parts[0])
            if i is None:
                warnings.append(f"{descriptions_path}:{lineno}: description for unknown entity {parts[0]!r}")
                continue
            text = parts[1].strip()
            descriptions[i] = text or None

    def triple_rows():
        for lineno, parts in _read_tsv(triples_path, 3):
            if len(parts) != 3:
                raise KGFormatError(triples_path, lineno, "expected exactly 3 tab-separated fields")
            yield parts[0], parts[1], parts[2]

    raw = RawKG(
        entity_ids=entity_ids,
        entity_names=entity_names,
        descriptions=descriptions,
        relation_ids=relation_ids,
        relation_names=relation_names,
        heads=np.empty(0, np.int32),
        relations=np.empty(0, np.int32),
        tails=np.empty(0, np.int32),
        warnings=warnings,
    )
    raw._set_triples(triple_rows(), source=str(triples_path))
    if raw.dangling:
        log.warning("dropped %d triples with dangling references", raw.dangling)
    return raw


_WS = re.compile(r"\s+")


def _name_key(text: str) -> str:
    return _WS.sub(" ", text).strip().casefold()


class KGStore:
    """Immutable KG with head-entity adjacency. Build via ``filter_complete``."""

    def __init__(
        self,
        entity_ids: list[str],
        entity_names: list[list[str]],
        descriptions: list[str | None],
        relation_ids: list[str],
        relation_names: list[list[str]],
        heads: np.ndarray,
        relations: np.ndarray,
        tails: np.ndarray,
        stats: FilterStats | None = None,
    ) -> None:
        self.entity_ids = entity_ids
        self.entity_names = entity_names
        self.descriptions = descriptions
        self.relation_ids = relation_ids
        self.relation_names = relation_names
        self.heads = np.ascontiguousarray(heads, dtype=np.int32)
        self.relations = np.ascontiguousarray(relations, dtype=np.int32)
        self.tails = np.ascontiguousarray(tails, dtype=np.int32)
        self.stats = stats
        for arr in (self.heads, self.relations, self.tails):
            arr.setflags(write=False)
        self._entity_index = {e: i for i, e in enumerate(entity_ids)}
        self._relation_index = {r: i for i, r in enumerate(relation_ids)}
        # stable sort keeps ascending triple index within each head
        self._order = np.argsort(self.heads, kind="stable").astype(np.int64)
        counts = np.bincount(self.heads, minlength=len(entity_ids))
        self._offsets = np.zeros(len(entity_ids) + 1, dtype=np.int64)
        np.cumsum(counts, out=self._offsets[1:])
        self._by_name: dict[str, list[int]] | None = None

    @classmethod
    def unfiltered(cls, raw: RawKG) -> "KGStore":
        """Wrap a raw KG without enforcing completeness (test fixtures, toy graphs)."""
        return cls(
            list(raw.entity_ids),
            [list(n) for n in raw.entity_names],
            list(raw.descriptions),
            list(raw.relation_ids),
            [list(n) for n in raw.relation_names],
            raw.heads,
            raw.relations,
            raw.tails,
        )

    @property
    def n_entities(self) -> int:
        return len(self.entity_ids)

    @property
    def n_relations(self) -> int:
        return len(self.relation_ids)

    @property
    def n_triples(self) -> int:
        return int(self.heads.shape[0])

    def entity_handle(self, entity: str | int) -> int:
        if isinstance(entity, (int, np.integer)):
            if 0 <= entity < self.n_entities:
                return int(entity)
            raise UnknownEntityError(entity)
        try:
            return self._entity_index[entity]
        except KeyError:
            raise UnknownEntityError(entity) from None

    def relation_handle(self, relation: str) -> int:
        return self._relation_index[relation]

    def name(self, entity: str | int) -> str:
        h = self.entity_handle(entity)
        names = self.entity_names[h]
        return names[0] if names else self.entity_ids[h]

    def relation_name(self, relation: int) -> str:
        names = self.relation_names[relation]
        return names[0] if names else self.relation_ids[relation]

    def description(self, entity: str | int) -> str | None:
        return self.descriptions[self.entity_handle(entity)]

    def triple(self, index: int) -> Triple:
        return Triple(int(self.heads[index]), int(self.relations[index]), int(self.tails[index]))

    def triples(self) -> list[Triple]:
        return [Triple(int(h), int(r), int(t)) for h, r, t in zip(self.heads, self.relations, self.tails)]

    def adjacency(self, entity: str | int) -> np.ndarray:
        """Indices of all triples headed by ``entity``, ascending."""
        h = self.entity_handle(entity)
        return self._order[self._offsets[h] : self._offsets[h + 1]]

    def degree(self, entity: str | int) -> int:
        h = self.entity_handle(entity)
        return int(self._offsets[h + 1] - self._offsets[h])

    def neighbors(self, entity: str | int, cap: int) -> list[Triple]:
        """First ``cap`` triples headed by ``entity`` in load order."""
        if cap < 1:
            raise ValueError("cap must be >= 1")
        return [self.triple(int(i)) for i in self.adjacency(entity)[:cap]]

    def render_triple(self, t: Triple) -> str:
        parts = (self.name(t.head), self.relation_name(t.relation), self.name(t.tail))
        return "<" + " | ".join(p.replace("|", "/") for p in parts) + ">"

    def parse_triple(self, text: str) -> Triple:
        """Resolve a rendered ``<head | relation | tail>`` back to a stored triple."""
        fields = split_rendered(text)
        if fields is None:
            raise ValueError(f"not a rendered triple: {text!r}")
        head_key, rel_key, tail_key = fields
        if self._by_name is None:
            by_name: dict[str, list[int]] = {}
            for h in range(self.n_entities):
                by_name.setdefault(_name_key(self.name(h).replace("|", "/")), []).append(h)
            self._by_name = by_name
        for h in self._by_name.get(head_key, []):
            for i in self.adjacency(h):
                t = self.triple(int(i))
                if (
                    _name_key(self.relation_name(t.relation).replace("|", "/")) == rel_key
                    and _name_key(self.name(t.tail).replace("|", "/")) == tail_key
                ):
                    return t
        raise KeyError(f"no stored triple matches {text!r}")

    def save(self, path: str | Path) -> None:
        write_snapshot(self, path)

    @classmethod
    def load(cls, path: str | Path) -> "KGStore":
        return read_snapshot(path)


def split_rendered(text: str) -> tuple[str, str, str] | None:
    """Normalized (head, relation, tail) keys of a ``<a | b | c>`` span, or None."""
    inner = text.strip()
    if inner.startswith("<") and inner.endswith(">"):
        inner = inner[1:-1]
    parts = inner.split("|")
    if len(parts) != 3:
        return None
    keys = tuple(_name_key(p) for p in parts)
    if not all(keys):
        return None
    return keys  # type: ignore[return-value]


def filter_complete(raw: RawKG) -> KGStore:
    """Drop entities lacking a description or a head triple, to a fixed point.

    Removing an entity removes every triple it participates in, which can
    leave other entities without head triples; iteration stops once both
    constraints hold for every survivor.
    """
    n = len(raw.entity_ids)
    h, r, t = raw.heads, raw.relations, raw.tails
    alive = np.array([bool(d and d.strip()) for d in raw.descriptions], dtype=bool)
    keep = alive[h] & alive[t]
    while True:
        heads_count = np.bincount(h[keep], minlength=n)
        new_alive = alive & (heads_count > 0)
        if np.array_equal(new_alive, alive):
            break
        alive = new_alive
        keep = alive[h] & alive[t]
    if not keep.any():
        raise KGEmptyError("KG empty after filtering")

    old_entities = np.flatnonzero(alive)
    ent_map = np.full(n, -1, dtype=np.int64)
    ent_map[old_entities] = np.arange(old_entities.size)
    used_rel = np.zeros(len(raw.relation_ids), dtype=bool)
    used_rel[r[keep]] = True
    old_relations = np.flatnonzero(used_rel)
    rel_map = np.full(len(raw.relation_ids), -1, dtype=np.int64)
    rel_map[old_relations] = np.arange(old_relations.size)

    stats = FilterStats(
        entities_in=n,
        entities_out=int(old_entities.size),
        relations_in=len(raw.relation_ids),
        relations_out=int(old_relations.size),
        triples_in=raw.n_triples,
        triples_out=int(keep.sum()),
    )
    log.info("filtered KG: %s", stats.to_dict())
    return KGStore(
        [raw.entity_ids[i] for i in old_entities],
        [list(raw.entity_names[i]) for i in old_entities],
        [raw.descriptions[i] for i in old_entities],
        [raw.relation_ids[i] for i in old_relations],
        [list(raw.relation_names[i]) for i in old_relations],
        ent_map[h[keep]],
        rel_map[r[keep]],
        ent_map[t[keep]],
        stats=stats,
    )


def _write_str(fh: BinaryIO, s: str) -> None:
    b = s.encode("utf-8")
    fh.write(struct.pack("<I", len(b)))
    fh.write(b)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise ValueError("truncated KG snapshot")
    return b


def _read_str(fh: BinaryIO) -> str:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n).decode("utf-8")


def write_snapshot(store: KGStore, path: str | Path) -> None:
    stats = store.stats or FilterStats(
        store.n_entities, store.n_entities, store.n_relations, store.n_relations, store.n_triples, store.n_triples
    )
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<HIIQ", SNAPSHOT_VERSION, store.n_entities, store.n_relations, store.n_triples))
        fh.write(
            struct.pack(
                "<6Q",
                stats.entities_in,
                stats.entities_out,
                stats.relations_in,
                stats.relations_out,
                stats.triples_in,
                stats.triples_out,
            )
        )
        for eid, names, desc in zip(store.entity_ids, store.entity_names, store.descriptions):
            _write_str(fh, eid)
            fh.write(struct.pack("<I", len(names)))
            for nm in names:
                _write_str(fh, nm)
            _write_str(fh, desc or "")
        for rid, names in zip(store.relation_ids, store.relation_names):
            _write_str(fh, rid)
            fh.write(struct.pack("<I", len(names)))
            for nm in names:
                _write_str(fh, nm)
        table = np.stack([store.heads, store.relations, store.tails], axis=1).astype("<i4")
        fh.write(table.tobytes())


def read_snapshot(path: str | Path) -> KGStore:
    with open(path, "rb") as fh:
        if fh.read(len(SNAPSHOT_MAGIC)) != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a KG snapshot (bad magic)")
        version, n_ent, n_rel, n_tri = struct.unpack("<HIIQ", _read_exact(fh, 18))
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: unsupported snapshot version {version}")
        stats = FilterStats(*struct.unpack("<6Q", _read_exact(fh, 48)))
        entity_ids, entity_names, descriptions = [], [], []
        for _ in range(n_ent):
            entity_ids.append(_read_str(fh))
            (k,) = struct.unpack("<I", _read_exact(fh, 4))
            entity_names.append([_read_str(fh) for _ in range(k)])
            descriptions.append(_read_str(fh) or None)
        relation_ids, relation_names = [], []
        for _ in range(n_rel):
            relation_ids.append(_read_str(fh))
            (k,) = struct.unpack("<I", _read_exact(fh, 4))
            relation_names.append([_read_str(fh) for _ in range(k)])
        table = np.frombuffer(_read_exact(fh, 12 * n_tri), dtype="<i4").reshape(-1, 3)
    return KGStore(
        entity_ids,
        entity_names,
        descriptions,
        relation_ids,
        relation_names,
        table[:, 0].astype(np.int32),
        table[:, 1].astype(np.int32),
        table[:, 2].astype(np.int32),
        stats=stats,
    )
