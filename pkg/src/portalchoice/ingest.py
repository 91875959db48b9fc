"""Clickstream ingestion: parse host-level visit logs, rebuild sessions,
pick out portal visits, keep the top-K portals and split off a holdout panel.

Hosts are reverse-dotted domains (``com.yahoo.mail``). A catalog pattern
matches a host when it equals the host or is a dotted prefix of it; the
longest matching pattern decides how a host is classified.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping, Sequence

import numpy as np

from .errors import CatalogError, ConfigurationError, DataError, DomainError
from .model import Alternative, make_alternatives

log = logging.getLogger(__name__)

CLICKSTREAM_HEADER = ["household_id", "host", "arrival_ts", "departure_ts", "pages"]
SESSION_GAP_S = 1800

ROLE_PORTAL = "portal"
ROLE_EMAIL = "email"
ROLE_EXCLUDED = "excluded"


@dataclass(frozen=True, order=True)
class ClickRecord:
    household_id: str
    arrival_ts: int
    departure_ts: int
    host: str
    pages: int

    @property
    def duration(self) -> int:
        return self.departure_ts - self.arrival_ts


@dataclass(frozen=True)
class Reject:
    line_no: int
    reason: str


@dataclass
class ParseResult:
    records: dict[str, list[ClickRecord]]
    rejects: list[Reject]
    n_lines: int = 0

    def all_records(self) -> list[ClickRecord]:
        return [r for hh in sorted(self.records) for r in self.records[hh]]

    @property
    def n_records(self) -> int:
        return sum(len(v) for v in self.records.values())


def _lines(source) -> Iterable[bytes]:
    if isinstance(source, (bytes, bytearray)):
        return io.BytesIO(bytes(source))
    if isinstance(source, (str, Path)):
        return open(source, "rb")
    return source


def _parse_line(text: str) -> ClickRecord | str:
    try:
        fields = next(csv.reader([text]))
    except csv.Error as exc:
        return f"unparseable line: {exc}"
    if len(fields) != 5:
        return f"expected 5 fields, got {len(fields)}"
    hh, host, arr, dep, pages = (f.strip() for f in fields)
    if not hh:
        return "empty household_id"
    if not host:
        return "empty host"
    values = {}
    for name, raw in (("arrival_ts", arr), ("departure_ts", dep), ("pages", pages)):
        try:
            values[name] = int(raw)
        except ValueError:
            return f"invalid integer {name}: {raw!r}"
    if values["departure_ts"] < values["arrival_ts"]:
        return "negative duration"
    if values["pages"] < 1:
        return "pages must be positive"
    return ClickRecord(hh, values["arrival_ts"], values["departure_ts"], host.lower(), values["pages"])


def parse_clickstream(source: bytes | BinaryIO | str | Path) -> ParseResult:
    """Parse the clickstream CSV.

    Malformed lines are collected as :class:`Reject` entries (line numbers
    are 1-based and count the header) and parsing continues. Records come
    back grouped by household and sorted by arrival.
    """
    stream = _lines(source)
    records: dict[str, list[ClickRecord]] = {}
    rejects: list[Reject] = []
    n = 0
    try:
        for line_no, raw in enumerate(stream, start=1):
            n = line_no
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError:
                rejects.append(Reject(line_no, "invalid utf-8"))
                continue
            text = text.rstrip("\r\n")
            if line_no == 1:
                header = [h.strip() for h in text.lstrip("﻿").split(",")]
                if header != CLICKSTREAM_HEADER:
                    raise DataError(f"clickstream header must be {','.join(CLICKSTREAM_HEADER)}, got {text!r}")
                continue
            if not text.strip():
                continue
            rec = _parse_line(text)
            if isinstance(rec, str):
                rejects.append(Reject(line_no, rec))
            else:
                records.setdefault(rec.household_id, []).append(rec)
    finally:
        if isinstance(source, (str, Path)):
            stream.close()
    if n == 0:
        raise DataError("clickstream is empty (no header)")
    out = {hh: sorted(records[hh]) for hh in sorted(records)}
    if rejects:
        log.warning("clickstream: %d rejected line(s)", len(rejects))
    return ParseResult(out, rejects, n)


def write_rejects(rejects: Sequence[Reject], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["line_no", "reason"])
        for r in rejects:
            w.writerow([r.line_no, r.reason])


def write_clickstream(records: Iterable[ClickRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLICKSTREAM_HEADER)
        for r in records:
            w.writerow([r.household_id, r.host, r.arrival_ts, r.departure_ts, r.pages])


@dataclass(frozen=True)
class Session:
    household_id: str
    records: tuple[ClickRecord, ...]

    @property
    def start_ts(self) -> int:
        return self.records[0].arrival_ts

    @property
    def end_ts(self) -> int:
        return max(r.departure_ts for r in self.records)


def sessionize(records: Iterable[ClickRecord] | Mapping[str, Sequence[ClickRecord]],
               gap_s: int = SESSION_GAP_S) -> list[Session]:
    """Split each household's records into sessions.

    A new session starts when a record arrives strictly more than ``gap_s``
    seconds after the previous record's departure.
    """
    if isinstance(records, Mapping):
        records = [r for v in records.values() for r in v]
    by_hh: dict[str, list[ClickRecord]] = {}
    for r in records:
        by_hh.setdefault(r.household_id, []).append(r)
    sessions = []
    for hh in sorted(by_hh):
        current: list[ClickRecord] = []
        for r in sorted(by_hh[hh]):
            if current and r.arrival_ts - current[-1].departure_ts > gap_s:
                sessions.append(Session(hh, tuple(current)))
                current = []
            current.append(r)
        if current:
            sessions.append(Session(hh, tuple(current)))
    return sessions


def sessions_by_household(sessions: Iterable[Session]) -> dict[str, list[Session]]:
    out: dict[str, list[Session]] = {}
    for s in sessions:
        out.setdefault(s.household_id, []).append(s)
    return out


def _match(host: str, patterns: Iterable[str]) -> bool:
    return any(host == p or host.startswith(p + ".") for p in patterns)


@dataclass
class PortalEntry:
    label: str
    portal_hosts: tuple[str, ...] = ()
    email_hosts: tuple[str, ...] = ()
    excluded_hosts: tuple[str, ...] = ()
    links: tuple[str, ...] = ()


@dataclass
class PortalCatalog:
    """Host classification for portals plus the global site-category map."""

    portals: dict[str, PortalEntry]
    categories: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        index: dict[str, tuple[str, str]] = {}
        for label, entry in self.portals.items():
            if entry.label != label:
                raise CatalogError(f"portal key {label!r} does not match label {entry.label!r}")
            if not entry.portal_hosts:
                raise CatalogError(f"portal {label!r} has no portal_hosts")
            for role, pats in ((ROLE_PORTAL, entry.portal_hosts), (ROLE_EMAIL, entry.email_hosts),
                               (ROLE_EXCLUDED, entry.excluded_hosts)):
                for p in pats:
                    p = p.lower()
                    if p in index:
                        other = index[p]
                        raise CatalogError(f"host pattern {p!r} listed for {other[1]}/{other[0]} "
                                           f"and {label}/{role}")
                    index[p] = (role, label)
        self._index = index
        self._links = {lab: tuple(x.lower() for x in e.links) for lab, e in self.portals.items()}
        self._cats = {k.lower(): tuple(v) for k, v in self.categories.items()}

    @property
    def labels(self) -> list[str]:
        return list(self.portals)

    def _longest(self, host: str, table: Mapping):
        parts = host.lower().split(".")
        for n in range(len(parts), 0, -1):
            key = ".".join(parts[:n])
            if key in table:
                return table[key]
        return None

    def classify(self, host: str) -> tuple[str, str] | None:
        """(role, portal label) of the most specific matching pattern."""
        return self._longest(host, self._index)

    def portal_of(self, host: str) -> str | None:
        """Portal label if ``host`` is a portal main/directory/search page."""
        hit = self.classify(host)
        return hit[1] if hit and hit[0] == ROLE_PORTAL else None

    def email_provider_of(self, host: str) -> str | None:
        hit = self.classify(host)
        return hit[1] if hit and hit[0] == ROLE_EMAIL else None

    def categories_of(self, host: str) -> frozenset[str] | None:
        cats = self._longest(host, self._cats)
        return None if cats is None else frozenset(cats)

    def is_linked(self, host: str | None, label: str) -> bool:
        return host is not None and _match(host.lower(), self._links.get(label, ()))

    def to_dict(self) -> dict:
        return {
            "portals": [
                {"label": e.label, "portal_hosts": list(e.portal_hosts), "email_hosts": list(e.email_hosts),
                 "excluded_hosts": list(e.excluded_hosts), "links": list(e.links)}
                for e in self.portals.values()
            ],
            "categories": {k: list(v) for k, v in self.categories.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PortalCatalog":
        try:
            entries = [PortalEntry(p["label"], tuple(p.get("portal_hosts", ())), tuple(p.get("email_hosts", ())),
                                   tuple(p.get("excluded_hosts", ())), tuple(p.get("links", ())))
                       for p in d["portals"]]
        except (KeyError, TypeError) as exc:
            raise CatalogError(f"malformed catalog: {exc}") from None
        portals = {}
        for e in entries:
            if e.label in portals:
                raise CatalogError(f"duplicate portal label {e.label!r}")
            portals[e.label] = e
        return cls(portals, {k: tuple(v) for k, v in d.get("categories", {}).items()})

    @classmethod
    def load(cls, path) -> "PortalCatalog":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise CatalogError(f"{path}: {exc}") from None

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


@dataclass(frozen=True)
class PortalVisit:
    """One (possibly merged) portal visit with its follow-up context.

    ``next_host``/``next_gap`` describe the record right after the visit in
    the same session and are ``None`` when the visit ends its session;
    ``next_is_portal`` says whether that record is itself a portal page.
    ``view_length`` sums the durations of the merged records.
    """

    household_id: str
    portal: str
    arrival_ts: int
    departure_ts: int
    pages: int
    view_length: int
    next_host: str | None
    next_gap: int | None
    session: int
    first_in_session: bool
    session_size: int
    n_records: int = 1
    next_is_portal: bool = False

    @property
    def last_in_session(self) -> bool:
        return self.next_host is None


def classify_portal_visits(sessions: Iterable[Session], catalog: PortalCatalog) -> dict[str, list[PortalVisit]]:
    """Portal visit stream per household, in time order.

    Only main/directory/search pages count; email and excluded hosts are
    destinations. Consecutive records on the same portal within a session
    merge into one visit.
    """
    out: dict[str, list[PortalVisit]] = {}
    counters: Counter = Counter()
    for s in sessions:
        sidx = counters[s.household_id]
        counters[s.household_id] += 1
        visits = out.setdefault(s.household_id, [])
        recs = s.records
        i = 0
        while i < len(recs):
            label = catalog.portal_of(recs[i].host)
            if label is None:
                i += 1
                continue
            j = i
            while j + 1 < len(recs) and catalog.portal_of(recs[j + 1].host) == label:
                j += 1
            run = recs[i:j + 1]
            departure = max(r.departure_ts for r in run)
            nxt = recs[j + 1] if j + 1 < len(recs) else None
            visits.append(PortalVisit(
                household_id=s.household_id,
                portal=label,
                arrival_ts=run[0].arrival_ts,
                departure_ts=departure,
                pages=sum(r.pages for r in run),
                view_length=sum(r.duration for r in run),
                next_host=None if nxt is None else nxt.host,
                next_gap=None if nxt is None else nxt.arrival_ts - departure,
                session=sidx,
                first_in_session=(i == 0),
                session_size=len(recs),
                n_records=len(run),
                next_is_portal=nxt is not None and catalog.portal_of(nxt.host) is not None,
            ))
            i = j + 1
    return {hh: out[hh] for hh in sorted(out) if out[hh]}


@dataclass
class TopK:
    alternatives: tuple[Alternative, ...]
    visits: dict[str, list[PortalVisit]]
    counts: dict[str, int]
    retained_share: float


def select_top_alternatives(visits: Mapping[str, Sequence[PortalVisit]], k: int = 8,
                            base: str | None = None) -> TopK:
    """Keep the ``k`` most visited portals (ties go to the smaller label).

    Alternatives are ordered by descending visit count; the base defaults to
    the most visited portal.
    """
    if k < 2:
        raise ConfigurationError("K must be at least 2")
    counts = Counter(v.portal for vs in visits.values() for v in vs)
    if len(counts) < k:
        raise DomainError(f"only {len(counts)} distinct portals observed, need {k}")
    ranked = sorted(counts, key=lambda p: (-counts[p], p))[:k]
    keep = set(ranked)
    total = sum(counts.values())
    filtered = {hh: [v for v in vs if v.portal in keep] for hh, vs in visits.items()}
    filtered = {hh: vs for hh, vs in filtered.items() if vs}
    share = sum(counts[p] for p in ranked) / total
    return TopK(make_alternatives(ranked, base), filtered, dict(counts), share)


@dataclass(frozen=True)
class PanelSplit:
    estimation_households: frozenset[str]
    holdout_households: frozenset[str]

    def __post_init__(self):
        if self.estimation_households & self.holdout_households:
            raise ConfigurationError("estimation and holdout households overlap")

    def to_dict(self) -> dict:
        return {"estimation": sorted(self.estimation_households), "holdout": sorted(self.holdout_households)}

    @classmethod
    def from_dict(cls, d) -> "PanelSplit":
        return cls(frozenset(d["estimation"]), frozenset(d["holdout"]))


def split_holdout(household_ids: Iterable[str], holdout_fraction: float, seed: int) -> PanelSplit:
    """Random household split; the holdout has round(fraction * N) members."""
    if not 0 < holdout_fraction < 1:
        raise ConfigurationError(f"holdout fraction must lie in (0, 1), got {holdout_fraction}")
    ids = sorted(set(household_ids))
    n_hold = int(round(holdout_fraction * len(ids)))
    perm = np.random.default_rng(seed).permutation(len(ids))
    hold = frozenset(ids[i] for i in perm[:n_hold])
    return PanelSplit(frozenset(ids) - hold, hold)
