"""Turn classified portal visits into choice occasions.

Per household: email provider and start page (household constants), search
goals, failure flags, first-try flags, the loyalty recursion and the lagged
per-portal quantities. Exogenous advertising and media series are joined on
the occasion's calendar month and day (UTC).

Goal and failure annotations look at what happened after a visit, so they are
ex-post labels; a feature of occasion t only ever uses the labels of visits
before t. ``link`` is the exception: it reads the site visited right after
the occasion itself.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, DomainError
from .ingest import ClickRecord, PortalCatalog, PortalVisit, Session, classify_portal_visits, sessionize
from .model import (
    Alternative, FeatureBlock, ModelSpec, OccasionSet, assemble_design, check_alternatives,
)

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.7782
DEFAULT_WINDOW_S = 300
AD_SCALE = 1e6
OCCASION_KEYS = ["household_id", "occasion_idx", "timestamp", "alt_id", "chosen"]


# ----------------------------------------------------------------- loyalty

@dataclass(frozen=True)
class LoyaltyState:
    alpha: float
    values: tuple[float, ...]
    last: int | None = None  # alternative id of the previous visit, -1 if out of sample

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")

    @classmethod
    def initial(cls, alpha: float, J: int) -> "LoyaltyState":
        return cls(alpha, (1.0 / J,) * J)


def update_loyalty(state: LoyaltyState, chosen: int | None) -> LoyaltyState:
    """Fold one visit into the loyalty state.

    ``chosen`` is the visited alternative's id, or ``None``/-1 for a portal
    outside the alternative set, in which case every value just decays.
    """
    a = state.alpha
    b = 1.0 - a
    c = -1 if chosen is None else int(chosen)
    vals = tuple(a * v + b * (1.0 if j == c else 0.0) for j, v in enumerate(state.values))
    return LoyaltyState(a, vals, c)


# --------------------------------------------------------------- exogenous

def _month(ts: int) -> str:
    return dt.datetime.fromtimestamp(ts, dt.timezone.utc).strftime("%Y-%m")


def _day(ts: int) -> dt.date:
    return dt.datetime.fromtimestamp(ts, dt.timezone.utc).date()


@dataclass
class ExogenousSeries:
    """Monthly advertising dollars and daily media-mention flags per portal.

    Coverage runs from the first to the last month (day) present in the
    respective file; portals without a row in a covered slot get 0.
    """

    advertising: dict[tuple[str, str], float] = field(default_factory=dict)
    media: dict[tuple[str, dt.date], int] = field(default_factory=dict)
    ad_range: tuple[str, str] | None = None
    media_range: tuple[dt.date, dt.date] | None = None
    ad_scale: float = AD_SCALE

    def advertising_for(self, portal: str, ts: int) -> float:
        m = _month(ts)
        if self.ad_range is None or not self.ad_range[0] <= m <= self.ad_range[1]:
            raise DataError(f"advertising series has no data for month {m}")
        return self.advertising.get((portal, m), 0.0) / self.ad_scale

    def media_for(self, portal: str, ts: int) -> float:
        d = _day(ts)
        if self.media_range is None or not self.media_range[0] <= d <= self.media_range[1]:
            raise DataError(f"media series has no data for day {d.isoformat()}")
        hit = self.media.get((portal, d), 0) or self.media.get((portal, d - dt.timedelta(days=1)), 0)
        return 1.0 if hit else 0.0

    @classmethod
    def load(cls, advertising_path, media_path, ad_scale: float = AD_SCALE) -> "ExogenousSeries":
        ads: dict[tuple[str, str], float] = {}
        months = []
        for line_no, row in _csv_rows(advertising_path, ["portal", "year_month", "dollars"]):
            try:
                dt.datetime.strptime(row["year_month"], "%Y-%m")
                dollars = float(row["dollars"])
            except ValueError as exc:
                raise DataError(f"{advertising_path}:{line_no}: {exc}") from None
            if not np.isfinite(dollars) or dollars < 0:
                raise DataError(f"{advertising_path}:{line_no}: advertising must be a finite non-negative amount")
            key = (row["portal"], row["year_month"])
            if key in ads:
                raise DataError(f"{advertising_path}:{line_no}: duplicate row for {key}")
            ads[key] = dollars
            months.append(row["year_month"])
        media: dict[tuple[str, dt.date], int] = {}
        for line_no, row in _csv_rows(media_path, ["portal", "date", "mentioned"]):
            try:
                d = dt.date.fromisoformat(row["date"])
            except ValueError as exc:
                raise DataError(f"{media_path}:{line_no}: {exc}") from None
            if row["mentioned"] not in ("0", "1"):
                raise DataError(f"{media_path}:{line_no}: mentioned must be 0 or 1")
            if (row["portal"], d) in media:
                raise DataError(f"{media_path}:{line_no}: duplicate row for {row['portal']} {d}")
            media[(row["portal"], d)] = int(row["mentioned"])
        days = [d for _, d in media]
        return cls(ads, media, (min(months), max(months)) if months else None,
                   (min(days), max(days)) if days else None, ad_scale)

    def dump(self, advertising_path, media_path) -> None:
        with open(advertising_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["portal", "year_month", "dollars"])
            for (p, m), v in sorted(self.advertising.items(), key=lambda kv: (kv[0][1], kv[0][0])):
                w.writerow([p, m, repr(float(v))])
        with open(media_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["portal", "date", "mentioned"])
            for (p, d), v in sorted(self.media.items(), key=lambda kv: (kv[0][1], kv[0][0])):
                w.writerow([p, d.isoformat(), v])


def _csv_rows(path, columns):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != columns:
            raise DataError(f"{path}: header must be {','.join(columns)}")
        for line_no, row in enumerate(reader, start=2):
            yield line_no, {k.strip(): (v or "").strip() for k, v in row.items()}


# ------------------------------------------------------ household constants

def derive_email_provider(records: Iterable[ClickRecord], catalog: PortalCatalog) -> str | None:
    """Portal whose email hosts this household visited most (earlier first use wins ties)."""
    counts: Counter = Counter()
    first: dict[str, int] = {}
    for i, r in enumerate(sorted(records)):
        p = catalog.email_provider_of(r.host)
        if p is not None:
            counts[p] += 1
            first.setdefault(p, i)
    if not counts:
        return None
    return min(counts, key=lambda p: (-counts[p], first[p]))


def derive_start_page(sessions: Sequence[Session], catalog: PortalCatalog, threshold: float = 0.5) -> str | None:
    """Portal on which at least ``threshold`` of the household's sessions begin."""
    if not sessions:
        return None
    counts: Counter = Counter()
    first: dict[str, int] = {}
    for i, s in enumerate(sessions):
        p = catalog.portal_of(s.records[0].host)
        if p is not None:
            counts[p] += 1
            first.setdefault(p, i)
    if not counts:
        return None
    best = min(counts, key=lambda p: (-counts[p], first[p]))
    return best if counts[best] >= threshold * len(sessions) else None


# -------------------------------------------------------- visit annotations

def annotate_goals(visits: Sequence[PortalVisit], catalog: PortalCatalog,
                   window_s: int = DEFAULT_WINDOW_S) -> list[frozenset[str] | None]:
    """Category set of the site reached within the window after each visit.

    A visit followed directly by another portal page takes that search's goal.
    """
    goals: list[frozenset[str] | None] = [None] * len(visits)
    for i in range(len(visits) - 1, -1, -1):
        v = visits[i]
        if v.next_host is None or v.next_gap > window_s:
            continue
        if v.next_is_portal:
            goals[i] = goals[i + 1] if i + 1 < len(visits) else None
        else:
            goals[i] = catalog.categories_of(v.next_host)
            if goals[i] is None:
                log.debug("no category for host %s", v.next_host)
    return goals


def no_goal_fraction(goals: Sequence) -> float:
    return sum(g is None for g in goals) / len(goals) if goals else 0.0


def annotate_failures(visits: Sequence[PortalVisit], goals: Sequence[frozenset[str] | None],
                      window_s: int = DEFAULT_WINDOW_S, broad: bool = False) -> list[bool]:
    """Failed-search flags.

    A search fails when the very next site is another portal page within the
    window, or when a later search in the same session starts within the
    window and shares a goal category. With ``broad`` a search that reaches no
    site within the window also fails, unless it is a return to a portal that
    ends a session it did not start.
    """
    n = len(visits)
    failed = []
    for i, v in enumerate(visits):
        f = v.next_is_portal and v.next_gap <= window_s
        if not f and goals[i]:
            for k in range(i + 1, n):
                u = visits[k]
                if u.session != v.session or u.arrival_ts - v.departure_ts > window_s:
                    break
                if goals[k] and goals[i] & goals[k]:
                    f = True
                    break
        if broad and not f:
            no_destination = v.next_host is None or v.next_gap > window_s
            session_end_return = v.last_in_session and not v.first_in_session
            f = no_destination and not session_end_return
        failed.append(f)
    return failed


def annotate_first_try(visits: Sequence[PortalVisit], failed: Sequence[bool],
                       window_s: int = DEFAULT_WINDOW_S) -> list[bool]:
    """False for a search that begins within the window after a failed one."""
    out = []
    last_failed_departure = None
    for v, f in zip(visits, failed):
        out.append(last_failed_departure is None or v.arrival_ts - last_failed_departure > window_s)
        if f:
            last_failed_departure = v.departure_ts if last_failed_departure is None else max(
                last_failed_departure, v.departure_ts)
    return out


@dataclass(frozen=True)
class SearchAnnotation:
    goal: frozenset[str] | None
    failed: bool
    failed_broad: bool
    first_try: bool


def annotate_visits(visits: Sequence[PortalVisit], catalog: PortalCatalog,
                    window_s: int = DEFAULT_WINDOW_S) -> list[SearchAnnotation]:
    goals = annotate_goals(visits, catalog, window_s)
    narrow = annotate_failures(visits, goals, window_s)
    broad = annotate_failures(visits, goals, window_s, broad=True)
    first = annotate_first_try(visits, narrow, window_s)
    return [SearchAnnotation(*t) for t in zip(goals, narrow, broad, first)]


# ---------------------------------------------------------------- occasions

@dataclass
class FeaturizeResult:
    occasions: OccasionSet
    dropped_households: list[str]
    no_goal_fraction: float
    n_visits: int
    email: dict[str, str | None]
    start_page: dict[str, str | None]
    config: dict = field(default_factory=dict)

    def meta(self) -> dict:
        return {
            "alternatives": [{"id": a.id, "label": a.label, "is_base": a.is_base}
                             for a in self.occasions.alternatives],
            "spec": self.occasions.spec.to_dict(),
            **self.config,
            "dropped_households": self.dropped_households,
            "no_goal_fraction": self.no_goal_fraction,
            "n_visits": self.n_visits,
        }


def _max_lag(spec: ModelSpec) -> int:
    return max((v.lag for v in spec.variables if v.tag == "portsame_lag"), default=0)


def build_choice_occasions(visits: Mapping[str, Sequence[PortalVisit]],
                           annotations: Mapping[str, Sequence[SearchAnnotation]],
                           alternatives: Sequence[Alternative], alpha: float,
                           email: Mapping[str, str | None], start_page: Mapping[str, str | None],
                           exogenous: ExogenousSeries, catalog: PortalCatalog, spec: ModelSpec,
                           loyalty_scope: str = "any") -> tuple[OccasionSet, list[str]]:
    """One occasion per visit to an alternative; returns (occasions, dropped households).

    ``loyalty_scope="any"`` lets visits to portals outside the alternative
    set decay loyalty and occupy portsame lags; ``"sample"`` ignores them.
    Households with fewer than two occasions are dropped.
    """
    if loyalty_scope not in ("any", "sample"):
        raise ConfigurationError(f"loyalty_scope must be 'any' or 'sample', got {loyalty_scope!r}")
    alternatives = tuple(alternatives)
    check_alternatives(alternatives)
    spec.validate_for(alternatives)
    J = len(alternatives)
    ids = {a.label: a.id for a in alternatives}
    labels = [a.label for a in alternatives]
    n_lags = _max_lag(spec)
    state0 = LoyaltyState.initial(alpha, J)

    rows: dict[str, list] = {k: [] for k in (
        "household", "index", "timestamp", "chosen", "loyalty", "portsame", "lvl", "pages", "failed",
        "broad", "missing", "adv", "media", "email", "start", "link", "first_try")}
    dropped = []
    for hh in sorted(visits):
        vs = visits[hh]
        ann = annotations[hh]
        if sum(v.portal in ids for v in vs) < 2:
            dropped.append(hh)
            continue
        state = state0
        history: list[int] = []
        last: list[tuple | None] = [None] * J
        em = [1.0 if lab == email.get(hh) else 0.0 for lab in labels]
        sp = [1.0 if lab == start_page.get(hh) else 0.0 for lab in labels]
        t = 0
        for v, a in zip(vs, ann):
            j = ids.get(v.portal, -1)
            if j < 0 and loyalty_scope == "sample":
                continue
            if j >= 0:
                t += 1
                ps = np.zeros((n_lags, J))
                for lag in range(1, n_lags + 1):
                    if lag <= len(history) and history[-lag] >= 0:
                        ps[lag - 1, history[-lag]] = 1.0
                rows["household"].append(hh)
                rows["index"].append(t)
                rows["timestamp"].append(v.arrival_ts)
                rows["chosen"].append(j)
                rows["loyalty"].append(state.values)
                rows["portsame"].append(ps)
                rows["lvl"].append([0.0 if x is None else x[0] for x in last])
                rows["pages"].append([0.0 if x is None else x[1] for x in last])
                rows["failed"].append([0.0 if x is None else x[2] for x in last])
                rows["broad"].append([0.0 if x is None else x[3] for x in last])
                rows["missing"].append([1.0 if x is None else 0.0 for x in last])
                rows["adv"].append([exogenous.advertising_for(lab, v.arrival_ts) for lab in labels])
                rows["media"].append([exogenous.media_for(lab, v.arrival_ts) for lab in labels])
                rows["email"].append(em)
                rows["start"].append(sp)
                rows["link"].append([1.0 if catalog.is_linked(v.next_host, lab) else 0.0 for lab in labels])
                rows["first_try"].append(1.0 if a.first_try else 0.0)
                last[j] = (float(v.view_length), float(v.pages), float(a.failed), float(a.failed_broad))
            state = update_loyalty(state, j)
            history.append(j)
    if not rows["household"]:
        raise DomainError("no household has at least two choice occasions")
    n = len(rows["household"])
    arr = lambda k: np.asarray(rows[k], dtype=float)
    block = FeatureBlock(
        loyalty=arr("loyalty"),
        portsame=np.stack(rows["portsame"]) if n_lags else np.zeros((n, 0, J)),
        last_view_length=arr("lvl"), last_pages=arr("pages"), last_failed=arr("failed"),
        last_failed_broad=arr("broad"), missing=arr("missing"), advertising=arr("adv"),
        media=arr("media"), same_email=arr("email"), start_page=arr("start"), link=arr("link"),
        first_try=arr("first_try"),
    )
    X = assemble_design(spec, block, alternatives)
    occ = OccasionSet(alternatives, spec, np.array(rows["household"], dtype=object),
                      np.array(rows["index"]), np.array(rows["timestamp"]), np.array(rows["chosen"]), X)
    return occ, dropped


def featurize(records: Mapping[str, Sequence[ClickRecord]], catalog: PortalCatalog,
              alternatives: Sequence[Alternative], exogenous: ExogenousSeries, spec: ModelSpec,
              alpha: float = DEFAULT_ALPHA, window_s: int = DEFAULT_WINDOW_S, gap_s: int = 1800,
              households: Iterable[str] | None = None, loyalty_scope: str = "any",
              start_threshold: float = 0.5) -> FeaturizeResult:
    """Raw records of each household to a :class:`FeaturizeResult`."""
    if window_s <= 0:
        raise ConfigurationError("window must be positive")
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    keep = None if households is None else set(households)
    visits, annotations, email, start = {}, {}, {}, {}
    all_goals = []
    for hh in sorted(records):
        if keep is not None and hh not in keep:
            continue
        sessions = sessionize(records[hh], gap_s)
        vs = classify_portal_visits(sessions, catalog).get(hh, [])
        if not vs:
            continue
        ann = annotate_visits(vs, catalog, window_s)
        visits[hh], annotations[hh] = vs, ann
        email[hh] = derive_email_provider(records[hh], catalog)
        start[hh] = derive_start_page(sessions, catalog, start_threshold)
        all_goals.extend(a.goal for a in ann)
    occ, dropped = build_choice_occasions(visits, annotations, alternatives, alpha, email, start,
                                          exogenous, catalog, spec, loyalty_scope)
    if dropped:
        log.info("dropped %d household(s) with fewer than two occasions", len(dropped))
    frac = no_goal_fraction(all_goals)
    config = {"alpha": alpha, "window_s": window_s, "gap_s": gap_s, "ad_scale": exogenous.ad_scale,
              "loyalty_scope": loyalty_scope, "start_threshold": start_threshold}
    return FeaturizeResult(occ, dropped, frac, len(all_goals), email, start, config)


# ------------------------------------------------------------------ file I/O

def _fmt(x: float) -> str:
    return repr(x + 0.0)


def write_occasions(occ: OccasionSet, path, meta: Mapping | None = None) -> None:
    """CSV with one row per occasion x alternative plus a JSON sidecar."""
    path = Path(path)
    X = occ.X.tolist()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OCCASION_KEYS + occ.spec.names)
        for i in range(occ.n):
            hh, t, ts, ch = str(occ.household[i]), int(occ.index[i]), int(occ.timestamp[i]), int(occ.chosen[i])
            for j in range(occ.J):
                w.writerow([hh, t, ts, j, int(j == ch)] + [_fmt(x) for x in X[i][j]])
    m = dict(meta or {})
    m["alternatives"] = [{"id": a.id, "label": a.label, "is_base": a.is_base} for a in occ.alternatives]
    m["spec"] = occ.spec.to_dict()
    with open(meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(m, fh, indent=1, sort_keys=True)
        fh.write("\n")


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def read_occasions(path) -> tuple[OccasionSet, dict]:
    path = Path(path)
    try:
        with open(meta_path(path), encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"missing sidecar {meta_path(path)}") from None
    alts = tuple(Alternative(a["id"], a["label"], a["is_base"]) for a in meta["alternatives"])
    spec = ModelSpec.from_dict(meta["spec"])
    J, K = len(alts), len(spec)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != OCCASION_KEYS + spec.names:
            raise DataError(f"{path}: header does not match the sidecar spec")
        hh, idx, ts, ch, rows = [], [], [], [], []
        block: list = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 5 + K:
                raise DataError(f"{path}:{line_no}: expected {5 + K} fields")
            block.append((line_no, row))
            if len(block) == J:
                _close_block(path, block, J, hh, idx, ts, ch, rows)
                block = []
        if block:
            raise DataError(f"{path}: trailing partial occasion at line {block[0][0]}")
    if not rows:
        raise DomainError(f"{path}: no occasions")
    X = np.array(rows, dtype=float).reshape(len(hh), J, K)
    return OccasionSet(alts, spec, np.array(hh, dtype=object), np.array(idx), np.array(ts), np.array(ch), X), meta


def _close_block(path, block, J, hh, idx, ts, ch, rows):
    first = block[0][1]
    chosen = []
    for j, (line_no, row) in enumerate(block):
        if row[:3] != first[:3] or row[3] != str(j):
            raise DataError(f"{path}:{line_no}: rows of one occasion must list alternatives 0..{J - 1} in order")
        if row[4] not in ("0", "1"):
            raise DataError(f"{path}:{line_no}: chosen must be 0 or 1")
        if row[4] == "1":
            chosen.append(j)
        try:
            rows.append([float(x) for x in row[5:]])
        except ValueError as exc:
            raise DataError(f"{path}:{line_no}: {exc}") from None
    if len(chosen) != 1:
        raise DataError(f"{path}:{block[0][0]}: occasion must have exactly one chosen alternative")
    hh.append(first[0])
    idx.append(int(first[1]))
    ts.append(int(first[2]))
    ch.append(chosen[0])


def file_fingerprint(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()
