"""Synthetic panels from a known data-generating process.

Each household gets a choice-independent skeleton first: sessions, portal
search slots with view lengths and page counts, what follows each search
(a destination site, an out-of-sample portal, a late destination or the end
of the session) and the session openers. Goals, failures and first-try flags
depend only on that skeleton. Portals are then chosen slot by slot by
utility maximisation with Gumbel errors while loyalty evolves, and the
lagged per-portal features follow the realised choices.

The raw clickstream written alongside never places two search slots next to
each other, so ingestion never merges them and the featurized raw data
reproduces the directly generated occasions exactly.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericalOverflowError
from .features import ExogenousSeries, write_occasions
from .ingest import ClickRecord, PortalCatalog, write_clickstream
from .model import (
    FeatureBlock, ModelSpec, OccasionSet, as_occasion_set, assemble_design, make_alternatives, superset_spec,
    variant_spec,
)

DEFAULT_LABELS = ("yahoo", "msn", "netscape", "excite", "aol", "altavista", "iwon", "lycos")
OUT_OF_SAMPLE = ("about", "go", "snap")
EPOCH = 946252800  # 1999-12-27 00:00 UTC
DAY = 86400

# destination host -> categories (None: uncategorised)
DESTINATIONS = (
    ("com.cnn", ("news",)),
    ("com.mp3", ("music",)),
    ("com.weather", ("weather", "news")),
    ("com.espn", ("sports",)),
    ("com.amazon", ("shopping",)),
    ("com.ebay", ("shopping", "auctions")),
    ("com.imdb", ("movies",)),
    ("com.mapquest", ("maps", "travel")),
    ("com.expedia", ("travel",)),
    ("org.example", None),
)
OPENER_HOST = "net.isp.home"


def recovery_beta(labels=DEFAULT_LABELS) -> dict[str, float]:
    """Variant-2 coefficients with the signs of the qualitative findings."""
    beta = {
        "loyalty": 3.0, "last_view_length": -0.004, "last_view_length_sq": 4e-6, "last_search_failed": -0.4,
        "missing_data": -0.5, "advertising": 0.15, "media_mentions": 0.2, "same_email": 0.8, "link": 0.6,
    }
    brands = np.linspace(-0.3, -1.2, len(labels) - 1)
    for lab, b in zip(labels[1:], brands):
        beta[f"brand_{lab}"] = round(float(b), 4)
    return beta


@dataclass
class SyntheticConfig:
    seed: int = 0
    n_households: int = 50
    occasions_per_household: int = 100
    occasion_scheme: str = "fixed"  # or "geometric" (mean = occasions_per_household)
    labels: tuple[str, ...] = DEFAULT_LABELS
    variant: int = 2
    true_beta: dict | None = None
    alpha_true: float = 0.7782
    correlation_mode: str = "none"  # or "nested"
    nested_pair: tuple[str, str] = ("msn", "excite")
    rho: float = 0.0
    weeks: int = 14
    start_ts: int = EPOCH
    window_s: int = 300
    view_length_median: float = 40.0
    view_length_sigma: float = 1.0
    max_view_length: int = 900
    pages_mean: float = 1.5
    follow_probs: tuple[float, float, float, float] = (0.75, 0.03, 0.10, 0.12)  # near, oos, far, end
    episodes_p: float = 0.35   # geometric parameter for searches per session
    next_search_gap_mean: float = 150.0
    p_email_household: float = 0.6
    p_email_destination: float = 0.12
    media_high: float = 0.6
    media_low: float = 0.05
    media_high_weeks: float = 0.3
    output_max_lag: int = 10

    def validate(self) -> None:
        if self.n_households < 1:
            raise ConfigurationError("n_households must be at least 1")
        if self.occasions_per_household < 2:
            raise ConfigurationError("occasions_per_household must be at least 2")
        if self.occasion_scheme not in ("fixed", "geometric"):
            raise ConfigurationError("occasion_scheme must be 'fixed' or 'geometric'")
        if not 0 < self.alpha_true < 1:
            raise ConfigurationError("alpha_true must lie in (0, 1)")
        if not 0 <= self.rho < 1:
            raise ConfigurationError("rho must lie in [0, 1)")
        if self.correlation_mode not in ("none", "nested"):
            raise ConfigurationError("correlation_mode must be 'none' or 'nested'")
        if len(self.labels) < 2 or len(set(self.labels)) != len(self.labels):
            raise ConfigurationError("need at least two distinct alternative labels")
        if set(self.labels) & set(OUT_OF_SAMPLE):
            raise ConfigurationError(f"labels may not reuse out-of-sample portal names {OUT_OF_SAMPLE}")
        if self.correlation_mode == "nested":
            a, b = self.nested_pair
            if a == b or a not in self.labels or b not in self.labels:
                raise ConfigurationError("nested_pair must name two distinct alternatives")
        if abs(sum(self.follow_probs) - 1) > 1e-9 or min(self.follow_probs) < 0:
            raise ConfigurationError("follow_probs must be a probability vector")
        if self.window_s <= 0 or self.weeks < 1:
            raise ConfigurationError("window_s and weeks must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["labels"] = list(self.labels)
        d["nested_pair"] = list(self.nested_pair)
        d["follow_probs"] = list(self.follow_probs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown synthetic config keys {sorted(unknown)}")
        d = dict(d)
        for k in ("labels", "nested_pair", "follow_probs"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SyntheticPanel:
    occasions: OccasionSet
    truth: dict
    records: dict[str, list[ClickRecord]]
    catalog: PortalCatalog
    exogenous: ExogenousSeries
    config: SyntheticConfig

    def write(self, outdir) -> None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        write_clickstream([r for hh in sorted(self.records) for r in self.records[hh]], out / "clickstream.csv")
        self.catalog.dump(out / "catalog.json")
        self.exogenous.dump(out / "advertising.csv", out / "media.csv")
        write_occasions(self.occasions, out / "occasions.csv", {
            "alpha": self.config.alpha_true, "window_s": self.config.window_s, "gap_s": 1800,
            "ad_scale": self.exogenous.ad_scale, "loyalty_scope": "any", "start_threshold": 0.5,
            "source": "synthgen"})
        with open(out / "truth.json", "w", encoding="utf-8") as fh:
            json.dump(self.truth, fh, indent=1, sort_keys=True)
            fh.write("\n")


# --------------------------------------------------------------- helpers

def gumbel(rng: np.random.Generator, size) -> np.ndarray:
    """Standard type-I extreme value draws by inverse CDF, -ln(-ln U)."""
    u = rng.random(size)
    u = np.where(u == 0.0, 2.0 ** -54, u)
    return -np.log(-np.log(u))


def nested_shock_scale(rho: float) -> float:
    """Scale s of a shared N(0, s^2) shock giving error correlation rho for the pair."""
    return math.sqrt(rho * (math.pi ** 2 / 6) / (1 - rho)) if rho > 0 else 0.0


def build_catalog(labels) -> PortalCatalog:
    links = {}
    dest_hosts = [h for h, _ in DESTINATIONS]
    for i, lab in enumerate(labels):
        links[lab] = [dest_hosts[i % 9], dest_hosts[(3 * i + 4) % 9]]
    portals = [{"label": lab, "portal_hosts": [f"com.{lab}"], "email_hosts": [f"com.{lab}.mail"],
                "excluded_hosts": [f"com.{lab}.news"], "links": sorted(set(links[lab]))} for lab in labels]
    portals += [{"label": lab, "portal_hosts": [f"com.{lab}"], "email_hosts": [], "excluded_hosts": [],
                 "links": []} for lab in OUT_OF_SAMPLE]
    cats = {h: list(c) for h, c in DESTINATIONS if c is not None}
    for lab in labels:
        cats[f"com.{lab}.mail"] = ["email"]
    return PortalCatalog.from_dict({"portals": portals, "categories": cats})


class _Rec:
    __slots__ = ("kind", "host", "arr", "dep", "pages", "label")

    def __init__(self, kind, host, arr, dep, pages):
        self.kind, self.host, self.arr, self.dep, self.pages = kind, host, arr, dep, pages
        self.label = None


def _skeleton(rng, cfg: SyntheticConfig, n_slots: int, email_host: str | None, p_portal_open: float):
    """Sessions of relative-time records; slot hosts are filled in later."""
    near, oos, far, end = np.cumsum(cfg.follow_probs)
    sessions = []
    count = 0
    emails = 0
    while count < n_slots:
        sess = []
        t = 0
        if rng.random() >= p_portal_open:
            d = int(rng.integers(5, 61))
            sess.append(_Rec("open", OPENER_HOST, 0, d, 1))
            t = d + int(rng.integers(0, 11))
        n_eps = int(rng.geometric(cfg.episodes_p))
        for e in range(n_eps):
            if count == n_slots:
                break
            vl = int(min(max(round(rng.lognormal(math.log(cfg.view_length_median), cfg.view_length_sigma)), 1),
                         cfg.max_view_length))
            sess.append(_Rec("slot", None, t, t + vl, 1 + int(rng.poisson(cfg.pages_mean))))
            count += 1
            t += vl
            u = rng.random()
            if u >= oos and u < far:
                kind = "far"
            elif u >= far:
                kind = "end"
            else:
                kind = "near" if u < near else "oos"
            if kind == "end":
                break
            if kind == "oos":
                t += int(rng.integers(0, 61))
                d = int(rng.integers(5, 121))
                host = f"com.{OUT_OF_SAMPLE[int(rng.integers(len(OUT_OF_SAMPLE)))]}"
                sess.append(_Rec("oos", host, t, t + d, 1 + int(rng.poisson(1.0))))
                t += d
            gap = int(rng.integers(301, 1201)) if kind == "far" else int(rng.integers(0, 121))
            if email_host is not None and rng.random() < cfg.p_email_destination:
                host = email_host
                emails += 1
            else:
                host = DESTINATIONS[int(rng.integers(len(DESTINATIONS)))][0]
            t += gap
            d = int(rng.integers(5, 601))
            sess.append(_Rec("dest", host, t, t + d, 1 + int(rng.poisson(2.0))))
            t += d
            t += int(min(rng.exponential(cfg.next_search_gap_mean), 1700))
        if any(r.kind == "slot" for r in sess):
            # drop trailing slack: the session ends at its last departure
            sessions.append(sess)
    return sessions, emails


def _place(rng, cfg: SyntheticConfig, sessions) -> None:
    """Shift sessions to absolute times inside the panel window, > 1800 s apart."""
    span = cfg.weeks * 7 * DAY
    lengths = [max(r.dep for r in s) for s in sessions]
    slack = span - sum(lengths) - 1801 * (len(sessions) - 1) - 1
    if slack < 0:
        raise ConfigurationError("too many occasions per household for the panel length")
    extra = np.floor(rng.dirichlet(np.ones(len(sessions) + 1)) * slack).astype(np.int64)
    t = cfg.start_ts + int(extra[0])
    for s, length, x in zip(sessions, lengths, extra[1:]):
        for r in s:
            r.arr += t
            r.dep += t
        t += length + 1801 + int(x)


def _annotate(sessions, categories, window):
    """Goal, narrow/broad failure and first-try flags for every portal record.

    Written independently of the features module as a cross-check.
    """
    portal_kinds = ("slot", "oos")
    flags = {}
    failed_departures = []
    for s in sessions:
        n = len(s)
        goal = [None] * n
        for i in range(n - 1, -1, -1):
            if s[i].kind not in portal_kinds or i + 1 >= n:
                continue
            nx = s[i + 1]
            if nx.arr - s[i].dep > window:
                continue
            goal[i] = goal[i + 1] if nx.kind in portal_kinds else categories.get(nx.host)
        for i in range(n):
            r = s[i]
            if r.kind not in portal_kinds:
                continue
            has_next = i + 1 < n
            near_next = has_next and s[i + 1].arr - r.dep <= window
            fail = near_next and s[i + 1].kind in portal_kinds
            if not fail and goal[i]:
                for m in range(i + 1, n):
                    if s[m].arr - r.dep > window:
                        break
                    if s[m].kind in portal_kinds and goal[m] and set(goal[i]) & set(goal[m]):
                        fail = True
                        break
            broad = fail or (not near_next and not (not has_next and i > 0))
            flags[id(r)] = [fail, broad, None]
    # first try follows the household's time order across sessions
    last_fail = None
    for s in sessions:
        for r in s:
            if r.kind not in portal_kinds:
                continue
            f = flags[id(r)]
            f[2] = last_fail is None or r.arr - last_fail > window
            if f[0]:
                last_fail = r.dep if last_fail is None else max(last_fail, r.dep)
    return flags


class _Exo:
    """Advertising by month and media flags by day for the in-sample portals."""

    def __init__(self, rng, cfg: SyntheticConfig, labels):
        self.start_day = cfg.start_ts - cfg.start_ts % DAY
        n_days = cfg.weeks * 7 + 1
        J = len(labels)
        first = dt.datetime.fromtimestamp(self.start_day, dt.timezone.utc).date()
        self.days = [first + dt.timedelta(days=d) for d in range(n_days)]
        months = sorted({d.strftime("%Y-%m") for d in self.days})
        self.months = {m: i for i, m in enumerate(months)}
        base = rng.uniform(0.5, 6.0, J) * 1e6
        self.dollars = np.round(base[None, :] * rng.uniform(0.5, 1.5, (len(months), J)))
        weeks = math.ceil(n_days / 7)
        high = rng.random((weeks, J)) < cfg.media_high_weeks
        prob = np.where(high, cfg.media_high, cfg.media_low)
        self.mentioned = (rng.random((n_days, J)) < np.repeat(prob, 7, axis=0)[:n_days]).astype(np.int64)
        self.month_of_day = np.array([self.months[d.strftime("%Y-%m")] for d in self.days])
        self.labels = labels

    def day_index(self, ts: int) -> int:
        return (ts - self.start_day) // DAY

    def advertising(self, ts: int) -> np.ndarray:
        return self.dollars[self.month_of_day[self.day_index(ts)]] / 1e6

    def media(self, ts: int) -> np.ndarray:
        d = self.day_index(ts)
        today = self.mentioned[d]
        return np.maximum(today, self.mentioned[d - 1]).astype(float) if d > 0 else today.astype(float)

    def series(self) -> ExogenousSeries:
        months = sorted(self.months, key=self.months.get)
        ads = {(lab, m): float(self.dollars[i, j]) for i, m in enumerate(months) for j, lab in enumerate(self.labels)}
        media = {(lab, d): int(self.mentioned[i, j]) for i, d in enumerate(self.days) for j, lab in enumerate(self.labels)}
        return ExogenousSeries(ads, media, (months[0], months[-1]), (self.days[0], self.days[-1]))


def _utility_weights(spec: ModelSpec, beta: dict, labels) -> dict:
    """Coefficients keyed by raw quantity, for the closed-form utility below."""
    unknown = set(beta) - set(spec.names)
    if unknown:
        raise ConfigurationError(f"true_beta names not in the spec: {sorted(unknown)}")
    if beta.get("start_page", 0.0) != 0.0:
        raise ConfigurationError("start_page is derived from realised choices; its true coefficient must be 0")
    J = len(labels)
    w = {"lags": np.zeros(0), "brand": np.zeros(J), "ft_brand": np.zeros(J)}
    lags = [v.lag for v in spec.variables if v.tag == "portsame_lag"]
    w["lags"] = np.zeros(max(lags, default=0))
    for v in spec.variables:
        b = float(beta.get(v.name, 0.0))
        if v.tag == "portsame_lag":
            w["lags"][v.lag - 1] = b
        elif v.tag == "brand_dummy":
            w["brand"][labels.index(v.alternative)] = b
        elif v.tag == "first_try_x_brand":
            w["ft_brand"][labels.index(v.alternative)] = b
        elif v.tag == "last_search_failed":
            w["failed_broad" if v.broad else "failed"] = b
        else:
            w[v.tag] = b
    return w


def _household_seed(seed: int, idx: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(idx,))


def generate_panel(config: SyntheticConfig) -> SyntheticPanel:
    """Simulate a panel; returns occasions, raw records, catalog, exogenous series and truth."""
    cfg = config
    cfg.validate()
    labels = list(cfg.labels)
    J = len(labels)
    alts = make_alternatives(labels)
    dgp_spec = variant_spec(cfg.variant, alts)
    beta = dict(recovery_beta(cfg.labels) if cfg.true_beta is None else cfg.true_beta)
    w = _utility_weights(dgp_spec, beta, labels)
    out_spec = superset_spec(alts, cfg.output_max_lag)
    extra = [v for v in dgp_spec.variables if v.name not in out_spec.names]
    if extra:
        out_spec = ModelSpec(out_spec.variables + tuple(extra))
    n_lags = max(cfg.output_max_lag, len(w["lags"]))

    catalog = build_catalog(labels)
    categories = {h: c for h, c in DESTINATIONS if c is not None}
    for lab in labels:
        categories[f"com.{lab}.mail"] = ("email",)
    links = np.array([[1.0 if catalog.is_linked(h, lab) else 0.0 for lab in labels] for h, _ in DESTINATIONS])
    link_row = {h: links[i] for i, (h, _) in enumerate(DESTINATIONS)}
    zero = np.zeros(J)
    exo = _Exo(np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2 ** 32 - 1,))), cfg, labels)

    a = cfg.alpha_true
    s_nested = nested_shock_scale(cfg.rho) if cfg.correlation_mode == "nested" else 0.0
    pair = [labels.index(x) for x in cfg.nested_pair] if cfg.correlation_mode == "nested" else []
    hh_width = max(5, len(str(cfg.n_households - 1)))

    cols = {k: [] for k in ("hh", "idx", "ts", "chosen", "loyalty", "portsame", "lvl", "pages", "failed",
                            "broad", "missing", "adv", "media", "email", "start", "link", "first_try")}
    records: dict[str, list[ClickRecord]] = {}
    for h in range(cfg.n_households):
        hh = f"hh{h:0{hh_width}d}"
        rng = np.random.default_rng(_household_seed(cfg.seed, h))
        if cfg.occasion_scheme == "fixed":
            T = cfg.occasions_per_household
        else:
            T = 2 + int(rng.geometric(1.0 / max(cfg.occasions_per_household - 1, 1.0))) - 1
        provider = int(rng.integers(J)) if rng.random() < cfg.p_email_household else None
        email_host = None if provider is None else f"com.{labels[provider]}.mail"
        p_open = float(rng.beta(2.0, 2.0))
        sessions, n_email = _skeleton(rng, cfg, T, email_host, p_open)
        if n_email == 0:
            provider = None
        _place(rng, cfg, sessions)
        flags = _annotate(sessions, categories, cfg.window_s)
        email_vec = zero.copy()
        if provider is not None:
            email_vec[provider] = 1.0

        loy = np.full(J, 1.0 / J)
        history: list[int] = []
        last = [None] * J
        t = 0
        first_row = len(cols["hh"])
        for s in sessions:
            for i, r in enumerate(s):
                if r.kind == "oos":
                    loy = a * loy
                    history.append(-1)
                    continue
                if r.kind != "slot":
                    continue
                fail, broad, ft = flags[id(r)]
                nxt = s[i + 1] if i + 1 < len(s) else None
                link = link_row.get(nxt.host, zero) if nxt is not None else zero
                ps = np.zeros((n_lags, J))
                for lag in range(1, min(n_lags, len(history)) + 1):
                    if history[-lag] >= 0:
                        ps[lag - 1, history[-lag]] = 1.0
                missing = np.array([1.0 if x is None else 0.0 for x in last])
                present = 1.0 - missing
                lvl = np.array([0.0 if x is None else x[0] for x in last])
                pg = np.array([0.0 if x is None else x[1] for x in last])
                lf = np.array([0.0 if x is None else x[2] for x in last])
                lfb = np.array([0.0 if x is None else x[3] for x in last])
                adv = exo.advertising(r.arr)
                med = exo.media(r.arr)
                ftv = 1.0 if ft else 0.0
                pl, pp = present * lvl, present * pg
                u = (w.get("loyalty", 0.0) * loy + w["lags"] @ ps[:len(w["lags"])]
                     + w.get("last_view_length", 0.0) * pl + w.get("last_view_length_sq", 0.0) * pl * pl
                     + w.get("last_pages", 0.0) * pp + w.get("last_pages_sq", 0.0) * pp * pp
                     + w.get("failed", 0.0) * present * lf + w.get("failed_broad", 0.0) * present * lfb
                     + w.get("missing_data", 0.0) * missing + w.get("advertising", 0.0) * adv
                     + w.get("media_mentions", 0.0) * med + w.get("media_x_loyalty", 0.0) * med * loy
                     + w.get("same_email", 0.0) * email_vec + w.get("link", 0.0) * link
                     + w.get("first_try", 0.0) * ftv + w["brand"] + ftv * w["ft_brand"])
                eps = gumbel(rng, J)
                if s_nested:
                    eps[pair] += s_nested * rng.standard_normal()
                j = int(np.argmax(u + eps))
                r.label = labels[j]
                t += 1
                cols["hh"].append(hh)
                cols["idx"].append(t)
                cols["ts"].append(r.arr)
                cols["chosen"].append(j)
                cols["loyalty"].append(loy)
                cols["portsame"].append(ps[:cfg.output_max_lag] if n_lags > cfg.output_max_lag else ps)
                cols["lvl"].append(pl)
                cols["pages"].append(pp)
                cols["failed"].append(present * lf)
                cols["broad"].append(present * lfb)
                cols["missing"].append(missing)
                cols["adv"].append(adv)
                cols["media"].append(med)
                cols["email"].append(email_vec)
                cols["link"].append(link)
                cols["first_try"].append(ftv)
                last[j] = (float(r.dep - r.arr), float(r.pages), 1.0 if fail else 0.0, 1.0 if broad else 0.0)
                loy = a * loy
                loy[j] += 1.0 - a
                history.append(j)
        # start page from realised session openers
        starts = [s[0].label for s in sessions if s[0].kind == "slot"]
        start_vec = zero.copy()
        if starts:
            counts = {lab: starts.count(lab) for lab in dict.fromkeys(starts)}
            best = max(counts, key=lambda lab: counts[lab])  # dict order = first occurrence breaks ties
            if counts[best] >= 0.5 * len(sessions):
                start_vec[labels.index(best)] = 1.0
        cols["start"].extend([start_vec] * (len(cols["hh"]) - first_row))
        records[hh] = _raw_records(hh, sessions, rng)

    n = len(cols["hh"])
    arr = lambda k: np.asarray(cols[k], dtype=float)
    block = FeatureBlock(
        loyalty=arr("loyalty"), portsame=np.stack(cols["portsame"]) if cfg.output_max_lag else np.zeros((n, 0, J)),
        last_view_length=arr("lvl"), last_pages=arr("pages"), last_failed=arr("failed"),
        last_failed_broad=arr("broad"), missing=arr("missing"), advertising=arr("adv"), media=arr("media"),
        same_email=arr("email"), start_page=arr("start"), link=arr("link"), first_try=arr("first_try"),
    )
    X = assemble_design(out_spec, block, alts)
    occ = OccasionSet(alts, out_spec, np.array(cols["hh"], dtype=object), np.array(cols["idx"]),
                      np.array(cols["ts"]), np.array(cols["chosen"]), X)
    truth = {
        "beta": {nm: float(beta.get(nm, 0.0)) for nm in dgp_spec.names},
        "spec": dgp_spec.to_dict(),
        "alpha": cfg.alpha_true,
        "rho": cfg.rho if cfg.correlation_mode == "nested" else 0.0,
        "correlation_mode": cfg.correlation_mode,
        "nested_pair": list(cfg.nested_pair) if cfg.correlation_mode == "nested" else None,
        "alternatives": labels,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }
    return SyntheticPanel(occ, truth, records, catalog, exo.series(), cfg)


def _raw_records(hh, sessions, rng) -> list[ClickRecord]:
    out = []
    for s in sessions:
        for r in s:
            if r.kind == "slot":
                host = f"com.{r.label}" if rng.random() < 0.7 else f"com.{r.label}.search"
            else:
                host = r.host
            out.append(ClickRecord(hh, int(r.arr), int(r.dep), host, int(r.pages)))
    return out


def brute_force_loglik(beta, occasions, max_cells: int = 10_000) -> float:
    """Reference log-likelihood by plain scalar arithmetic: no max
    subtraction, no compensated summation. Instances whose utilities reach
    700 in magnitude are rejected rather than overflowing."""
    occ = as_occasion_set(occasions)
    if occ.n * occ.J > max_cells:
        raise ConfigurationError(f"brute force is limited to {max_cells} occasion-alternatives")
    beta = [float(b) for b in beta]
    total = 0.0
    for i in range(occ.n):
        rows = occ.X[i].tolist()
        utils = []
        for row in rows:
            u = 0.0
            for x, b in zip(row, beta):
                u += x * b
            if not math.isfinite(u) or abs(u) >= 700:
                raise NumericalOverflowError(
                    f"utility {u!r} at household {occ.household[i]}, occasion {occ.index[i]} would overflow exp")
            utils.append(u)
        denom = 0.0
        for u in utils:
            denom += math.exp(u)
        total += math.log(math.exp(utils[int(occ.chosen[i])]) / denom)
    return total
