"""IIA specification test and holdout weekly share prediction."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ConfigurationError, DomainError
from .estimate import fit_mle
from .model import BRAND_TAGS, ChoiceModel, OccasionSet, as_occasion_set, restrict_alternatives

EIG_FLOOR = 1e-10
WEEK_S = 7 * 86400


@dataclass
class HausmanResult:
    dropped: str
    chi2: float
    df: int
    p_value: float
    names: list[str]
    n_full: int
    n_restricted: int
    restricted_model: ChoiceModel | None = None

    def row(self) -> dict:
        return {"dropped": self.dropped, "chi2": self.chi2, "df": self.df, "p_value": self.p_value,
                "n_full": self.n_full, "n_restricted": self.n_restricted}


def hausman_statistic(b_full, V_full, b_restricted, V_restricted) -> tuple[float, int]:
    """q' (V_r - V_f)^+ q with q = b_r - b_f.

    The difference matrix is whitened by the Cholesky factor of V_f first, so
    the eigenvalue floor is dimensionless and the statistic does not depend
    on the units of any column. Eigenvalues at or below the floor (including
    negative ones) are dropped; df is the number kept.
    """
    q = np.asarray(b_restricted, float) - np.asarray(b_full, float)
    Vf = np.asarray(V_full, float)
    Vr = np.asarray(V_restricted, float)
    if q.size == 0:
        return 0.0, 0
    L = np.linalg.cholesky(0.5 * (Vf + Vf.T))
    qt = np.linalg.solve(L, q)
    A = np.linalg.solve(L, np.linalg.solve(L, Vr).T).T  # L^-1 Vr L^-T
    A = 0.5 * (A + A.T) - np.eye(len(q))
    w, U = np.linalg.eigh(A)
    keep = w > EIG_FLOOR
    z = U[:, keep].T @ qt
    return float(np.sum(z * z / w[keep])), int(keep.sum())


def _alt_id(alternatives, dropped) -> int:
    for a in alternatives:
        if a.label == dropped or (isinstance(dropped, (int, np.integer)) and a.id == dropped):
            return a.id
    raise ConfigurationError(f"unknown alternative {dropped!r}; expected one of {[a.label for a in alternatives]}")


def drop_alternative(occasions: OccasionSet, dropped) -> OccasionSet:
    """Occasions without alternative ``dropped``; occasions that chose it are discarded."""
    occ = as_occasion_set(occasions)
    j = _alt_id(occ.alternatives, dropped)
    label = occ.alternatives[j].label
    alts, spec = restrict_alternatives(occ.alternatives, occ.spec, label)
    keep = occ.chosen != j
    if not keep.any():
        raise DomainError(f"every occasion chose {label}; nothing left after dropping it")
    others = [k for k in range(occ.J) if k != j]
    cols = [occ.spec.index(n) for n in spec.names]
    X = occ.X[keep][:, others][:, :, cols]
    chosen = occ.chosen[keep]
    chosen = chosen - (chosen > j)
    return OccasionSet(alts, spec, occ.household[keep], occ.index[keep], occ.timestamp[keep], chosen, X)


def hausman_iia_test(full_model: ChoiceModel, occasions: OccasionSet, dropped,
                     restricted_occasions: OccasionSet | None = None, threads: int | None = None) -> HausmanResult:
    """Drop one alternative, refit, and compare the common non-brand coefficients.

    ``restricted_occasions`` may carry features re-derived without the dropped
    portal; by default the full-choice-set features are reused.
    """
    occ = as_occasion_set(occasions).select(full_model.spec)
    j = _alt_id(occ.alternatives, dropped)
    label = occ.alternatives[j].label
    if restricted_occasions is None:
        restricted = drop_alternative(occ, j)
    else:
        restricted = as_occasion_set(restricted_occasions)
        if label in [a.label for a in restricted.alternatives]:
            raise ConfigurationError(f"restricted occasions still contain {label}")
        _, spec_r = restrict_alternatives(occ.alternatives, occ.spec, label)
        restricted = restricted.select(spec_r)
    model_r = fit_mle(restricted, threads=threads)
    names = [v.name for v in model_r.spec.variables
             if v.tag not in BRAND_TAGS and v.name in full_model.spec.names]
    fi = [full_model.spec.index(n) for n in names]
    ri = [model_r.spec.index(n) for n in names]
    chi2, df = hausman_statistic(full_model.beta[fi], full_model.covariance[np.ix_(fi, fi)],
                                 model_r.beta[ri], model_r.covariance[np.ix_(ri, ri)])
    p = 1.0 if df == 0 else float(stats.chi2.sf(chi2, df))
    return HausmanResult(label, chi2, df, p, names, occ.n, restricted.n, model_r)


# ----------------------------------------------------------- weekly shares

@dataclass
class ShareRow:
    portal: str
    week: int
    week_start: str
    predicted: float | None
    actual: float | None
    n: int


@dataclass
class WeeklyShares:
    rows: list[ShareRow]
    portals: list[str]
    n_weeks: int
    anchor: int

    def series(self, portal: str) -> tuple[list, list, list]:
        rs = [r for r in self.rows if r.portal == portal]
        return [r.predicted for r in rs], [r.actual for r in rs], [r.n for r in rs]

    def mean_absolute_error(self) -> dict[str, float]:
        out = {}
        for p in self.portals:
            pred, act, n = self.series(p)
            errs = [abs(a - b) for a, b, m in zip(pred, act, n) if m > 0]
            out[p] = sum(errs) / len(errs) if errs else math.nan
        return out

    def sign_agreement(self) -> float:
        """Share of week-to-week changes where predicted and actual move the same way.

        Consecutive non-empty weeks only; pairs with no actual change are skipped.
        """
        hits = total = 0
        for p in self.portals:
            pred, act, n = self.series(p)
            for w in range(1, self.n_weeks):
                if n[w] == 0 or n[w - 1] == 0:
                    continue
                da, dp = act[w] - act[w - 1], pred[w] - pred[w - 1]
                if da == 0:
                    continue
                total += 1
                hits += (da > 0) == (dp > 0) and dp != 0
        return hits / total if total else math.nan

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["portal", "week_start", "predicted_share", "actual_share", "n"])
            for r in self.rows:
                w.writerow([r.portal, r.week_start, "" if r.predicted is None else repr(r.predicted),
                            "" if r.actual is None else repr(r.actual), r.n])


def predict_weekly_shares(model: ChoiceModel, occasions: OccasionSet, week_length_days: int = 7,
                          anchor: int | None = None, n_weeks: int | None = None) -> WeeklyShares:
    """Mean predicted probability vs observed choice share per portal and week.

    Weeks are consecutive bins starting at ``anchor`` (default: the earliest
    occasion). Weeks without occasions are reported with n = 0 and no shares.
    """
    occ = as_occasion_set(occasions)
    if week_length_days <= 0:
        raise ConfigurationError("week length must be positive")
    if [a.label for a in occ.alternatives] != [a.label for a in model.alternatives]:
        raise ConfigurationError("occasions and model have different alternatives")
    P = model.probabilities(occ)
    span = week_length_days * 86400
    anchor = int(occ.timestamp.min()) if anchor is None else int(anchor)
    week = (occ.timestamp - anchor) // span
    if week.min() < 0:
        raise ConfigurationError("anchor lies after some occasions")
    n_weeks = int(week.max()) + 1 if n_weeks is None else int(n_weeks)
    rows = []
    labels = [a.label for a in occ.alternatives]
    for j, lab in enumerate(labels):
        for w in range(n_weeks):
            m = week == w
            cnt = int(m.sum())
            start = dt.datetime.fromtimestamp(anchor + w * span, dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
            if cnt == 0:
                rows.append(ShareRow(lab, w, start, None, None, 0))
            else:
                rows.append(ShareRow(lab, w, start, float(P[m, j].mean()), float((occ.chosen[m] == j).mean()), cnt))
    return WeeklyShares(rows, labels, n_weeks, anchor)


# -------------------------------------------------------------------- SVG

def share_chart_svg(shares: WeeklyShares, portal: str, width: int = 560, height: int = 300) -> str:
    """Line chart of predicted vs actual weekly share for one portal."""
    pred, act, n = shares.series(portal)
    pts = [(w, p, a) for w, (p, a, m) in enumerate(zip(pred, act, n)) if m > 0]
    left, right, top, bottom = 56, 16, 28, 40
    pw, ph = width - left - right, height - top - bottom
    vals = [v for _, p, a in pts for v in (p, a)]
    ymax = max(vals) if vals else 1.0
    ymax = max(0.05, math.ceil(ymax * 1.1 * 20) / 20)
    nx = max(shares.n_weeks - 1, 1)
    X = lambda w: left + pw * w / nx
    Y = lambda v: top + ph * (1 - v / ymax)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left}" y="16" font-size="13">{_esc(portal)}: weekly share, predicted vs actual</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for i in range(5):
        v = ymax * i / 4
        out.append(f'<text x="{left - 6}" y="{Y(v) + 4:.1f}" text-anchor="end">{v:.3f}</text>')
        out.append(f'<line x1="{left}" y1="{Y(v):.1f}" x2="{left + pw}" y2="{Y(v):.1f}" stroke="#ddd"/>')
    for w in range(shares.n_weeks):
        out.append(f'<text x="{X(w):.1f}" y="{top + ph + 16}" text-anchor="middle">{w + 1}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 6}" text-anchor="middle">week</text>')
    for idx, colour, dash in ((1, "#1f77b4", ""), (2, "#d62728", ' stroke-dasharray="5,3"')):
        if pts:
            path = " ".join(f"{X(p[0]):.1f},{Y(p[idx]):.1f}" for p in pts)
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="2"{dash} points="{path}"/>')
    out.append(f'<text x="{left + pw - 120}" y="{top + 12}" fill="#1f77b4">predicted</text>')
    out.append(f'<text x="{left + pw - 55}" y="{top + 12}" fill="#d62728">actual</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
