"""Market-response simulation with fixed coefficients.

Everything here holds the fitted beta fixed and ignores competitive response
and loyalty feedback: an edit changes today's features only, so simulated
gains are a static lower bound.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .model import ChoiceModel, OccasionSet, as_occasion_set, probabilities, recompute_children

TOTAL_USERS = 76.5e6
SECONDS_PER_MONTH = 365.25 / 12 * 86400


def _alt(model_or_occ, portal) -> int:
    for a in model_or_occ.alternatives:
        if a.label == portal or (isinstance(portal, (int, np.integer)) and a.id == portal):
            return a.id
    raise ConfigurationError(f"unknown portal {portal!r}")


def _var(spec, variable: str) -> int:
    if variable not in spec.names:
        raise ConfigurationError(f"variable {variable!r} not in the model spec")
    return spec.index(variable)


def _perturb(spec, row: np.ndarray, k: int, c: float) -> None:
    """Scale variable k of one alternative's row by c, children consistently."""
    row[k] *= c
    for ch in spec.children_of(spec.names[k]):
        tag = spec.variables[ch].tag
        row[ch] *= c * c if tag.endswith("_sq") else c


@dataclass
class Elasticity:
    portal: str
    variable: str
    elasticity: float
    analytic: float | None
    mean_value: float
    probability: float

    def row(self) -> dict:
        return {"portal": self.portal, "variable": self.variable, "elasticity": self.elasticity}


def elasticity_at_means(model: ChoiceModel, occasions: OccasionSet, variable: str, portal,
                        rel_change: float = 0.01, per_occasion: bool = False) -> Elasticity:
    """Arc elasticity of portal's choice probability to its own ``variable``.

    By default the model is evaluated at the mean occasion (feature means per
    alternative); ``per_occasion`` averages occasion-level elasticities
    instead. Squared and interaction children move with their parent.
    """
    occ = as_occasion_set(occasions).select(model.spec)
    spec, beta = model.spec, model.beta
    j, k = _alt(occ, portal), _var(spec, variable)
    c = 1.0 + rel_change
    xbar = occ.X.mean(axis=0)
    if xbar[j, k] == 0:
        raise DomainError(f"mean of {variable} for {occ.alternatives[j].label} is 0; the elasticity is "
                          f"undefined, simulate an absolute change with counterfactual_shares instead")
    P0 = probabilities(beta, xbar)[j]
    if per_occasion:
        X = occ.X.copy()
        base = probabilities(beta, X)[:, j]
        for i in range(occ.n):
            _perturb(spec, X[i, j], k, c)
        new = probabilities(beta, X)[:, j]
        e = float(np.mean((new - base) / base) / rel_change)
    else:
        x1 = xbar.copy()
        _perturb(spec, x1[j], k, c)
        P1 = probabilities(beta, x1)[j]
        e = float((P1 - P0) / P0 / rel_change)
    analytic = None
    if not spec.children_of(variable):
        analytic = float(beta[k] * xbar[j, k] * (1.0 - P0))
    return Elasticity(occ.alternatives[j].label, variable, e, analytic, float(xbar[j, k]), float(P0))


def elasticity_to_visits(elasticity: float, share: float, visits_per_user_month: float,
                         pct_change: float = 0.01, total_users: float = TOTAL_USERS) -> dict:
    """Monthly visit change implied by an elasticity.

    delta = elasticity * pct_change * share * total_users * visits_per_user_month,
    with pct_change as a fraction (0.01 is 1%). All factors are echoed.
    """
    for name, v in (("share", share), ("total_users", total_users), ("visits_per_user_month", visits_per_user_month)):
        if not v > 0:
            raise ConfigurationError(f"{name} must be positive")
    if not np.isfinite(pct_change) or not np.isfinite(elasticity):
        raise ConfigurationError("elasticity and pct_change must be finite")
    delta = elasticity * pct_change * share * total_users * visits_per_user_month
    return {"elasticity": elasticity, "pct_change": pct_change, "share": share, "total_users": total_users,
            "visits_per_user_month": visits_per_user_month, "delta_visits": delta}


def estimate_visits_per_user_month(occasions: OccasionSet) -> float:
    """Occasions per household per month over the panel's time span."""
    occ = as_occasion_set(occasions)
    span = float(occ.timestamp.max() - occ.timestamp.min())
    months = max(span / SECONDS_PER_MONTH, 1.0 / 30.4375)
    return occ.n / len(set(occ.household.tolist())) / months


# ------------------------------------------------------------ counterfactuals

@dataclass(frozen=True)
class Edit:
    """One data edit: ``copy`` portal ``source``'s values, ``scale`` by
    ``factor`` or ``set`` to ``value``, for ``variable`` of ``portal``."""

    op: str
    variable: str
    portal: str
    source: str | None = None
    factor: float | None = None
    value: float | None = None

    def __post_init__(self):
        need = {"copy": "source", "scale": "factor", "set": "value"}
        if self.op not in need:
            raise ConfigurationError(f"edit op must be one of {sorted(need)}, got {self.op!r}")
        if getattr(self, need[self.op]) is None:
            raise ConfigurationError(f"{self.op} edit needs '{need[self.op]}'")

    @classmethod
    def from_dict(cls, d: Mapping) -> "Edit":
        unknown = set(d) - {"op", "variable", "portal", "source", "factor", "value"}
        if unknown:
            raise ConfigurationError(f"unknown edit fields {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(f"bad edit {dict(d)}: {exc}") from None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def load_edits(path) -> list[Edit]:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    items = d if isinstance(d, list) else d.get("edits", [d])
    return [Edit.from_dict(x) for x in items]


def apply_edits(model: ChoiceModel, occasions: OccasionSet, edits: Iterable[Edit]) -> np.ndarray:
    """Edited copy of the design (children recomputed for every edited portal)."""
    occ = as_occasion_set(occasions).select(model.spec)
    spec = model.spec
    X = occ.X.copy()
    for e in edits:
        j, k = _alt(occ, e.portal), _var(spec, e.variable)
        if spec.variables[k].parents():
            raise ConfigurationError(f"{e.variable} is derived from {spec.variables[k].parents()}; edit its parent")
        if e.op == "copy":
            X[:, j, k] = X[:, _alt(occ, e.source), k]
        elif e.op == "scale":
            X[:, j, k] *= e.factor
        else:
            X[:, j, k] = e.value
        recompute_children(spec, X, j)
    return X


@dataclass
class Counterfactual:
    portals: list[str]
    baseline: np.ndarray
    edited: np.ndarray
    n_occasions: int
    visits_per_user_month: float
    total_users: float
    edits: list[Edit] = field(default_factory=list)
    static: bool = True  # no loyalty feedback or competitive response: a lower bound

    @property
    def delta_share(self) -> np.ndarray:
        return self.edited - self.baseline

    @property
    def delta_visits_panel(self) -> np.ndarray:
        return self.delta_share * self.n_occasions

    @property
    def delta_visits_month(self) -> np.ndarray:
        return self.delta_share * self.total_users * self.visits_per_user_month

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["portal", "variable", "baseline_share", "edited_share", "delta_share",
                        "delta_visits_panel", "delta_visits", "total_users", "visits_per_user_month",
                        "static_no_loyalty_feedback"])
            variables = ";".join(sorted({e.variable for e in self.edits}))
            for i, p in enumerate(self.portals):
                w.writerow([p, variables, repr(float(self.baseline[i])), repr(float(self.edited[i])),
                            repr(float(self.delta_share[i])), repr(float(self.delta_visits_panel[i])),
                            repr(float(self.delta_visits_month[i])), repr(self.total_users),
                            repr(self.visits_per_user_month), "true"])


def counterfactual_shares(model: ChoiceModel, occasions: OccasionSet, edits: Edit | Sequence[Edit],
                          total_users: float = TOTAL_USERS,
                          visits_per_user_month: float | None = None) -> Counterfactual:
    """Aggregate shares before and after editing the features, beta fixed."""
    edits = [edits] if isinstance(edits, Edit) else list(edits)
    occ = as_occasion_set(occasions).select(model.spec)
    base = probabilities(model.beta, occ.X).mean(axis=0)
    new = probabilities(model.beta, apply_edits(model, occ, edits)).mean(axis=0)
    vpm = estimate_visits_per_user_month(occ) if visits_per_user_month is None else visits_per_user_month
    return Counterfactual([a.label for a in occ.alternatives], base, new, occ.n, vpm, total_users, edits)


def write_elasticities(rows: Sequence[Elasticity], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["portal", "variable", "elasticity", "analytic", "mean_value", "probability"])
        for r in rows:
            w.writerow([r.portal, r.variable, repr(r.elasticity), "" if r.analytic is None else repr(r.analytic),
                        repr(r.mean_value), repr(r.probability)])
