"""Conditional logit core: domain types, model specs and the likelihood.

Utilities are ``X @ beta`` per alternative; choice probabilities are the
softmax over alternatives within an occasion. Everything here is pure and
immutable once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, DomainError

# Construction tags understood by ModelSpec.
TAGS = (
    "loyalty",
    "portsame_lag",
    "last_view_length",
    "last_view_length_sq",
    "last_pages",
    "last_pages_sq",
    "last_search_failed",
    "missing_data",
    "advertising",
    "media_mentions",
    "media_x_loyalty",
    "same_email",
    "link",
    "start_page",
    "first_try",
    "brand_dummy",
    "first_try_x_brand",
)
BRAND_TAGS = ("brand_dummy", "first_try_x_brand")


@dataclass(frozen=True)
class Alternative:
    id: int
    label: str
    is_base: bool = False


def make_alternatives(labels: Sequence[str], base: str | None = None) -> tuple[Alternative, ...]:
    """Dense alternatives in the given order; the base defaults to the first label."""
    labels = list(labels)
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"duplicate alternative labels: {labels}")
    if len(labels) < 2:
        raise ConfigurationError("need at least two alternatives")
    base = labels[0] if base is None else base
    if base not in labels:
        raise ConfigurationError(f"base alternative {base!r} not among {labels}")
    return tuple(Alternative(i, lab, lab == base) for i, lab in enumerate(labels))


def base_of(alternatives: Sequence[Alternative]) -> Alternative:
    bases = [a for a in alternatives if a.is_base]
    if len(bases) != 1:
        raise ConfigurationError("exactly one alternative must be the base")
    return bases[0]


def check_alternatives(alternatives: Sequence[Alternative]) -> None:
    if [a.id for a in alternatives] != list(range(len(alternatives))):
        raise ConfigurationError("alternative ids must be dense 0..J-1 in order")
    if len({a.label for a in alternatives}) != len(alternatives):
        raise ConfigurationError("alternative labels must be unique")
    base_of(alternatives)


@dataclass(frozen=True)
class Variable:
    """One model variable. ``alternative`` applies to brand tags, ``lag`` to
    ``portsame_lag``, ``broad`` to ``last_search_failed``."""

    tag: str
    alternative: str | None = None
    lag: int | None = None
    broad: bool = False

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ConfigurationError(f"unknown variable tag {self.tag!r}")
        if (self.tag in BRAND_TAGS) != (self.alternative is not None):
            raise ConfigurationError(f"{self.tag}: alternative given iff brand tag")
        if (self.tag == "portsame_lag") != (self.lag is not None):
            raise ConfigurationError(f"{self.tag}: lag given iff portsame_lag")
        if self.lag is not None and self.lag < 1:
            raise ConfigurationError("portsame lag must be >= 1")
        if self.broad and self.tag != "last_search_failed":
            raise ConfigurationError("broad applies only to last_search_failed")

    @property
    def name(self) -> str:
        if self.tag == "portsame_lag":
            return f"portsame_lag_{self.lag}"
        if self.tag == "brand_dummy":
            return f"brand_{self.alternative}"
        if self.tag == "first_try_x_brand":
            return f"first_try_x_{self.alternative}"
        if self.tag == "last_search_failed" and self.broad:
            return "last_search_failed_broad"
        return self.tag

    @property
    def brand_specific(self) -> bool:
        return self.tag in BRAND_TAGS

    def parents(self) -> tuple[str, ...]:
        """Names of variables this one is derived from (hierarchy rule)."""
        if self.tag == "last_view_length_sq":
            return ("last_view_length",)
        if self.tag == "last_pages_sq":
            return ("last_pages",)
        if self.tag == "media_x_loyalty":
            return ("media_mentions", "loyalty")
        if self.tag == "first_try_x_brand":
            # first_try itself is constant across alternatives, hence not
            # identified; only the brand dummy is a required parent.
            return (f"brand_{self.alternative}",)
        return ()

    def to_dict(self) -> dict:
        d: dict = {"tag": self.tag}
        if self.alternative is not None:
            d["alternative"] = self.alternative
        if self.lag is not None:
            d["lag"] = self.lag
        if self.broad:
            d["broad"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Variable":
        unknown = set(d) - {"tag", "alternative", "lag", "broad", "name"}
        if unknown:
            raise ConfigurationError(f"unknown variable fields {sorted(unknown)}")
        if "tag" not in d:
            raise ConfigurationError(f"variable entry without tag: {d}")
        return cls(d["tag"], d.get("alternative"), d.get("lag"), bool(d.get("broad", False)))


@dataclass(frozen=True)
class ModelSpec:
    variables: tuple[Variable, ...]
    variant_id: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        names = self.names
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate variables in spec: {names}")
        present = set(names)
        for v in self.variables:
            missing = [p for p in v.parents() if p not in present]
            if missing:
                raise ConfigurationError(f"{v.name} requires parent(s) {missing} in the spec")

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def __len__(self) -> int:
        return len(self.variables)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigurationError(f"variable {name!r} not in spec") from None

    def validate_for(self, alternatives: Sequence[Alternative]) -> None:
        labels = {a.label for a in alternatives}
        base = base_of(alternatives).label
        for v in self.variables:
            if v.brand_specific:
                if v.alternative not in labels:
                    raise ConfigurationError(f"{v.name}: unknown alternative {v.alternative!r}")
                if v.alternative == base:
                    raise ConfigurationError(f"{v.name}: base alternative takes no brand term")

    def children_of(self, name: str) -> list[int]:
        return [k for k, v in enumerate(self.variables) if name in v.parents()]

    def replace(self, old: str, new: Iterable[Variable]) -> "ModelSpec":
        out = []
        for v in self.variables:
            out.extend(new if v.name == old else [v])
        return ModelSpec(tuple(out), self.variant_id)

    def without(self, names: Iterable[str]) -> "ModelSpec":
        drop = set(names)
        return ModelSpec(tuple(v for v in self.variables if v.name not in drop), self.variant_id)

    def to_dict(self) -> dict:
        return {"variant_id": self.variant_id, "variables": [v.to_dict() for v in self.variables]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        if "variables" not in d:
            raise ConfigurationError("spec needs a 'variables' list")
        return cls(tuple(Variable.from_dict(x) for x in d["variables"]), d.get("variant_id"))


def variant_spec(variant: int, alternatives: Sequence[Alternative]) -> ModelSpec:
    """Preset specs for the nine model variants.

    1 basic; 2 adds same_email and link; 3 = 2 + pages and first-try x brand;
    4 = 2 + first-try x brand + start_page; 5 = 4 + media x loyalty; 6 all;
    7 = 2 with the broad failure definition; 8 = 2 with two portsame lags
    instead of loyalty; 9 = 2 with one lag.
    """
    if variant not in range(1, 10):
        raise ConfigurationError(f"variant must be 1..9, got {variant}")
    brands = [a.label for a in alternatives if not a.is_base]
    V = Variable
    core = [V("loyalty"), V("last_view_length"), V("last_view_length_sq"),
            V("last_search_failed"), V("missing_data"), V("advertising"),
            V("media_mentions")]
    dummies = [V("brand_dummy", b) for b in brands]
    first_try = [V("first_try_x_brand", b) for b in brands]
    pages = [V("last_pages"), V("last_pages_sq")]
    m2 = core + [V("same_email"), V("link")]
    if variant == 1:
        vs = core + dummies
    elif variant == 2:
        vs = m2 + dummies
    elif variant == 3:
        vs = m2 + pages + dummies + first_try
    elif variant == 4:
        vs = m2 + [V("start_page")] + dummies + first_try
    elif variant == 5:
        vs = m2 + [V("start_page"), V("media_x_loyalty")] + dummies + first_try
    elif variant == 6:
        vs = m2 + pages + [V("start_page"), V("media_x_loyalty")] + dummies + first_try
    elif variant == 7:
        vs = [V("last_search_failed", broad=True) if v.tag == "last_search_failed" else v
              for v in m2] + dummies
    else:
        lags = [V("portsame_lag", lag=1)] + ([V("portsame_lag", lag=2)] if variant == 8 else [])
        vs = lags + m2[1:] + dummies
    return ModelSpec(tuple(vs), variant)


def superset_spec(alternatives: Sequence[Alternative], max_lag: int = 10) -> ModelSpec:
    """Every variable any preset (or the alpha calibration) can ask for."""
    seen: dict[str, Variable] = {}
    for n in range(1, 10):
        for v in variant_spec(n, alternatives).variables:
            seen.setdefault(v.name, v)
    for lag in range(1, max_lag + 1):
        v = Variable("portsame_lag", lag=lag)
        seen.setdefault(v.name, v)
    return ModelSpec(tuple(seen.values()))


def restrict_alternatives(alternatives: Sequence[Alternative], spec: ModelSpec,
                          drop: str) -> tuple[tuple[Alternative, ...], ModelSpec]:
    """Alternatives and spec with ``drop`` removed.

    Ids are renumbered densely. Brand terms of the dropped alternative go; if
    it was the base, the first remaining alternative becomes the base and its
    own brand terms go as well.
    """
    labels = [a.label for a in alternatives]
    if drop not in labels:
        raise ConfigurationError(f"unknown alternative {drop!r}; expected one of {labels}")
    rest = [lab for lab in labels if lab != drop]
    base = base_of(alternatives).label
    new_base = rest[0] if base == drop else base
    gone = {drop, new_base}
    new_spec = ModelSpec(tuple(v for v in spec.variables
                               if not (v.brand_specific and v.alternative in gone)), spec.variant_id)
    return make_alternatives(rest, new_base), new_spec


@dataclass(frozen=True)
class FeatureBlock:
    """Raw per-occasion, per-alternative quantities from which any spec's
    design is assembled. Arrays are (n, J) unless noted; ``portsame`` is
    (n, L, J) and ``first_try`` is (n,). Lag quantities hold 0 where
    ``missing`` is 1."""

    loyalty: np.ndarray
    portsame: np.ndarray
    last_view_length: np.ndarray
    last_pages: np.ndarray
    last_failed: np.ndarray
    last_failed_broad: np.ndarray
    missing: np.ndarray
    advertising: np.ndarray
    media: np.ndarray
    same_email: np.ndarray
    start_page: np.ndarray
    link: np.ndarray
    first_try: np.ndarray


def assemble_design(spec: ModelSpec, block: FeatureBlock,
                    alternatives: Sequence[Alternative]) -> np.ndarray:
    """Build the (n, J, K) design for ``spec`` from raw quantities."""
    spec.validate_for(alternatives)
    n, J = block.loyalty.shape
    ids = {a.label: a.id for a in alternatives}
    present = 1.0 - block.missing
    cols = []
    for v in spec.variables:
        t = v.tag
        if t == "loyalty":
            c = block.loyalty
        elif t == "portsame_lag":
            if v.lag > block.portsame.shape[1]:
                raise ConfigurationError(f"{v.name}: only {block.portsame.shape[1]} lags built")
            c = block.portsame[:, v.lag - 1, :]
        elif t == "last_view_length":
            c = present * block.last_view_length
        elif t == "last_view_length_sq":
            c = present * block.last_view_length
            c = c * c
        elif t == "last_pages":
            c = present * block.last_pages
        elif t == "last_pages_sq":
            c = present * block.last_pages
            c = c * c
        elif t == "last_search_failed":
            c = present * (block.last_failed_broad if v.broad else block.last_failed)
        elif t == "missing_data":
            c = block.missing
        elif t == "advertising":
            c = block.advertising
        elif t == "media_mentions":
            c = block.media
        elif t == "media_x_loyalty":
            c = block.media * block.loyalty
        elif t == "same_email":
            c = block.same_email
        elif t == "link":
            c = block.link
        elif t == "start_page":
            c = block.start_page
        elif t == "first_try":
            c = np.repeat(block.first_try[:, None], J, axis=1)
        elif t == "brand_dummy":
            c = np.zeros((n, J))
            c[:, ids[v.alternative]] = 1.0
        else:  # first_try_x_brand
            c = np.zeros((n, J))
            c[:, ids[v.alternative]] = block.first_try
        cols.append(np.asarray(c, dtype=float))
    if not cols:
        return np.zeros((n, J, 0))
    # +0.0 folds negative zeros so files are byte-stable
    return np.stack(cols, axis=-1) + 0.0


def recompute_children(spec: ModelSpec, X: np.ndarray, alt: int | None = None) -> np.ndarray:
    """Recompute squared and interaction columns from their parents in place.

    Only alternative ``alt`` is touched when given. ``first_try_x_brand`` is
    recomputed only if ``first_try`` is itself a column.
    """
    names = spec.names
    sl = slice(None) if alt is None else alt
    for k, v in enumerate(spec.variables):
        ps = v.parents()
        if not ps:
            continue
        if v.tag in ("last_view_length_sq", "last_pages_sq"):
            p = X[:, sl, names.index(ps[0])]
            X[:, sl, k] = p * p
        elif v.tag == "media_x_loyalty":
            X[:, sl, k] = X[:, sl, names.index("media_mentions")] * X[:, sl, names.index("loyalty")]
        elif v.tag == "first_try_x_brand" and "first_try" in names:
            X[:, sl, k] = X[:, sl, names.index("first_try")] * X[:, sl, names.index(ps[0])]
    return X


@dataclass(frozen=True)
class ChoiceOccasion:
    household: str
    t: int
    timestamp: int
    chosen: int
    features: np.ndarray  # (J, K)

    def __post_init__(self):
        f = np.array(self.features, dtype=float)
        if f.ndim != 2:
            raise ConfigurationError("occasion features must be a (J, K) matrix")
        if not 0 <= int(self.chosen) < f.shape[0]:
            raise DataError(f"household {self.household} occasion {self.t}: "
                            f"chosen {self.chosen} outside 0..{f.shape[0] - 1}")
        f.setflags(write=False)
        object.__setattr__(self, "features", f)


@dataclass(frozen=True)
class OccasionSet:
    """A stack of occasions sharing alternatives and spec, in canonical
    (household, occasion index) order."""

    alternatives: tuple[Alternative, ...]
    spec: ModelSpec
    household: np.ndarray
    index: np.ndarray
    timestamp: np.ndarray
    chosen: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        check_alternatives(self.alternatives)
        self.spec.validate_for(self.alternatives)
        X = np.asarray(self.X, dtype=float)
        n = X.shape[0] if X.ndim == 3 else -1
        if X.ndim != 3 or X.shape[1] != len(self.alternatives) or X.shape[2] != len(self.spec):
            raise ConfigurationError(
                f"design shape {X.shape} does not match J={len(self.alternatives)}, K={len(self.spec)}")
        hh = np.asarray(self.household, dtype=object)
        idx = np.asarray(self.index, dtype=np.int64)
        ts = np.asarray(self.timestamp, dtype=np.int64)
        ch = np.asarray(self.chosen, dtype=np.int64)
        if not (len(hh) == len(idx) == len(ts) == len(ch) == n):
            raise ConfigurationError("occasion arrays differ in length")
        if n and (ch.min() < 0 or ch.max() >= X.shape[1]):
            raise DataError("chosen alternative outside 0..J-1")
        order = sorted(range(n), key=lambda i: (hh[i], idx[i]))
        if order != list(range(n)):
            o = np.array(order, dtype=np.int64)
            hh, idx, ts, ch, X = hh[o], idx[o], ts[o], ch[o], X[o]
        for name, a in (("household", hh), ("index", idx), ("timestamp", ts), ("chosen", ch), ("X", X)):
            if a.flags.writeable:
                a = a.copy()
                a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def J(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    def __iter__(self):
        for i in range(self.n):
            yield ChoiceOccasion(str(self.household[i]), int(self.index[i]),
                                 int(self.timestamp[i]), int(self.chosen[i]), self.X[i])

    def column(self, name: str) -> np.ndarray:
        return self.X[:, :, self.spec.index(name)]

    def subset(self, mask: np.ndarray) -> "OccasionSet":
        mask = np.asarray(mask)
        return OccasionSet(self.alternatives, self.spec, self.household[mask], self.index[mask],
                           self.timestamp[mask], self.chosen[mask], self.X[mask])

    def with_design(self, X: np.ndarray, spec: ModelSpec | None = None) -> "OccasionSet":
        return OccasionSet(self.alternatives, spec or self.spec, self.household, self.index,
                           self.timestamp, self.chosen, X)

    def select(self, spec: ModelSpec) -> "OccasionSet":
        """Keep the columns of ``spec`` (which must all be present)."""
        cols = [self.spec.index(nm) for nm in spec.names]
        return self.with_design(self.X[:, :, cols], spec)

    @classmethod
    def from_occasions(cls, occasions: Sequence[ChoiceOccasion], alternatives, spec) -> "OccasionSet":
        occasions = list(occasions)
        if not occasions:
            raise DomainError("empty occasion set")
        return cls(tuple(alternatives), spec,
                   np.array([o.household for o in occasions], dtype=object),
                   np.array([o.t for o in occasions]), np.array([o.timestamp for o in occasions]),
                   np.array([o.chosen for o in occasions]),
                   np.stack([o.features for o in occasions]))


@dataclass
class ChoiceModel:
    """A fitted conditional logit."""

    spec: ModelSpec
    alternatives: tuple[Alternative, ...]
    beta: np.ndarray
    covariance: np.ndarray
    log_likelihood: float
    n_obs: int
    alpha: float | None = None
    iterations: int = 0
    trace: list = field(default_factory=list)
    scaling: dict = field(default_factory=dict)
    fingerprint: str | None = None

    @property
    def n_params(self) -> int:
        return len(self.beta)

    @property
    def aic(self) -> float:
        return 2 * self.n_params - 2 * self.log_likelihood

    @property
    def bic(self) -> float:
        return self.n_params * math.log(self.n_obs) - 2 * self.log_likelihood

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def coef(self, name: str) -> float:
        return float(self.beta[self.spec.index(name)])

    def probabilities(self, occasions: "OccasionSet") -> np.ndarray:
        return probabilities(self.beta, occasions.select(self.spec).X)


def as_occasion_set(occasions) -> OccasionSet:
    if isinstance(occasions, OccasionSet):
        if occasions.n == 0:
            raise DomainError("empty occasion set")
        return occasions
    occasions = list(occasions)
    if not occasions:
        raise DomainError("empty occasion set")
    K = occasions[0].features.shape[1]
    J = occasions[0].features.shape[0]
    # Anonymous spec/alternatives for bare occasion lists.
    alts = make_alternatives([f"alt{j}" for j in range(J)])
    spec = _anonymous_spec(K)
    return OccasionSet.from_occasions(occasions, alts, spec)


def _anonymous_spec(K: int) -> ModelSpec:
    # Loyalty-style placeholders keep ModelSpec validation happy; names are
    # made unique through the lag field.
    return ModelSpec(tuple(Variable("portsame_lag", lag=k + 1) for k in range(K)))


def _check_inputs(beta, X, household=None, index=None) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or beta.shape[0] != X.shape[-1]:
        raise ConfigurationError(f"beta has length {beta.shape}, features have {X.shape[-1]} columns")
    if not np.all(np.isfinite(beta)):
        raise ConfigurationError("beta has non-finite entries")
    bad = ~np.isfinite(X)
    if bad.any():
        i = int(np.argwhere(bad)[0][0]) if X.ndim == 3 else 0
        where = "" if household is None else f" (household {household[i]}, occasion {index[i]})"
        raise DataError(f"non-finite feature value{where}")
    return beta


def utilities(beta, X: np.ndarray) -> np.ndarray:
    return X @ np.asarray(beta, dtype=float)


def probabilities(beta, X: np.ndarray) -> np.ndarray:
    """Softmax over the alternative axis with max-utility subtraction."""
    u = X @ beta
    u = u - u.max(axis=-1, keepdims=True)
    e = np.exp(u)
    return e / e.sum(axis=-1, keepdims=True)


def choice_probabilities(beta, occasion: ChoiceOccasion) -> np.ndarray:
    X = occasion.features
    beta = _check_inputs(beta, X[None], [occasion.household], [occasion.t])
    return probabilities(beta, X)


def _log_probs_chosen(beta, occ: OccasionSet) -> np.ndarray:
    u = occ.X @ beta
    m = u.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(u - m).sum(axis=1))
    return u[np.arange(occ.n), occ.chosen] - lse


def log_likelihood(beta, occasions) -> float:
    """Sum of chosen-alternative log probabilities.

    Terms are added in canonical (household, occasion) order with an exactly
    rounded sum, so the result does not depend on how the data was sharded.
    """
    occ = as_occasion_set(occasions)
    beta = _check_inputs(beta, occ.X, occ.household, occ.index)
    return math.fsum(_log_probs_chosen(beta, occ).tolist())


def score_and_hessian(beta, occasions) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient and Hessian of the log-likelihood.

    gradient = sum_t (x_chosen - xbar_t), Hessian = -sum_t sum_j P_j (x_j - xbar_t)(x_j - xbar_t)'
    with xbar_t the probability-weighted mean row.
    """
    occ = as_occasion_set(occasions)
    beta = _check_inputs(beta, occ.X, occ.household, occ.index)
    return _score_hessian(beta, occ.X, occ.chosen)


def _score_hessian(beta, X, chosen):
    P = probabilities(beta, X)
    # centre on the first row first so identical rows cancel exactly
    D = X - X[:, :1, :]
    D = D - np.einsum("nj,njk->nk", P, D)[:, None, :]
    g = D[np.arange(X.shape[0]), chosen].sum(axis=0)
    W = (np.sqrt(P)[:, :, None] * D).reshape(-1, X.shape[2])
    H = -(W.T @ W)
    H = 0.5 * (H + H.T)
    return g, H
