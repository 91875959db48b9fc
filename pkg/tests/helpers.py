"""Shared builders for tests (no package logic duplicated here)."""

import numpy as np

from portalchoice.model import FeatureBlock, assemble_design, make_alternatives, OccasionSet

LABELS8 = ["yahoo", "msn", "netscape", "excite", "aol", "altavista", "iwon", "lycos"]


def random_block(rng, n, J=8, lags=10):
    missing = (rng.random((n, J)) < 0.3).astype(float)
    present = 1 - missing
    ps = np.zeros((n, lags, J))
    picks = rng.integers(0, J + 1, size=(n, lags))  # J means out-of-sample
    for l in range(lags):
        for j in range(J):
            ps[:, l, j] = picks[:, l] == j
    return FeatureBlock(
        loyalty=rng.dirichlet(np.ones(J), size=n),
        portsame=ps,
        last_view_length=present * rng.uniform(0.1, 3.0, (n, J)),
        last_pages=present * rng.integers(1, 5, (n, J)),
        last_failed=present * (rng.random((n, J)) < 0.3),
        last_failed_broad=present * (rng.random((n, J)) < 0.5),
        missing=missing,
        advertising=rng.uniform(0, 2, (n, J)),
        media=(rng.random((n, J)) < 0.2).astype(float),
        same_email=(rng.random((n, J)) < 0.1).astype(float),
        start_page=(rng.random((n, J)) < 0.1).astype(float),
        link=(rng.random((n, J)) < 0.2).astype(float),
        first_try=(rng.random(n) < 0.7).astype(float),
    )


def random_occasions(rng, spec_factory, n=50, J=8, households=5):
    alts = make_alternatives(LABELS8[:J])
    spec = spec_factory(alts)
    X = assemble_design(spec, random_block(rng, n, J), alts)
    hh = np.array([f"h{i % households:02d}" for i in range(n)], dtype=object)
    idx = np.arange(n) // households + 1
    chosen = rng.integers(0, J, n)
    return OccasionSet(alts, spec, hh, idx, 946252800 + 60 * np.arange(n), chosen, X)


GOLDEN_DIR = __import__("pathlib").Path(__file__).parent / "data" / "golden"


def golden_inputs():
    """Catalog, alternatives, spec, records and exogenous series of the golden fixture."""
    from portalchoice.features import ExogenousSeries
    from portalchoice.ingest import PortalCatalog, parse_clickstream
    from portalchoice.model import ModelSpec, Variable as V

    brands = ["msn", "excite", "lycos"]
    spec = ModelSpec(tuple(
        [V("loyalty"), V("portsame_lag", lag=1), V("portsame_lag", lag=2), V("last_view_length"),
         V("last_view_length_sq"), V("last_pages"), V("last_pages_sq"), V("last_search_failed"),
         V("last_search_failed", broad=True), V("missing_data"), V("advertising"), V("media_mentions"),
         V("media_x_loyalty"), V("same_email"), V("link"), V("start_page"), V("first_try")]
        + [V("brand_dummy", b) for b in brands] + [V("first_try_x_brand", b) for b in brands]))
    return dict(
        catalog=PortalCatalog.load(GOLDEN_DIR / "catalog.json"),
        alternatives=make_alternatives(["yahoo"] + brands),
        spec=spec,
        records=parse_clickstream(GOLDEN_DIR / "clickstream.csv").records,
        exogenous=ExogenousSeries.load(GOLDEN_DIR / "advertising.csv", GOLDEN_DIR / "media.csv"),
    )
