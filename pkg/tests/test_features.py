import dataclasses
import filecmp

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import GOLDEN_DIR, golden_inputs
from portalchoice.errors import ConfigurationError, DataError
from portalchoice.features import (
    ExogenousSeries, LoyaltyState, annotate_failures, annotate_first_try, annotate_goals,
    derive_email_provider, derive_start_page, featurize, read_occasions, update_loyalty, write_occasions,
)
from portalchoice.ingest import ClickRecord, PortalCatalog, classify_portal_visits, sessionize

CAT = PortalCatalog.from_dict({
    "portals": [
        {"label": "yahoo", "portal_hosts": ["com.yahoo"], "email_hosts": ["com.yahoo.mail"]},
        {"label": "msn", "portal_hosts": ["com.msn"], "email_hosts": ["com.hotmail"]},
        {"label": "excite", "portal_hosts": ["com.excite"]},
        {"label": "lycos", "portal_hosts": ["com.lycos"]},
    ],
    "categories": {"com.cnn": ["news"], "com.mp3": ["music"]},
})


def visits_of(rows):
    """rows: (host, arrival, departure) in one household."""
    recs = [ClickRecord("h", a, d, host, 1) for host, a, d in rows]
    return classify_portal_visits(sessionize(recs), CAT).get("h", [])


def annotate(rows, window=300):
    vs = visits_of(rows)
    goals = annotate_goals(vs, CAT, window)
    narrow = annotate_failures(vs, goals, window)
    broad = annotate_failures(vs, goals, window, broad=True)
    return vs, goals, narrow, broad, annotate_first_try(vs, narrow, window)


class TestHouseholdConstants:
    def recs(self, hosts):
        return [ClickRecord("h", 100 * i, 100 * i + 10, h, 1) for i, h in enumerate(hosts)]

    def test_email_majority(self):
        assert derive_email_provider(self.recs(["com.yahoo.mail"] * 5 + ["com.hotmail"] * 2), CAT) == "yahoo"

    def test_email_none(self):
        assert derive_email_provider(self.recs(["com.cnn", "com.yahoo"]), CAT) is None

    def test_email_tie_first_use(self):
        hosts = ["com.hotmail", "com.yahoo.mail", "com.yahoo.mail", "com.hotmail", "com.yahoo.mail", "com.hotmail"]
        assert derive_email_provider(self.recs(hosts), CAT) == "msn"

    def sessions(self, openers):
        recs = [ClickRecord("h", 5000 * i, 5000 * i + 10, h, 1) for i, h in enumerate(openers)]
        return sessionize(recs)

    def test_start_page_boundary_inclusive(self):
        s = self.sessions(["com.yahoo"] * 5 + ["com.cnn"] * 5)
        assert len(s) == 10 and derive_start_page(s, CAT) == "yahoo"

    def test_start_page_below(self):
        assert derive_start_page(self.sessions(["com.yahoo"] * 4 + ["com.cnn"] * 6), CAT) is None

    def test_start_page_non_portal(self):
        assert derive_start_page(self.sessions(["com.cnn"] * 3), CAT) is None


class TestGoals:
    def test_next_site_category(self):
        _, goals, *_ = annotate([("com.yahoo", 0, 10), ("com.cnn", 70, 90)])
        assert goals == [frozenset({"news"})]

    def test_inheritance(self):
        _, goals, *_ = annotate([("com.yahoo", 0, 10), ("com.excite", 30, 40), ("com.mp3", 70, 90)])
        assert goals == [frozenset({"music"})] * 2

    def test_window(self):
        _, goals, *_ = annotate([("com.yahoo", 0, 10), ("com.cnn", 410, 420)])
        assert goals == [None]

    def test_uncategorized(self):
        _, goals, *_ = annotate([("com.yahoo", 0, 10), ("com.unknown", 20, 30)])
        assert goals == [None]


class TestFailures:
    def test_rule_a(self):
        _, _, narrow, _, _ = annotate([("com.yahoo", 0, 10), ("com.excite", 110, 120), ("com.cnn", 130, 140)])
        assert narrow == [True, False]

    def test_rule_b(self):
        rows = [("com.yahoo", 0, 100), ("com.mp3", 110, 150), ("com.cnn", 160, 300),
                ("com.lycos", 350, 380), ("com.mp3", 390, 400)]
        _, goals, narrow, _, _ = annotate(rows)
        assert goals == [frozenset({"music"})] * 2
        assert narrow == [True, False]

    def test_rule_b_needs_shared_goal(self):
        rows = [("com.yahoo", 0, 100), ("com.mp3", 110, 150), ("com.lycos", 350, 380), ("com.cnn", 390, 400)]
        assert annotate(rows)[2] == [False, False]

    def test_isolated_visit(self):
        _, _, narrow, broad, _ = annotate([("com.yahoo", 0, 10)])
        assert narrow == [False] and broad == [True]

    def test_session_ending_return_not_broad(self):
        _, _, narrow, broad, _ = annotate([("com.cnn", 0, 10), ("com.yahoo", 20, 30)])
        assert narrow == [False] and broad == [False]

    def test_window_parameter(self):
        rows = [("com.yahoo", 0, 10), ("com.excite", 250, 260), ("com.cnn", 270, 280)]
        assert annotate(rows, window=300)[2][0] is True
        assert annotate(rows, window=180)[2][0] is False


class TestFirstTry:
    def test_chain_of_two(self):
        assert annotate([("com.yahoo", 0, 10), ("com.excite", 20, 30), ("com.cnn", 40, 50)])[4] == [True, False]

    def test_independent(self):
        rows = [("com.yahoo", 0, 10), ("com.cnn", 20, 30), ("com.excite", 630, 640), ("com.cnn", 650, 660)]
        assert annotate(rows)[4] == [True, True]

    def test_chain_of_three(self):
        rows = [("com.yahoo", 0, 10), ("com.excite", 20, 30), ("com.lycos", 40, 50), ("com.cnn", 60, 70)]
        vs, _, narrow, _, ft = annotate(rows)
        assert narrow == [True, True, False] and ft == [True, False, False]


class TestLoyalty:
    def test_single_step(self):
        s = update_loyalty(LoyaltyState(0.7782, (0.5, 0.1)), 0)
        assert s.values[0] == 0.6109

    def test_fixed_point(self):
        assert update_loyalty(LoyaltyState(0.7782, (1.0, 0.0)), 0).values == (1.0, 0.0)

    def test_out_of_sample_decay(self):
        s0 = LoyaltyState(0.7782, (0.2, 0.3, 0.5))
        s1 = update_loyalty(s0, None)
        assert s1.values == tuple(0.7782 * v for v in s0.values)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
    def test_alpha_range(self, alpha):
        with pytest.raises(ConfigurationError):
            LoyaltyState.initial(alpha, 3)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 0.99), st.floats(0, 1), st.integers(0, 60))
    def test_telescoping(self, alpha, l0, n):
        s = LoyaltyState(alpha, (l0, 1 - l0))
        for _ in range(n):
            s = update_loyalty(s, 0)
        assert abs(s.values[0] - (alpha ** n * l0 + 1 - alpha ** n)) <= 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.01, 0.99), st.lists(st.integers(-1, 3), max_size=80))
    def test_bounded(self, alpha, choices):
        s = LoyaltyState.initial(alpha, 4)
        for c in choices:
            s = update_loyalty(s, c)
            assert all(0.0 <= v <= 1.0 for v in s.values)
            assert sum(s.values) <= 1.0 + 1e-12


class TestExogenous:
    def test_lookups(self):
        g = golden_inputs()["exogenous"]
        jan3 = 946893600
        assert g.advertising_for("lycos", jan3) == 0.25
        assert g.advertising_for("excite", jan3) == 0.0  # no row in a covered month
        assert g.media_for("yahoo", jan3 + 86400) == 1.0  # mentioned the day before
        assert g.media_for("yahoo", 946288800) == 1.0
        assert g.media_for("msn", 946288800) == 0.0

    def test_outside_coverage(self):
        g = golden_inputs()["exogenous"]
        with pytest.raises(DataError, match="2000-02"):
            g.advertising_for("yahoo", 949400000)
        with pytest.raises(DataError, match="2000-01-11"):
            g.media_for("yahoo", 947600000)

    def test_roundtrip(self, tmp_path):
        g = golden_inputs()["exogenous"]
        g.dump(tmp_path / "a.csv", tmp_path / "m.csv")
        h = ExogenousSeries.load(tmp_path / "a.csv", tmp_path / "m.csv")
        assert (h.advertising, h.media, h.ad_range, h.media_range) == (g.advertising, g.media, g.ad_range, g.media_range)

    def test_negative_advertising(self, tmp_path):
        (tmp_path / "a.csv").write_text("portal,year_month,dollars\nyahoo,2000-01,-5\n")
        (tmp_path / "m.csv").write_text("portal,date,mentioned\n")
        with pytest.raises(DataError):
            ExogenousSeries.load(tmp_path / "a.csv", tmp_path / "m.csv")


def golden_result(**kw):
    g = golden_inputs()
    return featurize(g["records"], g["catalog"], g["alternatives"], g["exogenous"], g["spec"], alpha=0.5, **kw)


class TestOccasions:
    def test_golden_file(self, tmp_path):
        res = golden_result()
        assert res.dropped_households == ["g6"]
        write_occasions(res.occasions, tmp_path / "occ.csv")
        assert filecmp.cmp(tmp_path / "occ.csv", GOLDEN_DIR / "expected_occasions.csv", shallow=False)

    def test_first_occasion_all_missing(self):
        occ = golden_result().occasions
        first = occ.index == 1
        assert np.all(occ.column("missing_data")[first] == 1)
        for name in ("last_view_length", "last_pages", "last_search_failed"):
            assert np.all(occ.column(name)[first] == 0)

    def test_view_length_after_120s_visit(self):
        occ = golden_result().occasions
        i = np.flatnonzero((occ.household == "g4") & (occ.index == 2))[0]
        excite = 2
        assert occ.column("last_view_length")[i, excite] == 120
        assert occ.column("last_view_length_sq")[i, excite] == 14400
        assert occ.column("last_pages")[i, excite] == 3

    def test_missing_interaction(self):
        occ = golden_result().occasions
        miss = occ.column("missing_data") == 1
        for name in ("last_view_length", "last_view_length_sq", "last_pages", "last_pages_sq",
                     "last_search_failed", "last_search_failed_broad"):
            assert np.all(occ.column(name)[miss] == 0)

    def test_sample_scope_ignores_out_of_sample(self):
        occ = golden_result(loyalty_scope="sample").occasions
        i = np.flatnonzero((occ.household == "g2") & (occ.index == 2))[0]
        assert occ.column("loyalty")[i].tolist() == [0.125, 0.625, 0.125, 0.125]
        assert occ.column("portsame_lag_1")[i].tolist() == [0.0, 1.0, 0.0, 0.0]

    def test_deterministic_files(self, tmp_path):
        write_occasions(golden_result().occasions, tmp_path / "a.csv")
        write_occasions(golden_result().occasions, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_read_back(self, tmp_path):
        occ = golden_result().occasions
        write_occasions(occ, tmp_path / "o.csv", {"alpha": 0.5})
        back, meta = read_occasions(tmp_path / "o.csv")
        assert meta["alpha"] == 0.5
        assert np.array_equal(back.X, occ.X) and np.array_equal(back.chosen, occ.chosen)
        assert list(back.household) == list(occ.household) and back.alternatives == occ.alternatives

    def test_read_rejects_two_chosen(self, tmp_path):
        occ = golden_result().occasions
        write_occasions(occ, tmp_path / "o.csv")
        lines = (tmp_path / "o.csv").read_text().splitlines()
        parts = lines[2].split(",")
        parts[4] = "1"
        lines[2] = ",".join(parts)
        (tmp_path / "o.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError):
            read_occasions(tmp_path / "o.csv")

    def test_outside_coverage_is_data_error(self):
        g = golden_inputs()
        late = {"z": [ClickRecord("z", t, t + 5, "com.yahoo", 1) for t in (960000000, 960000100)]}
        with pytest.raises(DataError):
            featurize(late, g["catalog"], g["alternatives"], g["exogenous"], g["spec"])

    def test_causality(self):
        """Swapping which portals a household visits from occasion t onward
        leaves every earlier-built feature of occasions 1..t unchanged
        (start page and link are the documented exceptions)."""
        g = golden_inputs()
        base = golden_result().occasions
        skip = {base.spec.index(n) for n in ("start_page", "link")}
        keep = [k for k in range(len(base.spec)) if k not in skip]
        swaps = [("com.msn", "com.excite"), ("com.yahoo", "com.lycos"), ("com.excite", "com.lycos")]
        checked = 0
        for hh in ("g1", "g2", "g3", "g4", "g5"):
            rows = np.flatnonzero(base.household == hh)
            for i in rows:
                t_ts = int(base.timestamp[i])
                for a, b in swaps:
                    swap = {a: b, b: a}
                    recs = dict(g["records"])
                    recs[hh] = [dataclasses.replace(r, host=swap.get(r.host, r.host)) if r.arrival_ts >= t_ts else r
                                for r in g["records"][hh]]
                    alt = featurize(recs, g["catalog"], g["alternatives"], g["exogenous"], g["spec"], alpha=0.5,
                                    households=[hh]).occasions
                    if alt.n != len(rows):
                        continue  # the swap merged or split visits
                    upto = rows[rows <= i] - rows[0]
                    assert np.array_equal(alt.X[upto][:, :, keep], base.X[rows[rows <= i]][:, :, keep])
                    checked += 1
        assert checked > 40
