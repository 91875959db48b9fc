"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Seeds are fixed up front; a failure here is reported as is.
"""

import filecmp
import time
import warnings

import numpy as np
import pytest

from helpers import GOLDEN_DIR, golden_inputs, random_occasions
from portalchoice.diagnostics import hausman_iia_test, predict_weekly_shares
from portalchoice.estimate import calibrate_alpha, calibrate_alpha_from_coefficients, fit_mle
from portalchoice.features import ExogenousSeries, LoyaltyState, featurize, update_loyalty, write_occasions
from portalchoice.ingest import PortalCatalog, parse_clickstream, split_holdout
from portalchoice.model import ChoiceModel, log_likelihood, probabilities, score_and_hessian, variant_spec
from portalchoice.simulate import Edit, apply_edits, counterfactual_shares
from portalchoice.synthgen import SyntheticConfig, generate_panel


@pytest.fixture
def verdict(capsys):
    def emit(criterion: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        assert ok, f"{criterion}: {detail}"
    return emit


def _truth_vector(panel, spec):
    return np.array([panel.truth["beta"][n] for n in spec.names])


def test_c01_parameter_recovery(verdict):
    t0 = time.perf_counter()
    rmse, maxz = [], None
    for n in (500, 2000):
        panel = generate_panel(SyntheticConfig(seed=2024, n_households=n))
        occ = panel.occasions
        spec = variant_spec(2, occ.alternatives)
        m = fit_mle(occ, spec)
        b = _truth_vector(panel, spec)
        rmse.append(float(np.sqrt(np.mean((m.beta - b) ** 2))))
        if n == 500:
            maxz = float(np.max(np.abs(m.beta - b) / m.se))
    elapsed = time.perf_counter() - t0
    ok = maxz < 3 and rmse[1] < rmse[0] and elapsed < 120
    verdict("C1 parameter recovery", ok,
            f"max |b-b*|/SE = {maxz:.2f} (< 3) at 500 households; RMSE {rmse[0]:.4g} -> {rmse[1]:.4g} "
            f"at 2000; {elapsed:.0f}s (< 120s)")


def _central_fd(f, beta):
    g = np.zeros_like(beta)
    for k in range(len(beta)):
        h = 1e-5 * max(1.0, abs(beta[k]))
        up, dn = beta.copy(), beta.copy()
        up[k] += h
        dn[k] -= h
        g[k] = (f(up) - f(dn)) / (2 * h)
    return g


def test_c02_gradient_and_hessian(verdict):
    worst_rel, worst_eig = 0.0, -np.inf
    for variant in range(1, 10):
        rng = np.random.default_rng(1000 + variant)
        occ = random_occasions(rng, lambda a: variant_spec(variant, a), n=120, households=12)
        beta = rng.normal(0, 0.3, len(occ.spec))
        g, _ = score_and_hessian(beta, occ)
        fd = _central_fd(lambda b: log_likelihood(b, occ), beta)
        worst_rel = max(worst_rel, float(np.max(np.abs(fd - g)) / np.max(np.abs(g))))
        for _ in range(20):
            _, H = score_and_hessian(rng.normal(0, 1.0, len(occ.spec)), occ)
            worst_eig = max(worst_eig, float(np.linalg.eigvalsh(H).max()))
    ok = worst_rel < 1e-6 and worst_eig <= 1e-8
    verdict("C2 gradient/Hessian", ok,
            f"max relative score error {worst_rel:.2e} (< 1e-6) over variants 1-9; "
            f"largest Hessian eigenvalue {worst_eig:.2e} (<= 1e-8) over 9 x 20 random points")


def test_c03_normalization(verdict):
    prob_err = 0.0
    fixtures = []
    for variant in (1, 6, 8):
        rng = np.random.default_rng(variant)
        occ = random_occasions(rng, lambda a: variant_spec(variant, a), n=200)
        fixtures += [(occ, rng.normal(0, 0.5, len(occ.spec))), (occ, rng.normal(0, 200.0, len(occ.spec)))]
    g = golden_inputs()
    gold = featurize(g["records"], g["catalog"], g["alternatives"], g["exogenous"], g["spec"], alpha=0.5).occasions
    fixtures.append((gold, np.random.default_rng(0).normal(0, 0.5, len(gold.spec))))
    panel = generate_panel(SyntheticConfig(seed=31, n_households=60))
    spec = variant_spec(2, panel.occasions.alternatives)
    occ2 = panel.occasions.select(spec)
    b2 = _truth_vector(panel, spec)
    fixtures.append((occ2, b2))
    for occ, b in fixtures:
        prob_err = max(prob_err, float(np.max(np.abs(probabilities(b, occ.X).sum(axis=1) - 1))))
    model = ChoiceModel(spec, occ2.alternatives, b2, np.eye(len(spec)), 0.0, occ2.n)
    ws = predict_weekly_shares(model, occ2, anchor=panel.config.start_ts, n_weeks=14)
    week_err = 0.0
    for w in range(ws.n_weeks):
        rs = [r for r in ws.rows if r.week == w and r.n]
        if rs:
            week_err = max(week_err, abs(sum(r.predicted for r in rs) - 1))
    cf = counterfactual_shares(model, occ2, Edit("scale", "advertising", "msn", factor=3.0))
    cf_err = max(abs(cf.baseline.sum() - 1), abs(cf.edited.sum() - 1))
    ok = prob_err <= 1e-12 and week_err <= 1e-10 and cf_err <= 1e-10
    verdict("C3 normalization", ok,
            f"probability rows {prob_err:.1e} (<= 1e-12), weekly shares {week_err:.1e} (<= 1e-10), "
            f"counterfactual shares {cf_err:.1e} (<= 1e-10)")


def test_c04_loyalty_algebra(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(200):
        alpha = float(rng.uniform(0.01, 0.99))
        J = int(rng.integers(2, 9))
        choices = rng.integers(-1, J, int(rng.integers(0, 120)))
        s = LoyaltyState.initial(alpha, J)
        for c in choices:
            s = update_loyalty(s, int(c))
        t = len(choices)
        for j in range(J):
            closed = alpha ** t / J + (1 - alpha) * sum(alpha ** (t - 1 - i) for i in range(t) if choices[i] == j)
            worst = max(worst, abs(s.values[j] - closed))
    step = update_loyalty(LoyaltyState(0.7782, (0.5, 0.5)), 0).values[0]
    ok = worst <= 1e-12 and step == 0.6109
    verdict("C4 loyalty algebra", ok,
            f"closed-form telescoping max error {worst:.1e} (<= 1e-12); 0.7782*0.5 + 0.2218 = {step!r} (exactly 0.6109)")


def test_c05_alpha_calibration(verdict):
    a = 0.7782
    exact = calibrate_alpha_from_coefficients([2.0 * (1 - a) * a ** (l - 1) for l in range(1, 11)])
    t0 = time.perf_counter()
    est = []
    for r in range(10):
        panel = generate_panel(SyntheticConfig(seed=5000 + r, n_households=500))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est.append(calibrate_alpha(panel.occasions).alpha)
    elapsed = time.perf_counter() - t0
    dev = max(abs(e - a) for e in est)
    ok = abs(exact.alpha - a) < 1e-6 and dev <= 0.05 and elapsed < 300
    verdict("C5 alpha calibration", ok,
            f"exact geometric error {abs(exact.alpha - a):.1e} (< 1e-6); 10 synthetic replications in "
            f"[{min(est):.4f}, {max(est):.4f}], max |a-0.7782| = {dev:.4f} (<= 0.05); {elapsed:.0f}s (< 300s)")


def _iia_rejections(mode: str, rho: float, reps: int) -> float:
    rejected = 0
    for r in range(reps):
        cfg = SyntheticConfig(seed=70_000 + r, n_households=150, occasions_per_household=60,
                              labels=("yahoo", "msn", "excite"), correlation_mode=mode, rho=rho,
                              nested_pair=("msn", "excite"))
        occ = generate_panel(cfg).occasions
        occ = occ.select(variant_spec(2, occ.alternatives))
        rejected += hausman_iia_test(fit_mle(occ), occ, "excite").p_value < 0.05
    return rejected / reps


def test_c06_iia_size_and_power(verdict):
    t0 = time.perf_counter()
    size = _iia_rejections("none", 0.0, 200)
    power = _iia_rejections("nested", 0.8, 200)
    elapsed = time.perf_counter() - t0
    ok = 0.01 <= size <= 0.10 and power > 0.5 and elapsed < 600
    verdict("C6 IIA test", ok,
            f"rejection rate {size:.3f} under IIA (in [0.01, 0.10]), {power:.3f} at rho = 0.8 (> 0.5), "
            f"200 + 200 replications; {elapsed:.0f}s (< 600s)")


def test_c07_holdout_prediction(verdict):
    panel = generate_panel(SyntheticConfig(seed=707, n_households=1000, weeks=14))
    occ = panel.occasions.select(variant_spec(2, panel.occasions.alternatives))
    split = split_holdout(sorted(set(occ.household.tolist())), 0.3, 707)
    hold = np.isin(occ.household, sorted(split.holdout_households))
    model = fit_mle(occ.subset(~hold))
    ws = predict_weekly_shares(model, occ.subset(hold), anchor=panel.config.start_ts, n_weeks=14)
    mae = ws.mean_absolute_error()
    sign = ws.sign_agreement()
    worst = max(mae, key=mae.get)
    ok = max(mae.values()) < 0.03 and sign > 0.6
    verdict("C7 holdout prediction", ok,
            f"14 weeks, {int(hold.sum())} holdout occasions; worst per-portal MAE {100 * mae[worst]:.2f} pp "
            f"({worst}, < 3 pp); sign agreement {sign:.3f} (> 0.6)")


def test_c08_round_trip(verdict, tmp_path):
    panel = generate_panel(SyntheticConfig(seed=88, n_households=100, occasion_scheme="geometric",
                                           correlation_mode="nested", rho=0.5))
    panel.write(tmp_path)
    parsed = parse_clickstream(tmp_path / "clickstream.csv")
    fr = featurize(parsed.records, PortalCatalog.load(tmp_path / "catalog.json"), panel.occasions.alternatives,
                   ExogenousSeries.load(tmp_path / "advertising.csv", tmp_path / "media.csv"),
                   panel.occasions.spec)
    a, b = panel.occasions, fr.occasions
    ok = (not parsed.rejects and a.X.shape == b.X.shape and np.array_equal(a.X, b.X)
          and np.array_equal(a.chosen, b.chosen) and np.array_equal(a.timestamp, b.timestamp)
          and list(a.household) == list(b.household) and np.array_equal(a.index, b.index))
    verdict("C8 round trip", ok,
            f"{a.n} occasions x {a.J} alternatives x {len(a.spec)} columns; raw CSV -> ingest -> featurize "
            f"{'bit-identical' if ok else 'differs'}")


def test_c09_counterfactual(verdict):
    panel = generate_panel(SyntheticConfig(seed=99, n_households=80))
    spec = variant_spec(2, panel.occasions.alternatives)
    occ = panel.occasions.select(spec)
    model = ChoiceModel(spec, occ.alternatives, _truth_vector(panel, spec), np.eye(len(spec)), 0.0, occ.n)
    identity_ok = all(np.array_equal(cf.baseline, cf.edited) for cf in (
        counterfactual_shares(model, occ, Edit("scale", "advertising", "aol", factor=1.0)),
        counterfactual_shares(model, occ, Edit("copy", "last_view_length", "msn", source="msn"))))
    edit = Edit("scale", "advertising", "excite", factor=2.0)
    X1 = apply_edits(model, occ, [edit])
    j = [a.label for a in occ.alternatives].index("excite")
    P0, P1 = probabilities(model.beta, occ.X), probabilities(model.beta, X1)
    others = [k for k in range(occ.J) if k != j]
    ratio_err = float(np.max(np.abs((P1[:, others] / P1[:, [others[0]]]) / (P0[:, others] / P0[:, [others[0]]]) - 1)))
    cf = counterfactual_shares(model, occ, edit)
    raised = cf.delta_share[j] > 0
    ok = identity_ok and ratio_err <= 1e-10 and raised
    verdict("C9 counterfactual", ok,
            f"identity edits exact: {identity_ok}; unedited share ratios change by {ratio_err:.1e} (<= 1e-10); "
            f"doubling excite advertising moves its share {cf.baseline[j]:.4f} -> {cf.edited[j]:.4f}")


def test_c10_golden_file(verdict, tmp_path):
    g = golden_inputs()
    res = featurize(g["records"], g["catalog"], g["alternatives"], g["exogenous"], g["spec"], alpha=0.5)
    write_occasions(res.occasions, tmp_path / "occasions.csv")
    same = filecmp.cmp(tmp_path / "occasions.csv", GOLDEN_DIR / "expected_occasions.csv", shallow=False)
    verdict("C10 golden feature file", same,
            f"6-household hand-traced fixture, {res.occasions.n} occasions: "
            f"{'byte-identical' if same else 'differs'} to the expected file")
