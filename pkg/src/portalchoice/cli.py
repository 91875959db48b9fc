"""Command-line entry point: ``portalchoice <subcommand> ...``.

Exit status: 0 success, 1 data error, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

from .errors import ConfigurationError, DataError, PortalChoiceError
from .model import Alternative, ModelSpec, make_alternatives, superset_spec, variant_spec

log = logging.getLogger("portalchoice")


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _resolve_spec(args, alternatives) -> ModelSpec:
    if getattr(args, "spec", None):
        d = _read_json(args.spec)
        if "variables" not in d:
            if "variant" in d:
                return variant_spec(int(d["variant"]), alternatives)
            raise ConfigurationError(f"{args.spec}: expected 'variables' or 'variant'")
        spec = ModelSpec.from_dict(d)
    else:
        spec = variant_spec(args.variant, alternatives)
    spec.validate_for(alternatives)
    return spec


def _load_alternatives(args) -> tuple[Alternative, ...]:
    if args.labels:
        labels = [s.strip() for s in args.labels.split(",") if s.strip()]
        return make_alternatives(labels, args.base or labels[0])
    if args.alternatives:
        d = _read_json(args.alternatives)
        items = d["alternatives"] if isinstance(d, dict) else d
        return tuple(Alternative(int(a["id"]), a["label"], bool(a["is_base"])) for a in items)
    raise ConfigurationError("give --alternatives FILE (from ingest) or --labels a,b,...")


# ---------------------------------------------------------------- commands

def cmd_ingest(args) -> int:
    from .ingest import PortalCatalog, classify_portal_visits, parse_clickstream, select_top_alternatives, \
        sessionize, write_rejects
    out = _out_dir(args.out)
    res = parse_clickstream(args.clickstream)
    write_rejects(res.rejects, out / "rejects.csv")
    catalog = PortalCatalog.load(args.catalog)
    visits = classify_portal_visits(sessionize(res.records, args.gap), catalog)
    top = select_top_alternatives(visits, args.k, args.base)
    _write_json({"alternatives": [{"id": a.id, "label": a.label, "is_base": a.is_base} for a in top.alternatives],
                 "counts": top.counts, "retained_share": top.retained_share}, out / "alternatives.json")
    summary = {"lines": res.n_lines, "records": sum(len(v) for v in res.records.values()),
               "households": len(res.records), "rejects": len(res.rejects),
               "portal_visits": sum(len(v) for v in visits.values()), "retained_share": top.retained_share}
    _write_json(summary, out / "ingest_summary.json")
    print(f"{summary['records']} records from {summary['households']} households, {summary['rejects']} rejected; "
          f"top {len(top.alternatives)} portals keep {100 * top.retained_share:.1f}% of visits")
    return 0


def cmd_featurize(args) -> int:
    from .features import ExogenousSeries, featurize, write_occasions
    from .ingest import PortalCatalog, parse_clickstream, split_holdout
    out = _out_dir(args.out)
    res = parse_clickstream(args.clickstream)
    if res.rejects:
        log.warning("%d malformed clickstream line(s) skipped; run ingest for the reject report", len(res.rejects))
    catalog = PortalCatalog.load(args.catalog)
    alts = _load_alternatives(args)
    exo = ExogenousSeries.load(args.advertising, args.media)
    spec = superset_spec(alts, args.max_lag)
    if args.spec:
        extra = ModelSpec.from_dict(_read_json(args.spec))
        spec = ModelSpec(spec.variables + tuple(v for v in extra.variables if v.name not in spec.names))
    hh = sorted(res.records)
    parts = {"occasions": hh}
    if args.holdout:
        split = split_holdout(hh, args.holdout, args.seed)
        parts = {"occasions": sorted(split.estimation_households), "holdout": sorted(split.holdout_households)}
    for name, members in parts.items():
        fr = featurize(res.records, catalog, alts, exo, spec, alpha=args.alpha, window_s=args.window,
                       gap_s=args.gap, households=members, loyalty_scope=args.loyalty_scope)
        meta = fr.meta()
        if args.holdout:
            meta.update(holdout_fraction=args.holdout, seed=args.seed, part=name)
        write_occasions(fr.occasions, out / f"{name}.csv", meta)
        print(f"{name}: {fr.occasions.n} occasions, {len(fr.dropped_households)} household(s) dropped, "
              f"{100 * fr.no_goal_fraction:.1f}% of visits without an identifiable goal")
    return 0


def cmd_fit(args) -> int:
    from .estimate import fit_mle, save_model
    from .features import file_fingerprint, read_occasions
    occ, meta = read_occasions(args.occasions)
    spec = _resolve_spec(args, occ.alternatives)
    model = fit_mle(occ, spec, tol=args.tol, max_iter=args.max_iter, threads=args.threads,
                    alpha=meta.get("alpha"), fingerprint=file_fingerprint(args.occasions))
    out = _out_dir(args.out)
    save_model(model, out / f"{args.name}.json")
    width = max(len(n) for n in spec.names)
    for n, b, s in zip(spec.names, model.beta, model.se):
        print(f"{n:<{width}}  {b: .6g}  ({s:.4g})")
    print(f"lnL {model.log_likelihood:.4f}  AIC {model.aic:.2f}  BIC {model.bic:.2f}  n {model.n_obs}")
    return 0


def cmd_iia(args) -> int:
    from .diagnostics import hausman_iia_test
    from .estimate import load_model
    from .features import read_occasions
    model = load_model(args.model)
    occ, _ = read_occasions(args.occasions)
    restricted = read_occasions(args.restricted_occasions)[0] if args.restricted_occasions else None
    if restricted is not None and len(args.drop) != 1:
        raise ConfigurationError("--restricted-occasions goes with exactly one --drop")
    rows = [hausman_iia_test(model, occ, d, restricted, threads=args.threads).row() for d in args.drop]
    out = _out_dir(args.out)
    with open(out / "iia.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dropped", "chi2", "df", "p_value", "n_full", "n_restricted"])
        for r in rows:
            w.writerow([r["dropped"], repr(r["chi2"]), r["df"], repr(r["p_value"]), r["n_full"], r["n_restricted"]])
            print(f"drop {r['dropped']}: chi2 {r['chi2']:.4f}  df {r['df']}  p {r['p_value']:.4g}")
    return 0


def cmd_predict(args) -> int:
    from .diagnostics import predict_weekly_shares, share_chart_svg
    from .estimate import load_model
    from .features import read_occasions
    model = load_model(args.model)
    occ, _ = read_occasions(args.occasions)
    ws = predict_weekly_shares(model, occ.select(model.spec), args.week_days, args.anchor, args.weeks)
    out = _out_dir(args.out)
    ws.write_csv(out / "weekly_shares.csv")
    mae = ws.mean_absolute_error()
    sign = ws.sign_agreement()
    _write_json({"mean_absolute_error": mae, "sign_agreement": sign, "n_weeks": ws.n_weeks,
                 "n_occasions": occ.n}, out / "prediction_metrics.json")
    for p in ws.portals:
        (out / f"share_{p}.svg").write_text(share_chart_svg(ws, p), encoding="utf-8")
        print(f"{p}: mean absolute error {100 * mae[p]:.2f} pp")
    print(f"sign agreement of weekly changes {sign:.3f}")
    return 0


def cmd_elasticity(args) -> int:
    from .errors import DomainError
    from .estimate import load_model
    from .features import read_occasions
    from .simulate import elasticity_at_means, elasticity_to_visits, estimate_visits_per_user_month, \
        write_elasticities
    model = load_model(args.model)
    occ, _ = read_occasions(args.occasions)
    occ = occ.select(model.spec)
    portals = args.portals.split(",") if args.portals else [a.label for a in model.alternatives]
    variables = args.variables.split(",")
    vpm = args.visits_per_user_month or estimate_visits_per_user_month(occ)
    shares = model.probabilities(occ).mean(axis=0)
    rows, visits = [], []
    for v in variables:
        for p in portals:
            try:
                e = elasticity_at_means(model, occ, v, p, per_occasion=args.per_occasion)
            except DomainError as exc:
                log.warning("%s", exc)
                continue
            rows.append(e)
            j = [a.label for a in model.alternatives].index(p)
            visits.append({"portal": p, "variable": v,
                           **elasticity_to_visits(e.elasticity, float(shares[j]), vpm, args.pct_change,
                                                  args.total_users)})
    out = _out_dir(args.out)
    write_elasticities(rows, out / "elasticities.csv")
    with open(out / "visits.csv", "w", newline="", encoding="utf-8") as fh:
        cols = ["portal", "variable", "delta_visits", "elasticity", "pct_change", "share", "total_users",
                "visits_per_user_month"]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in visits:
            w.writerow([r[c] if isinstance(r[c], str) else repr(float(r[c])) for c in cols])
    for e in rows:
        print(f"{e.portal:<12} {e.variable:<20} {e.elasticity: .5f}")
    return 0


def cmd_counterfactual(args) -> int:
    from .estimate import load_model
    from .features import read_occasions
    from .simulate import counterfactual_shares, load_edits
    model = load_model(args.model)
    occ, _ = read_occasions(args.occasions)
    cf = counterfactual_shares(model, occ, load_edits(args.edits), args.total_users, args.visits_per_user_month)
    out = _out_dir(args.out)
    cf.write_csv(out / "counterfactual.csv")
    for p, b, e in zip(cf.portals, cf.baseline, cf.edited):
        print(f"{p:<12} {b:.5f} -> {e:.5f}")
    return 0


def cmd_calibrate(args) -> int:
    from .estimate import calibrate_alpha
    from .features import read_occasions
    occ, _ = read_occasions(args.occasions)
    spec = _resolve_spec(args, occ.alternatives)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        cal = calibrate_alpha(occ, spec, args.lags, profile_scale=not args.no_scale, threads=args.threads)
    for w in caught:
        log.warning("%s", w.message)
    out = _out_dir(args.out)
    _write_json(cal.to_dict(), out / "alpha.json")
    print(f"alpha {cal.alpha:.6f}  scale {cal.kappa:.6g}  residual {cal.residual:.3g}")
    return 0


def cmd_synth(args) -> int:
    from .synthgen import SyntheticConfig, generate_panel
    d = _read_json(args.config) if args.config else {}
    for key, val in (("seed", args.seed), ("n_households", args.households),
                     ("occasions_per_household", args.occasions), ("rho", args.rho), ("variant", args.variant)):
        if val is not None:
            d[key] = val
    if args.labels:
        d["labels"] = [s.strip() for s in args.labels.split(",")]
    if args.nested_pair:
        d["nested_pair"] = args.nested_pair.split(",")
        d["correlation_mode"] = "nested"
    panel = generate_panel(SyntheticConfig.from_dict(d))
    panel.write(_out_dir(args.out))
    print(f"{panel.occasions.n} occasions for {panel.config.n_households} households written to {args.out}")
    return 0


def cmd_report(args) -> int:
    from .report import build_report
    path = build_report(args.run, args.out)
    print(path)
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="portalchoice", description="Portal choice modelling from clickstream panels.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True

    def threads(sp):
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: PORTALCHOICE_THREADS or 1); results do not depend on it")

    def model_choice(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--variant", type=int, default=2, help="preset model 1..9 (default 2)")
        g.add_argument("--spec", help="JSON model spec file")

    s = sub.add_parser("ingest", help="parse a clickstream, report rejects, pick the top-K portals")
    s.add_argument("--clickstream", required=True)
    s.add_argument("--catalog", required=True)
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--base")
    s.add_argument("--gap", type=int, default=1800, help="session gap in seconds")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("featurize", help="build choice occasions from raw records")
    s.add_argument("--clickstream", required=True)
    s.add_argument("--catalog", required=True)
    s.add_argument("--advertising", required=True)
    s.add_argument("--media", required=True)
    s.add_argument("--alternatives", help="alternatives.json written by ingest")
    s.add_argument("--labels", help="comma-separated alternatives instead of --alternatives")
    s.add_argument("--base", help="base alternative with --labels (default: first)")
    s.add_argument("--spec", help="extra variables to build beyond the preset superset")
    s.add_argument("--alpha", type=float, default=0.7782)
    s.add_argument("--window", type=int, default=300, help="search window in seconds")
    s.add_argument("--gap", type=int, default=1800)
    s.add_argument("--max-lag", type=int, default=10)
    s.add_argument("--loyalty-scope", choices=["any", "sample"], default="any")
    s.add_argument("--holdout", type=float, help="fraction of households held out")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("fit", help="maximum likelihood estimation")
    s.add_argument("--occasions", required=True)
    model_choice(s)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--name", default="model", help="output file stem (default model)")
    threads(s)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("iia", help="drop-one Hausman test of IIA")
    s.add_argument("--model", required=True)
    s.add_argument("--occasions", required=True)
    s.add_argument("--drop", action="append", required=True, help="alternative to drop (repeatable)")
    s.add_argument("--restricted-occasions", help="features re-derived without the dropped portal")
    threads(s)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_iia)

    s = sub.add_parser("predict", help="weekly predicted vs actual shares")
    s.add_argument("--model", required=True)
    s.add_argument("--occasions", required=True)
    s.add_argument("--week-days", type=int, default=7)
    s.add_argument("--anchor", type=int, help="first week start (unix seconds)")
    s.add_argument("--weeks", type=int)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("elasticity", help="elasticities at the means and implied visits")
    s.add_argument("--model", required=True)
    s.add_argument("--occasions", required=True)
    s.add_argument("--variables", default="advertising,media_mentions,last_view_length")
    s.add_argument("--portals", help="comma-separated (default: all)")
    s.add_argument("--per-occasion", action="store_true", help="average occasion-level elasticities instead")
    s.add_argument("--pct-change", type=float, default=0.01, help="as a fraction; 0.01 is 1%%")
    s.add_argument("--total-users", type=float, default=76.5e6)
    s.add_argument("--visits-per-user-month", type=float)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_elasticity)

    s = sub.add_parser("counterfactual", help="shares after editing features, coefficients fixed")
    s.add_argument("--model", required=True)
    s.add_argument("--occasions", required=True)
    s.add_argument("--edits", required=True, help="JSON edits file")
    s.add_argument("--total-users", type=float, default=76.5e6)
    s.add_argument("--visits-per-user-month", type=float)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_counterfactual)

    s = sub.add_parser("calibrate-alpha", help="loyalty smoothing constant from lag coefficients")
    s.add_argument("--occasions", required=True)
    model_choice(s)
    s.add_argument("--lags", type=int, default=10)
    s.add_argument("--no-scale", action="store_true", help="fix the scale at 1 instead of profiling it")
    threads(s)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("synth", help="generate a synthetic panel with known parameters")
    s.add_argument("--config", help="JSON synthetic config")
    s.add_argument("--seed", type=int)
    s.add_argument("--households", type=int)
    s.add_argument("--occasions", type=int, help="occasions per household")
    s.add_argument("--labels")
    s.add_argument("--variant", type=int)
    s.add_argument("--nested-pair", help="two labels with correlated errors, e.g. msn,excite")
    s.add_argument("--rho", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("report", help="markdown summary of a run directory")
    s.add_argument("--run", required=True)
    s.add_argument("--out", help="report directory (default RUN/report)")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, PortalChoiceError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"data error: {exc.filename}: file not found", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
