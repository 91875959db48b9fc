"""Markdown summary of a run directory, with CSV and SVG assets."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .diagnostics import ShareRow, WeeklyShares, share_chart_svg
from .estimate import load_model


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _num(x, fmt="{:.4g}") -> str:
    if x in (None, ""):
        return ""
    return fmt.format(float(x))


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return out


def _load_shares(path: Path) -> WeeklyShares:
    raw = _read_csv(path)
    portals = list(dict.fromkeys(r["portal"] for r in raw))
    weeks = list(dict.fromkeys(r["week_start"] for r in raw))
    rows = [ShareRow(r["portal"], weeks.index(r["week_start"]), r["week_start"],
                     float(r["predicted_share"]) if r["predicted_share"] else None,
                     float(r["actual_share"]) if r["actual_share"] else None, int(r["n"])) for r in raw]
    return WeeklyShares(rows, portals, len(weeks), 0)


def build_report(run_dir, out_dir=None) -> Path:
    """Write ``report.md`` (plus coefficients.csv and share charts) and return its path.

    Sections appear for whichever standard files the run directory holds:
    model*.json, iia.csv, weekly_shares.csv, elasticities.csv, visits.csv,
    counterfactual.csv, alpha.json and truth.json.
    """
    run = Path(run_dir)
    out = Path(out_dir) if out_dir else run / "report"
    out.mkdir(parents=True, exist_ok=True)
    md = [f"# Portal choice run: {run.name}", ""]

    models = [p for p in sorted(run.glob("model*.json")) if "coefficients" in json.loads(p.read_text())]
    if models:
        fitted = [(p.stem, load_model(p)) for p in models]
        names = list(dict.fromkeys(n for _, m in fitted for n in m.spec.names))
        md += ["## Coefficients", "", "Estimates with standard errors in parentheses.", ""]
        rows = []
        for n in names:
            cells = []
            for _, m in fitted:
                if n in m.spec.names:
                    k = m.spec.index(n)
                    cells.append(f"{m.beta[k]:.4g} ({m.se[k]:.3g})")
                else:
                    cells.append("")
            rows.append([n] + cells)
        for label, f in (("log-likelihood", lambda m: f"{m.log_likelihood:.2f}"), ("AIC", lambda m: f"{m.aic:.2f}"),
                         ("BIC", lambda m: f"{m.bic:.2f}"), ("parameters", lambda m: str(m.n_params)),
                         ("occasions", lambda m: str(m.n_obs))):
            rows.append([f"*{label}*"] + [f(m) for _, m in fitted])
        md += _table(["variable"] + [s for s, _ in fitted], rows) + [""]
        with open(out / "coefficients.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "variable", "beta", "se"])
            for s, m in fitted:
                for n, b, e in zip(m.spec.names, m.beta, m.se):
                    w.writerow([s, n, repr(float(b)), repr(float(e))])

        truth = run / "truth.json"
        if truth.exists():
            t = json.loads(truth.read_text())["beta"]
            s, m = fitted[0]
            rows = []
            for n in m.spec.names:
                if n in t:
                    k = m.spec.index(n)
                    rows.append([n, _num(t[n]), _num(m.beta[k]), f"{(m.beta[k] - t[n]) / m.se[k]:+.2f}"])
            md += [f"## Recovery against the generating values ({s})", ""]
            md += _table(["variable", "true", "estimate", "z"], rows) + [""]

    if (run / "iia.csv").exists():
        rows = [[r["dropped"], _num(r["chi2"]), r["df"], _num(r["p_value"], "{:.4f}"), r["n_restricted"]]
                for r in _read_csv(run / "iia.csv")]
        md += ["## IIA test (drop one alternative)", ""]
        md += _table(["dropped", "chi2", "df", "p", "occasions kept"], rows) + [""]

    if (run / "alpha.json").exists():
        a = json.loads((run / "alpha.json").read_text())
        md += ["## Loyalty smoothing constant", "",
               f"alpha = {a['alpha']:.4f}, scale = {a['kappa']:.4g}, residual = {a['residual']:.3g}", ""]
        for wmsg in a.get("warnings", []):
            md.append(f"- warning: {wmsg}")
        md.append("")

    shares_csv = run / "weekly_shares.csv"
    if shares_csv.exists():
        ws = _load_shares(shares_csv)
        mae = ws.mean_absolute_error()
        md += ["## Holdout weekly shares", "",
               f"Sign agreement of week-to-week changes: {ws.sign_agreement():.3f}", ""]
        md += _table(["portal", "mean abs. error (pp)"], [[p, f"{100 * mae[p]:.2f}"] for p in ws.portals]) + [""]
        for p in ws.portals:
            name = f"share_{p}.svg"
            (out / name).write_text(share_chart_svg(ws, p), encoding="utf-8")
            md.append(f"![{p}]({name})")
        md.append("")

    if (run / "elasticities.csv").exists():
        raw = _read_csv(run / "elasticities.csv")
        variables = list(dict.fromkeys(r["variable"] for r in raw))
        portals = list(dict.fromkeys(r["portal"] for r in raw))
        val = {(r["portal"], r["variable"]): r["elasticity"] for r in raw}
        md += ["## Elasticities at the variable means", ""]
        md += _table(["portal"] + variables,
                     [[p] + [_num(val.get((p, v))) for v in variables] for p in portals]) + [""]

    if (run / "visits.csv").exists():
        raw = _read_csv(run / "visits.csv")
        md += ["## Monthly visit change implied by the elasticities", ""]
        if raw:
            md.append(f"For a {100 * float(raw[0]['pct_change']):g}% change, assuming "
                      f"{float(raw[0]['total_users']):,.0f} users and "
                      f"{float(raw[0]['visits_per_user_month']):.2f} visits per user-month.")
            md.append("")
        md += _table(["portal", "variable", "visits"],
                     [[r["portal"], r["variable"], _num(r["delta_visits"], "{:,.0f}")] for r in raw]) + [""]

    if (run / "counterfactual.csv").exists():
        raw = _read_csv(run / "counterfactual.csv")
        md += ["## Counterfactual edit", "",
               "Static: no competitive response and no loyalty feedback, so gains are a lower bound.", ""]
        md += _table(["portal", "baseline", "edited", "change", "visits/month"],
                     [[r["portal"], _num(r["baseline_share"]), _num(r["edited_share"]), _num(r["delta_share"]),
                       _num(r["delta_visits"], "{:,.0f}")] for r in raw]) + [""]

    path = out / "report.md"
    path.write_text("\n".join(md).rstrip() + "\n", encoding="utf-8")
    return path
