use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{SelectionMode, Workdir};
use super::pipeline::{collect_node_runs, read_eval_summary, select_nodes};
use crate::error::{Error, Result};
use crate::evalharness::{aggregate, ci95, mean, median, read_csv, write_csv, ComparisonRow, IntrinsicRow, RolloutRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetadataRow {
    pub method: String,
    pub runs: usize,
    pub best_val_mean: f64,
    pub best_val_ci95: Option<f64>,
    pub best_epoch_mean: f64,
    pub ep_target_mean: f64,
    pub ep_target_ci95: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub method: String,
    pub baseline: String,
    pub horizon: usize,
    pub n_pairs: usize,
    pub delta_rel_max: f64,
    pub ci95_rel_max: Option<f64>,
    pub p_rel_max: Option<f64>,
    pub delta_rel_mean: f64,
    pub ci95_rel_mean: Option<f64>,
    pub p_rel_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditioningRow {
    pub method: String,
    pub horizon: usize,
    pub runs: usize,
    pub dyn_cond_mean: f64,
    pub dyn_cond_ci95: Option<f64>,
    pub dec_gain_mean: f64,
    pub dec_gain_ci95: Option<f64>,
    pub dec_gain_median: f64,
    pub latent_err_mean: f64,
    pub latent_err_ci95: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub metric: String,
    pub method: String,
    pub horizon: usize,
    pub runs: usize,
    pub mean: f64,
    pub ci95: Option<f64>,
}

fn by_run<'a, T>(rows: impl Iterator<Item = &'a T>, run: impl Fn(&T) -> String, v: impl Fn(&T) -> f64) -> BTreeMap<String, Vec<f64>>
where
    T: 'a,
{
    let mut m: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        m.entry(run(r)).or_default().push(v(r));
    }
    m
}

fn metadata_table(wd: &Workdir) -> Result<Vec<MetadataRow>> {
    let cfg = wd.load_config()?;
    let (runs, _) = collect_node_runs(wd, &cfg)?;
    let targets = select_nodes(&runs, SelectionMode::SharedTarget)?;
    let mut out = Vec::new();
    for &m in &cfg.train.methods {
        let idx: Vec<usize> = (0..runs.len()).filter(|&i| runs[i].method == m).collect();
        if idx.is_empty() {
            continue;
        }
        let best: Vec<f64> = idx
            .iter()
            .map(|&i| runs[i].meta.val_curve.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let best_ep: Vec<f64> = idx.iter().map(|&i| runs[i].meta.best_epoch as f64).collect();
        let ep_t: Vec<f64> = idx.iter().map(|&i| targets[i].node_epochs[0] as f64).collect();
        out.push(MetadataRow {
            method: m.name().into(),
            runs: idx.len(),
            best_val_mean: mean(&best),
            best_val_ci95: ci95(&best),
            best_epoch_mean: mean(&best_ep),
            ep_target_mean: mean(&ep_t),
            ep_target_ci95: ci95(&ep_t),
        });
    }
    Ok(out)
}

fn paired_table(rows: &[ComparisonRow], h: usize) -> Vec<PairedRow> {
    let mut out: Vec<PairedRow> = Vec::new();
    for r in rows.iter().filter(|r| r.horizon == h && r.metric == "rel_max") {
        let Some(m) = rows
            .iter()
            .find(|x| x.horizon == h && x.method == r.method && x.metric == "rel_mean")
        else {
            continue;
        };
        out.push(PairedRow {
            method: r.method.clone(),
            baseline: r.baseline.clone(),
            horizon: h,
            n_pairs: r.n_pairs,
            delta_rel_max: r.delta_mean,
            ci95_rel_max: r.ci95,
            p_rel_max: r.p_value,
            delta_rel_mean: m.delta_mean,
            ci95_rel_mean: m.ci95,
            p_rel_mean: m.p_value,
        });
    }
    out
}

fn conditioning_table(rows: &[IntrinsicRow], methods: &[String], h: usize) -> Result<Vec<ConditioningRow>> {
    let mut out = Vec::new();
    for m in methods {
        let mine: Vec<&IntrinsicRow> = rows.iter().filter(|r| &r.method == m).collect();
        if mine.is_empty() {
            continue;
        }
        let cond = aggregate(&by_run(mine.iter().copied(), |r| r.run.clone(), |r| r.dyn_cond), true)?;
        let gain = aggregate(&by_run(mine.iter().copied(), |r| r.run.clone(), |r| r.dec_gain), false)?;
        let lat = aggregate(&by_run(mine.iter().copied(), |r| r.run.clone(), |r| r.latent_err), false)?;
        let gains: Vec<f64> = mine.iter().map(|r| r.dec_gain).collect();
        out.push(ConditioningRow {
            method: m.clone(),
            horizon: h,
            runs: cond.runs,
            dyn_cond_mean: cond.mean,
            dyn_cond_ci95: cond.ci95,
            dec_gain_mean: gain.mean,
            dec_gain_ci95: gain.ci95,
            dec_gain_median: median(&gains),
            latent_err_mean: lat.mean,
            latent_err_ci95: lat.ci95,
        });
    }
    Ok(out)
}

fn curve_points(wd: &Workdir, mode: SelectionMode, horizons: &[usize], methods: &[String]) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    let mut per_h = Vec::new();
    for &h in horizons {
        per_h.push(read_csv::<RolloutRow>(&wd.eval_horizon(mode, h).join("rollout.csv"))?);
    }
    for metric in ["rel_max", "rel_mean"] {
        for m in methods {
            for (&h, rows) in horizons.iter().zip(&per_h) {
                let mut runs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
                for r in rows.iter().filter(|r| &r.method == m) {
                    runs.entry(r.run.clone()).or_default().push(r.metric(metric)?);
                }
                if runs.is_empty() {
                    continue;
                }
                let s = aggregate(&runs, false)?;
                out.push(CurvePoint {
                    metric: metric.into(),
                    method: m.clone(),
                    horizon: h,
                    runs: s.runs,
                    mean: s.mean,
                    ci95: s.ci95,
                });
            }
        }
    }
    Ok(out)
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Line plot of a metric against horizon with 95% CI whiskers.
pub fn render_svg(title: &str, ylabel: &str, horizons: &[usize], series: &[(String, Vec<(usize, f64, f64)>)]) -> String {
    let (w, h) = (640.0, 420.0);
    let (l, r, t, b) = (80.0, 150.0, 40.0, 60.0);
    let (pw, ph) = (w - l - r, h - t - b);
    let xmin = *horizons.iter().min().unwrap_or(&0) as f64;
    let xmax = *horizons.iter().max().unwrap_or(&1) as f64;
    let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
    let ymax = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.1 + p.2))
        .fold(0.0f64, f64::max)
        .max(1e-12)
        * 1.1;
    let x = |v: usize| l + 0.05 * pw + 0.9 * pw * (v as f64 - xmin) / xspan;
    let y = |v: f64| t + ph * (1.0 - v / ymax);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{title}</text>"#, l + pw / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{l:.1},{t:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        t + ph,
        l + pw
    );
    for &hz in horizons {
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="black"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle">{hz}</text>"#,
            x(hz),
            t + ph,
            t + ph + 5.0,
            t + ph + 20.0
        );
    }
    for i in 0..=5 {
        let v = ymax * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="black"/><text x="{3:.1}" y="{4:.1}" text-anchor="end">{v:.3e}</text>"#,
            l - 5.0,
            y(v),
            l,
            l - 8.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">horizon H (steps)</text>"#,
        l + pw / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{0:.1}" text-anchor="middle" transform="rotate(-90 20 {0:.1})">{ylabel}</text>"#,
        t + ph / 2.0
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", x(p.0), y(p.1))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, path.join(" "));
        for p in pts {
            let (cx, lo, hi) = (x(p.0), y((p.1 - p.2).max(0.0)), y(p.1 + p.2));
            let _ = writeln!(
                s,
                r#"<path d="M{cx:.1},{lo:.1} V{hi:.1} M{:.1},{lo:.1} H{:.1} M{:.1},{hi:.1} H{:.1}" stroke="{c}"/><circle cx="{cx:.1}" cy="{:.1}" r="3" fill="{c}"/>"#,
                cx - 4.0,
                cx + 4.0,
                cx - 4.0,
                cx + 4.0,
                y(p.1)
            );
        }
        let ly = t + 10.0 + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{ly:.1}" x2="{1:.1}" y2="{ly:.1}" stroke="{c}" stroke-width="2"/><text x="{2:.1}" y="{3:.1}">{name}</text>"#,
            l + pw + 15.0,
            l + pw + 40.0,
            l + pw + 46.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.3e}"))
}

/// Writes tables, figures and a markdown summary into `report/`.
pub fn cmd_report(wd: &Workdir) -> Result<()> {
    let cfg = wd.load_config()?;
    let main = SelectionMode::BestValSwa;
    let summary = read_eval_summary(wd, main)?;
    let hmax = *summary.horizons.iter().max().ok_or_else(|| Error::invalid("evaluation has no horizons"))?;
    let methods: Vec<String> = cfg.train.methods.iter().map(|m| m.name().to_string()).collect();
    let dir = wd.report();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let meta = metadata_table(wd)?;
    write_csv(&dir.join("table1_metadata.csv"), &meta)?;

    let cmp: Vec<ComparisonRow> = read_csv(&wd.compare(main).join("comparison.csv"))?;
    let t2 = paired_table(&cmp, hmax);
    write_csv(&dir.join("table2_paired.csv"), &t2)?;

    let intr: Vec<IntrinsicRow> = read_csv(&wd.eval_horizon(main, hmax).join("intrinsic.csv"))?;
    let t3 = conditioning_table(&intr, &methods, hmax)?;
    write_csv(&dir.join("table3_conditioning.csv"), &t3)?;

    let shared = wd.compare(SelectionMode::SharedTarget).join("comparison.csv");
    let t4: Vec<ComparisonRow> = if shared.exists() {
        read_csv::<ComparisonRow>(&shared)?.into_iter().filter(|r| r.horizon == hmax).collect()
    } else {
        log::warn!("no shared-target comparison; table 4 left empty");
        Vec::new()
    };
    write_csv(&dir.join("table4_paired_target.csv"), &t4)?;

    let points = curve_points(wd, main, &summary.horizons, &methods)?;
    write_csv(&dir.join("figure_points.csv"), &points)?;
    for (file, metric, label) in [
        ("fig1_rel_max.svg", "rel_max", "max relative error"),
        ("fig2_rel_mean.svg", "rel_mean", "mean relative error"),
    ] {
        let series: Vec<(String, Vec<(usize, f64, f64)>)> = methods
            .iter()
            .map(|m| {
                let pts = points
                    .iter()
                    .filter(|p| p.metric == metric && &p.method == m)
                    .map(|p| (p.horizon, p.mean, p.ci95.unwrap_or(0.0)))
                    .collect();
                (m.clone(), pts)
            })
            .filter(|(_, p): &(String, Vec<_>)| !p.is_empty())
            .collect();
        let svg = render_svg(&format!("{metric} vs horizon"), label, &summary.horizons, &series);
        write_text(&dir.join(file), &svg)?;
    }

    let mut md = String::new();
    let _ = writeln!(md, "# Report\n");
    let _ = writeln!(
        md,
        "Dataset `{}`; split {} on the {} grid; {} scale.\n",
        summary.dataset_sha256,
        summary.split,
        summary.grid,
        if cfg.desk_scale { "desk" } else { "full" }
    );
    if !summary.incomplete.is_empty() {
        let _ = writeln!(md, "Incomplete runs excluded: {}.\n", summary.incomplete.join(", "));
    }
    let _ = writeln!(md, "## Training metadata\n\n| method | runs | best val | ep_target |\n|---|---|---|---|");
    for r in &meta {
        let _ = writeln!(
            md,
            "| {} | {} | {:.3e} ± {} | {:.1} ± {} |",
            r.method,
            r.runs,
            r.best_val_mean,
            fmt_opt(r.best_val_ci95),
            r.ep_target_mean,
            r.ep_target_ci95.map_or("n/a".into(), |c| format!("{c:.1}"))
        );
    }
    let _ = writeln!(
        md,
        "\n## Paired differences at H = {hmax} (best-val-swa)\n\nΔ = error(baseline) − error(method); positive favours the method.\n\n| method | Δ rel_max | p | Δ rel_mean | p |\n|---|---|---|---|---|"
    );
    for r in &t2 {
        let _ = writeln!(
            md,
            "| {} | {:+.3e} ± {} | {} | {:+.3e} ± {} | {} |",
            r.method,
            r.delta_rel_max,
            fmt_opt(r.ci95_rel_max),
            fmt_opt(r.p_rel_max),
            r.delta_rel_mean,
            fmt_opt(r.ci95_rel_mean),
            fmt_opt(r.p_rel_mean)
        );
    }
    let _ = writeln!(md, "\nSign pattern of Δ over horizons {:?}:\n", summary.horizons);
    for m in methods.iter().filter(|m| **m != cfg.eval.baseline.name()) {
        for metric in ["rel_max", "rel_mean"] {
            let signs: String = summary
                .horizons
                .iter()
                .map(|&h| {
                    cmp.iter()
                        .find(|r| r.horizon == h && &r.method == m && r.metric == metric)
                        .map_or('?', |r| if r.delta_mean > 0.0 { '+' } else if r.delta_mean < 0.0 { '-' } else { '0' })
                })
                .collect();
            let _ = writeln!(md, "- {m} {metric}: `{signs}`");
        }
    }
    let _ = writeln!(
        md,
        "\n## Conditioning at H = {hmax}\n\n| method | dyn_cond | dec_gain (mean) | dec_gain (median) | latent_err |\n|---|---|---|---|---|"
    );
    for r in &t3 {
        let _ = writeln!(
            md,
            "| {} | {:.3e} ± {} | {:.3} ± {} | {:.3} | {:.3e} ± {} |",
            r.method,
            r.dyn_cond_mean,
            fmt_opt(r.dyn_cond_ci95),
            r.dec_gain_mean,
            fmt_opt(r.dec_gain_ci95),
            r.dec_gain_median,
            r.latent_err_mean,
            fmt_opt(r.latent_err_ci95)
        );
    }
    if !t4.is_empty() {
        let _ = writeln!(
            md,
            "\n## Paired differences at H = {hmax} (shared-target)\n\n| method | metric | Δ | std | ci95 | p |\n|---|---|---|---|---|---|"
        );
        for r in &t4 {
            let _ = writeln!(
                md,
                "| {} | {} | {:+.3e} | {} | {} | {} |",
                r.method,
                r.metric,
                r.delta_mean,
                fmt_opt(r.std),
                fmt_opt(r.ci95),
                fmt_opt(r.p_value)
            );
        }
    }
    let _ = writeln!(md, "\nFigures: `fig1_rel_max.svg`, `fig2_rel_mean.svg`.");
    write_text(&dir.join("report.md"), &md)
}
