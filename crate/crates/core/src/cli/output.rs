//! CSV logs, summary text and SVG convergence plots.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::metrics::{MeanStd, RoundRecord, SeedSummary};

pub const CSV_HEADER: &str = "round,acc,loss,elapsed_ms,warmup";

/// Six significant digits, formatted like C's `%g`.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("LowerExp always has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_csv<W: Write>(mut w: W, records: &[RoundRecord], with_timing: bool) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        let acc = r.accuracy.map(fmt_sig6).unwrap_or_default();
        let loss = r.loss.map(fmt_sig6).unwrap_or_default();
        let elapsed = if with_timing { fmt_sig6(r.elapsed_ms) } else { "0".into() };
        writeln!(w, "{},{acc},{loss},{elapsed},{}", r.round, u8::from(r.warmup))?;
    }
    w.flush()
}

fn opt_field(key: &str, raw: &str) -> Result<Option<f64>> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| Error::Format(format!("bad {key} value `{raw}`")))
}

pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<RoundRecord>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == CSV_HEADER => {}
        Some(Err(e)) => return Err(e.into()),
        _ => return Err(Error::Format("missing CSV header".into())),
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!("expected 5 fields, got `{line}`")));
        }
        out.push(RoundRecord {
            round: fields[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad round `{}`", fields[0])))?,
            accuracy: opt_field("acc", fields[1])?,
            loss: opt_field("loss", fields[2])?,
            local_accuracy: None,
            elapsed_ms: opt_field("elapsed_ms", fields[3])?.unwrap_or(0.0),
            warmup: fields[4] == "1",
        });
    }
    Ok(out)
}

fn fmt_mean_std(m: &MeanStd, decimals: usize) -> String {
    match m.std {
        Some(s) => format!("{:.decimals$} ± {:.decimals$}", m.mean, s),
        None => format!("{:.decimals$} ± NA", m.mean),
    }
}

/// Rounds-to-target cell: `mean ± std`, `mean ± NA` for a single reaching
/// seed, `✗` when no seed reached the target.
pub fn rounds_cell(summary: &SeedSummary) -> String {
    summary
        .rounds
        .as_ref()
        .map_or_else(|| "✗".to_string(), |m| fmt_mean_std(m, 2))
}

pub fn accuracy_cell(summary: &SeedSummary) -> String {
    summary
        .final_accuracy
        .as_ref()
        .map_or_else(|| "-".to_string(), |m| fmt_mean_std(m, 2))
}

pub fn summary_text(algorithm: &str, seeds: &[u64], target: f64, summary: &SeedSummary) -> String {
    let mut s = String::new();
    let seed_list: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(s, "algorithm: {algorithm}");
    let _ = writeln!(s, "seeds: {}", seed_list.join(", "));
    let _ = writeln!(s, "target_accuracy: {}", fmt_sig6(target));
    let _ = writeln!(s, "reached: {}/{}", summary.reached, summary.seeds);
    let _ = writeln!(s, "rounds_to_target: {}", rounds_cell(summary));
    let _ = writeln!(s, "final_accuracy: {}", accuracy_cell(summary));
    s
}

/// Table with one row per algorithm.
pub fn report_table(rows: &[(String, SeedSummary)], target: f64) -> String {
    let head_rounds = format!("rounds_to_{}", fmt_sig6(target));
    let name_w = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(9);
    let cells: Vec<(String, String, String)> = rows
        .iter()
        .map(|(n, s)| (n.clone(), rounds_cell(s), accuracy_cell(s)))
        .collect();
    let rounds_w = cells
        .iter()
        .map(|c| c.1.chars().count())
        .chain([head_rounds.chars().count()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
    let _ = writeln!(
        out,
        "{}  {}  final_accuracy",
        pad("algorithm", name_w),
        pad(&head_rounds, rounds_w)
    );
    for (n, r, a) in cells {
        let _ = writeln!(out, "{}  {}  {a}", pad(&n, name_w), pad(&r, rounds_w));
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Accuracy-versus-round plot with one polyline per series.
pub fn convergence_svg(series: &[(String, Vec<RoundRecord>)], target: Option<f64>) -> String {
    const W: f64 = 800.0;
    const H: f64 = 480.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 180.0;
    const TOP: f64 = 20.0;
    const BOTTOM: f64 = 50.0;
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let max_round = series
        .iter()
        .flat_map(|(_, r)| r.iter().map(|x| x.round))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let x_of = |round: f64| LEFT + plot_w * round / max_round;
    let y_of = |acc: f64| TOP + plot_h * (1.0 - acc / 100.0);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for tick in (0..=100).step_by(20) {
        let y = y_of(tick as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{tick}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for i in 0..=5 {
        let r = max_round * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x_of(r),
            TOP + plot_h + 18.0,
            r.round()
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round</text>"#,
        LEFT + plot_w / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">test accuracy (%)</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    if let Some(t) = target {
        let y = y_of(t.clamp(0.0, 100.0));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#888888" stroke-dasharray="4 4"/>"##,
            LEFT + plot_w
        );
    }
    for (i, (name, records)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = records
            .iter()
            .filter_map(|r| r.accuracy.map(|a| format!("{:.2},{:.2}", x_of(r.round as f64), y_of(a))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0,
            lx + 26.0,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
