//! Result persistence: the records CSV and an SVG plot of robustness
//! curves (one line per rule, epsilon on a log x axis).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::pipeline::RunRecord;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed record at line {line}: {what}")]
    Malformed { line: usize, what: String },
    #[error("no records to report")]
    Empty,
}

type Result<T> = std::result::Result<T, ReportError>;

pub const CSV_HEADER: [&str; 9] = [
    "config_hash",
    "rule",
    "attack",
    "epsilon",
    "clean",
    "robust",
    "n_eval",
    "wall_time_s",
    "seed",
];

/// Writes the records CSV. Floats are printed in shortest round-trip
/// form, so `parse_csv(emit_csv(r)) == r`.
pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut w = csv::Writer::from_path(path).map_err(csv::Error::from)?;
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.config_hash.as_str(),
            r.rule.as_str(),
            r.attack.as_str(),
            &r.epsilon.to_string(),
            &r.clean.to_string(),
            &r.robust.to_string(),
            &r.n_eval.to_string(),
            &r.wall_time_s.to_string(),
            &r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

pub fn parse_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv::Error::from)?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2; // header is line 1
        let field = |k: usize| -> Result<&str> {
            row.get(k).ok_or(ReportError::Malformed {
                line,
                what: format!("missing column {}", CSV_HEADER[k]),
            })
        };
        let num = |k: usize| -> Result<f64> {
            field(k)?.parse().map_err(|_| ReportError::Malformed {
                line,
                what: format!("bad float in {}", CSV_HEADER[k]),
            })
        };
        out.push(RunRecord {
            config_hash: field(0)?.to_string(),
            rule: field(1)?.to_string(),
            attack: field(2)?.to_string(),
            epsilon: num(3)?,
            clean: num(4)?,
            robust: num(5)?,
            n_eval: field(6)?.parse().map_err(|_| ReportError::Malformed {
                line,
                what: "bad n_eval".into(),
            })?,
            wall_time_s: num(7)?,
            seed: field(8)?.parse().map_err(|_| ReportError::Malformed {
                line,
                what: "bad seed".into(),
            })?,
        });
    }
    Ok(out)
}

fn rule_color(rule: &str) -> &'static str {
    match rule {
        "bp" => "#d62728",
        "usf" => "#1f77b4",
        "frsf" => "#2ca02c",
        "brsf" => "#9467bd",
        "fa" => "#ff7f0e",
        _ => "#7f7f7f",
    }
}

const PANEL_W: f64 = 460.0;
const PANEL_H: f64 = 330.0;
const MARGIN_L: f64 = 52.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 42.0;

/// Maps an epsilon to an x pixel. Zero gets a dedicated leftmost slot;
/// positive values spread on a log scale.
fn x_pos(eps: f64, positives: &[f64]) -> f64 {
    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    if eps == 0.0 {
        return MARGIN_L;
    }
    let lo = positives.first().copied().unwrap_or(1e-3).log10();
    let hi = positives.last().copied().unwrap_or(1.0).log10();
    let t = if hi > lo { (eps.log10() - lo) / (hi - lo) } else { 0.5 };
    MARGIN_L + plot_w * (0.14 + 0.86 * t)
}

fn y_pos(metric: f64) -> f64 {
    let plot_h = PANEL_H - MARGIN_T - MARGIN_B;
    MARGIN_T + (1.0 - metric.clamp(0.0, 1.0)) * plot_h
}

/// Renders robustness-vs-epsilon curves: one panel per attack, one
/// polyline per rule, y in [0, 1].
pub fn emit_svg_plot(records: &[RunRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut attacks: Vec<String> = Vec::new();
    let mut rules: Vec<String> = Vec::new();
    for r in records {
        if !attacks.contains(&r.attack) {
            attacks.push(r.attack.clone());
        }
        if !rules.contains(&r.rule) {
            rules.push(r.rule.clone());
        }
    }
    let width = PANEL_W * attacks.len() as f64;
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{PANEL_H}\" \
         viewBox=\"0 0 {width} {PANEL_H}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    for (p, attack) in attacks.iter().enumerate() {
        let dx = PANEL_W * p as f64;
        let _ = write!(svg, "<g transform=\"translate({dx},0)\">\n");
        let mut eps: Vec<f64> = records
            .iter()
            .filter(|r| &r.attack == attack)
            .map(|r| r.epsilon)
            .collect();
        eps.sort_by(f64::total_cmp);
        eps.dedup();
        let positives: Vec<f64> = eps.iter().copied().filter(|&e| e > 0.0).collect();

        // Axes.
        let x0 = MARGIN_L;
        let x1 = PANEL_W - MARGIN_R;
        let y0 = y_pos(0.0);
        let y1 = y_pos(1.0);
        let _ = write!(
            svg,
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"#333\"/>\n\
             <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"#333\"/>\n"
        );
        for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let y = y_pos(tick);
            let _ = write!(
                svg,
                "<line x1=\"{}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{y}\" stroke=\"#333\"/>\n\
                 <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick}</text>\n",
                x0 - 4.0,
                x0 - 7.0,
                y + 4.0
            );
        }
        for &e in &eps {
            let x = x_pos(e, &positives);
            let _ = write!(
                svg,
                "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{}\" stroke=\"#333\"/>\n\
                 <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{e}</text>\n",
                y0 + 4.0,
                y0 + 18.0
            );
        }
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{attack}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">epsilon (log)</text>\n",
            PANEL_W / 2.0,
            PANEL_W / 2.0,
            PANEL_H - 8.0
        );

        for rule in &rules {
            let mut points: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| &r.attack == attack && &r.rule == rule)
                .map(|r| (r.epsilon, r.robust))
                .collect();
            if points.is_empty() {
                continue;
            }
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let path_points: Vec<String> = points
                .iter()
                .map(|(e, m)| format!("{:.2},{:.2}", x_pos(*e, &positives), y_pos(*m)))
                .collect();
            let _ = write!(
                svg,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\" data-rule=\"{rule}\" \
                 points=\"{}\"/>\n",
                rule_color(rule),
                path_points.join(" ")
            );
        }
        // Legend on the first panel only.
        if p == 0 {
            for (i, rule) in rules.iter().enumerate() {
                let y = MARGIN_T + 14.0 * i as f64 + 4.0;
                let _ = write!(
                    svg,
                    "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"3\" fill=\"{}\"/>\n\
                     <text x=\"{}\" y=\"{}\">{rule}</text>\n",
                    x1 - 64.0,
                    y - 3.0,
                    rule_color(rule),
                    x1 - 50.0,
                    y + 3.0
                );
            }
        }
        let _ = write!(svg, "</g>\n");
    }
    let _ = write!(svg, "</svg>\n");
    fs::write(path, svg).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rule: &str, attack: &str, eps: f64, robust: f64) -> RunRecord {
        RunRecord {
            config_hash: "abcdef012345".into(),
            rule: rule.into(),
            attack: attack.into(),
            epsilon: eps,
            clean: 0.91,
            robust,
            n_eval: 128,
            wall_time_s: 0.25,
            seed: 7,
        }
    }

    #[test]
    fn single_record_csv_has_header_and_one_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        emit_csv(&[record("bp", "fgsm", 0.1, 0.5)], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.trim_end().lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "config_hash,rule,attack,epsilon,clean,robust,n_eval,wall_time_s,seed"
        );
    }

    #[test]
    fn csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        let records = vec![
            record("bp", "fgsm", 0.0, 0.91),
            record("usf", "pgd", 0.001, 0.8517),
            record("frsf", "pgd", 0.5, 1.0 / 3.0),
        ];
        emit_csv(&records, &path).unwrap();
        let back = parse_csv(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn monotone_data_yields_monotone_polyline() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        let records = vec![
            record("bp", "pgd", 0.0, 0.9),
            record("bp", "pgd", 0.01, 0.7),
            record("bp", "pgd", 0.1, 0.4),
            record("bp", "pgd", 0.5, 0.1),
        ];
        emit_svg_plot(&records, &path).unwrap();
        let svg = fs::read_to_string(&path).unwrap();
        let points_attr = svg
            .split("points=\"")
            .nth(1)
            .and_then(|s| s.split('"').next())
            .expect("polyline present");
        let ys: Vec<f64> = points_attr
            .split_whitespace()
            .map(|p| p.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(ys.len(), 4);
        // Robust metric falls with epsilon, so pixel y must rise.
        for w in ys.windows(2) {
            assert!(w[1] >= w[0], "non-monotone polyline: {ys:?}");
        }
        // x positions must also be strictly increasing (0 slot first).
        let xs: Vec<f64> = points_attr
            .split_whitespace()
            .map(|p| p.split(',').next().unwrap().parse().unwrap())
            .collect();
        for w in xs.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn empty_records_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_csv(&[], &dir.path().join("r.csv")),
            Err(ReportError::Empty)
        ));
        assert!(matches!(
            emit_svg_plot(&[], &dir.path().join("p.svg")),
            Err(ReportError::Empty)
        ));
    }
}
