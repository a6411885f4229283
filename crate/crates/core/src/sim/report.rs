//! Standard simulation grids and report output (CSV and aligned text).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::dgp::{DgpConfig, DgpId};
use super::mc::{McCell, McMethod, McReport, McRow, McSpec, McTask};

/// `(N, T)` combinations of the standard grids.
pub const NT_GRID: [(usize, usize); 6] = [(50, 5), (50, 10), (50, 20), (100, 5), (100, 10), (100, 20)];
pub const SIGMAS: [f64; 2] = [0.5, 0.75];
/// `(mu_pi, sigma_pi)` pairs of the homogeneous-slope design.
pub const C1_PI: [(f64, f64); 4] = [(0.5, 1.0), (1.0, 1.0), (0.5, 1.25), (1.0, 1.25)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableId {
    /// Mean Rand index.
    #[serde(rename = "1")]
    T1,
    /// Mean Hausdorff distance of pre-estimates.
    #[serde(rename = "2")]
    T2,
    /// Mean Hausdorff distance of post-estimates.
    #[serde(rename = "3")]
    T3,
    /// Selection frequencies of `G`.
    #[serde(rename = "c1")]
    C1,
    /// Mean and SD of the slope under homogeneous coefficients.
    #[serde(rename = "c2")]
    C2,
}

impl FromStr for TableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" => Ok(TableId::T1),
            "2" => Ok(TableId::T2),
            "3" => Ok(TableId::T3),
            "c1" => Ok(TableId::C1),
            "c2" => Ok(TableId::C2),
            other => Err(Error::InvalidInput(format!("unknown table `{other}` (expected 1, 2, 3, c1 or c2)"))),
        }
    }
}

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TableId::T1 => "1",
            TableId::T2 => "2",
            TableId::T3 => "3",
            TableId::C1 => "c1",
            TableId::C2 => "c2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    RandIndex,
    PreHausdorff,
    PostHausdorff,
    Selection,
    Moments,
}

impl TableId {
    pub fn metric(self) -> Metric {
        match self {
            TableId::T1 => Metric::RandIndex,
            TableId::T2 => Metric::PreHausdorff,
            TableId::T3 => Metric::PostHausdorff,
            TableId::C1 => Metric::Selection,
            TableId::C2 => Metric::Moments,
        }
    }

    pub fn methods(self) -> Vec<McMethod> {
        use McMethod::*;
        match self {
            TableId::T1 | TableId::T3 => vec![Ig, TwoSls, Tgfe2, TgfeQuarter, Ugfe],
            TableId::T2 => vec![TwoSls, Tgfe2, TgfeQuarter, Ugfe],
            TableId::C1 => vec![Ig, Tgfe2, Ugfe],
            TableId::C2 => vec![Ig, TwoSls, Tgfe2, Ugfe],
        }
    }

    pub fn cells(self) -> Vec<McCell> {
        let methods = self.methods();
        let mut cells = Vec::new();
        match self {
            TableId::T1 | TableId::T2 | TableId::T3 | TableId::C1 => {
                let (sigmas, task): (&[f64], McTask) = if self == TableId::C1 {
                    (&SIGMAS[..1], McTask::Select)
                } else {
                    (&SIGMAS, McTask::Classify)
                };
                for dgp in DgpId::GROUPED {
                    for &(n, t) in &NT_GRID {
                        for &sigma in sigmas {
                            cells.push(McCell {
                                dgp: DgpConfig::new(dgp, n, t, sigma),
                                methods: methods.clone(),
                                task,
                            });
                        }
                    }
                }
            }
            TableId::C2 => {
                for &(mu_pi, sigma_pi) in &C1_PI {
                    for &(n, t) in &NT_GRID {
                        cells.push(McCell {
                            dgp: DgpConfig {
                                mu_pi,
                                sigma_pi,
                                ..DgpConfig::new(DgpId::C1, n, t, 0.5)
                            },
                            methods: methods.clone(),
                            task: McTask::Moments,
                        });
                    }
                }
            }
        }
        cells
    }

    pub fn spec(self, n_reps: usize, n_starts: usize, master_seed: u64) -> McSpec {
        McSpec {
            cells: self.cells(),
            n_reps,
            n_starts,
            master_seed,
            ..Default::default()
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per (cell, method). Missing values are empty fields.
pub fn write_csv<W: Write>(report: &McReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = [
        "cell",
        "dgp",
        "n",
        "t",
        "sigma",
        "mu_pi",
        "sigma_pi",
        "method",
        "task",
        "reps_ok",
        "reps_failed",
        "mean_ri",
        "mean_pre_hausdorff",
        "mean_post_hausdorff",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=report.g_max).map(|g| format!("pct_g{g}")));
    header.extend(["mean_beta".to_string(), "sd_beta".to_string()]);
    w.write_record(&header)?;
    for r in &report.rows {
        let task = match r.task {
            McTask::Classify => "classify",
            McTask::Select => "select",
            McTask::Moments => "moments",
        };
        let mut rec = vec![
            r.cell.to_string(),
            r.dgp.to_string(),
            r.n.to_string(),
            r.t.to_string(),
            r.sigma.to_string(),
            r.mu_pi.to_string(),
            r.sigma_pi.to_string(),
            r.method.label().to_string(),
            task.to_string(),
            r.reps_ok.to_string(),
            r.reps_failed.to_string(),
            opt(r.mean_ri),
            opt(r.mean_pre_hausdorff),
            opt(r.mean_post_hausdorff),
        ];
        for g in 0..report.g_max {
            rec.push(r.select_freq.get(g).map(|v| v.to_string()).unwrap_or_default());
        }
        rec.push(opt(r.mean_beta));
        rec.push(opt(r.sd_beta));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv output>".into(),
        source: e,
    })?;
    Ok(())
}

fn unique<T: PartialEq + Copy>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for v in items {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn fmt3(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "NA".into())
}

fn align(lines: &[Vec<String>]) -> String {
    let cols = lines.iter().map(|l| l.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| lines.iter().filter_map(|l| l.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for l in lines {
        let cells: Vec<String> = l
            .iter()
            .enumerate()
            .map(|(c, s)| if c < 3 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Aligned text table: rows are designs and `(N, T)`, columns are noise
/// levels crossed with methods (or methods crossed with `G`, or with
/// mean/SD).
pub fn render_text(report: &McReport, metric: Metric) -> String {
    let methods = unique(report.rows.iter().map(|r| r.method));
    let find = |pred: &dyn Fn(&McRow) -> bool, m: McMethod| report.rows.iter().find(|r| r.method == m && pred(r));
    let mut lines: Vec<Vec<String>> = Vec::new();
    match metric {
        Metric::RandIndex | Metric::PreHausdorff | Metric::PostHausdorff => {
            let sigmas = unique(report.rows.iter().map(|r| r.sigma.to_bits()));
            let mut head = vec!["DGP".to_string(), "N".to_string(), "T".to_string()];
            for s in &sigmas {
                for m in &methods {
                    head.push(format!("{}@{}", m.label(), f64::from_bits(*s)));
                }
            }
            lines.push(head);
            for (dgp, n, t) in unique(report.rows.iter().map(|r| (r.dgp, r.n, r.t))) {
                let mut line = vec![dgp.to_string(), n.to_string(), t.to_string()];
                for s in &sigmas {
                    for &m in &methods {
                        let row = find(&|r| r.dgp == dgp && r.n == n && r.t == t && r.sigma.to_bits() == *s, m);
                        line.push(fmt3(row.and_then(|r| match metric {
                            Metric::RandIndex => r.mean_ri,
                            Metric::PreHausdorff => r.mean_pre_hausdorff,
                            _ => r.mean_post_hausdorff,
                        })));
                    }
                }
                lines.push(line);
            }
        }
        Metric::Selection => {
            let mut head = vec!["DGP".to_string(), "N".to_string(), "T".to_string()];
            for m in &methods {
                for g in 1..=report.g_max {
                    head.push(format!("{}:{g}", m.label()));
                }
            }
            lines.push(head);
            for (dgp, n, t, s) in unique(report.rows.iter().map(|r| (r.dgp, r.n, r.t, r.sigma.to_bits()))) {
                let mut line = vec![dgp.to_string(), n.to_string(), t.to_string()];
                for &m in &methods {
                    let row = find(&|r| r.dgp == dgp && r.n == n && r.t == t && r.sigma.to_bits() == s, m);
                    for g in 0..report.g_max {
                        line.push(
                            row.and_then(|r| r.select_freq.get(g))
                                .map(|v| format!("{v:.0}"))
                                .unwrap_or_else(|| "NA".into()),
                        );
                    }
                }
                lines.push(line);
            }
        }
        Metric::Moments => {
            let mut head = vec!["(mu,sd_pi)".to_string(), "N".to_string(), "T".to_string()];
            for m in &methods {
                head.push(format!("{}:mean", m.label()));
                head.push(format!("{}:sd", m.label()));
            }
            lines.push(head);
            for (mu, sp, n, t) in unique(report.rows.iter().map(|r| (r.mu_pi.to_bits(), r.sigma_pi.to_bits(), r.n, r.t))) {
                let mut line = vec![
                    format!("({},{})", f64::from_bits(mu), f64::from_bits(sp)),
                    n.to_string(),
                    t.to_string(),
                ];
                for &m in &methods {
                    let row = find(
                        &|r| r.mu_pi.to_bits() == mu && r.sigma_pi.to_bits() == sp && r.n == n && r.t == t,
                        m,
                    );
                    line.push(fmt3(row.and_then(|r| r.mean_beta)));
                    line.push(fmt3(row.and_then(|r| r.sd_beta)));
                }
                lines.push(line);
            }
        }
    }
    let mut out = format!(
        "# {} replications, {} starts, master seed {}\n",
        report.n_reps, report.n_starts, report.master_seed
    );
    out.push_str(&align(&lines));
    out
}
