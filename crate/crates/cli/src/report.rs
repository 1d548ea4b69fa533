//! `infogap report`: aggregate run outputs in a directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use infogap_core::provenance::config_hash;
use infogap_core::sgd::{fit_escape_law, EscapeTrialRecord, FitOptions};
use infogap_core::stats::{iqr, median, spearman};
use serde::Serialize;

use crate::output::{parse_csv_header, Artifact};
use crate::CliError;

const GAP_HEADER: &str = infogap_core::gap::GapReport::CSV_HEADER;
const CURVATURE_HEADER: &str = "level,H_nats,trF_median,trF_iqr,bound";
const BRIDGE_HEADER: &str = "level,H_nats,barrier_median,escape_median,escape_lower_bounds,flagged";

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub file: String,
    pub kind: String,
    pub version: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapCell {
    pub level: usize,
    pub h_nats: f64,
    pub regime: String,
    pub runs: usize,
    pub gap_median: f64,
    pub gap_iqr: f64,
    pub trace_f_median: f64,
    pub trace_f_iqr: f64,
    pub cmi_l1_median: f64,
    pub cmi_l2_median: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeSpearman {
    pub regime: String,
    pub h_vs_gap: Option<f64>,
    pub h_vs_trace_f: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeFitRow {
    pub file: String,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub groups: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSpearman {
    pub file: String,
    pub statistic: String,
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Summary {
    pub inputs: Vec<InputFile>,
    pub warnings: Vec<String>,
    pub gap_cells: Vec<GapCell>,
    pub gap_spearman: Vec<RegimeSpearman>,
    pub escape_fits: Vec<EscapeFitRow>,
    pub level_spearman: Vec<LevelSpearman>,
}

fn reader(body: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(body.as_bytes())
}

fn num(s: &str) -> f64 {
    s.trim().parse().unwrap_or(f64::NAN)
}

fn finite(v: &[f64]) -> Vec<f64> {
    v.iter().copied().filter(|x| x.is_finite()).collect()
}

fn rank_corr(x: &[f64], y: &[f64]) -> Option<f64> {
    if y.iter().any(|v| !v.is_finite()) {
        return None;
    }
    spearman(x, y).ok().filter(|v| v.is_finite())
}

type GapRows = BTreeMap<(usize, String), (f64, Vec<[f64; 4]>)>;

fn read_gap(body: &str, into: &mut GapRows) -> Result<(), CliError> {
    for rec in reader(body).records() {
        let r = rec.map_err(|e| CliError::config(format!("bad gap row: {e}")))?;
        let level: usize = r[0]
            .parse()
            .map_err(|e| CliError::config(format!("bad level `{}`: {e}", &r[0])))?;
        let entry = into.entry((level, r[2].to_string())).or_insert((num(&r[1]), Vec::new()));
        entry.1.push([num(&r[7]), num(&r[8]), num(&r[9]), num(&r[10])]);
    }
    Ok(())
}

/// Build the summary and plot tables for `dir`. Errors with exit code 2 when
/// the directory holds no recognizable run output.
pub fn build_report(dir: &Path) -> Result<(Vec<Artifact>, Summary), CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<_> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();

    let mut summary = Summary::default();
    let mut gap_rows: GapRows = BTreeMap::new();
    for path in files {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut lines = text.lines();
        let Some((version, hash)) = lines.next().and_then(parse_csv_header) else {
            continue;
        };
        let columns = lines.next().unwrap_or("");
        let kind = match columns {
            GAP_HEADER => "gap_sweep",
            EscapeTrialRecord::CSV_HEADER => "escape_trials",
            CURVATURE_HEADER => "curvature",
            BRIDGE_HEADER => "bridge",
            _ => continue,
        };
        summary.inputs.push(InputFile {
            file: name.clone(),
            kind: kind.to_string(),
            version,
            config_hash: hash,
        });
        match kind {
            "gap_sweep" => read_gap(&text, &mut gap_rows)?,
            "escape_trials" => {
                let records = text
                    .lines()
                    .skip(2)
                    .filter(|l| !l.is_empty())
                    .map(EscapeTrialRecord::parse_csv_row)
                    .collect::<infogap_core::Result<Vec<_>>>()?;
                summary.escape_fits.push(match fit_escape_law(&records, None, FitOptions::default()) {
                    Ok(f) => {
                        summary.warnings.extend(f.warnings.iter().map(|w| format!("{name}: {w}")));
                        EscapeFitRow {
                            file: name.clone(),
                            slope: Some(f.slope),
                            intercept: Some(f.intercept),
                            r_squared: Some(f.r_squared),
                            groups: f.groups.len(),
                            error: None,
                        }
                    }
                    Err(e) => EscapeFitRow {
                        file: name.clone(),
                        slope: None,
                        intercept: None,
                        r_squared: None,
                        groups: 0,
                        error: Some(e.to_string()),
                    },
                });
            }
            _ => {
                let (h, stat): (Vec<f64>, Vec<f64>) = reader(&text)
                    .records()
                    .filter_map(|r| r.ok())
                    .map(|r| (num(&r[1]), num(&r[2])))
                    .unzip();
                summary.level_spearman.push(LevelSpearman {
                    file: name.clone(),
                    statistic: if kind == "curvature" { "trF_median" } else { "barrier_median" }.into(),
                    spearman: rank_corr(&h, &stat),
                });
            }
        }
    }
    if summary.inputs.is_empty() {
        return Err(CliError::config(format!(
            "no run outputs found in {}",
            dir.display()
        )));
    }

    let mut hashes: Vec<&str> = summary.inputs.iter().map(|i| i.config_hash.as_str()).collect();
    hashes.sort_unstable();
    hashes.dedup();
    if hashes.len() > 1 {
        summary.warnings.push(format!(
            "config hash mismatch: inputs come from {} different configs ({})",
            hashes.len(),
            hashes.join(", ")
        ));
    }
    let mut versions: Vec<&str> = summary.inputs.iter().map(|i| i.version.as_str()).collect();
    versions.sort_unstable();
    versions.dedup();
    if versions.len() > 1 {
        summary
            .warnings
            .push(format!("inputs written by different tool versions: {}", versions.join(", ")));
    }

    for ((level, regime), (h, runs)) in &gap_rows {
        let col = |i: usize| finite(&runs.iter().map(|r| r[i]).collect::<Vec<_>>());
        summary.gap_cells.push(GapCell {
            level: *level,
            h_nats: *h,
            regime: regime.clone(),
            runs: runs.len(),
            gap_median: median(&col(0)),
            gap_iqr: iqr(&col(0)),
            trace_f_median: median(&col(1)),
            trace_f_iqr: iqr(&col(1)),
            cmi_l1_median: median(&col(2)),
            cmi_l2_median: median(&col(3)),
        });
    }
    let mut regimes: Vec<String> = summary.gap_cells.iter().map(|c| c.regime.clone()).collect();
    regimes.sort();
    regimes.dedup();
    for regime in regimes {
        let cells: Vec<&GapCell> = summary.gap_cells.iter().filter(|c| c.regime == regime).collect();
        let h: Vec<f64> = cells.iter().map(|c| c.h_nats).collect();
        summary.gap_spearman.push(RegimeSpearman {
            regime,
            h_vs_gap: rank_corr(&h, &cells.iter().map(|c| c.gap_median).collect::<Vec<_>>()),
            h_vs_trace_f: rank_corr(&h, &cells.iter().map(|c| c.trace_f_median).collect::<Vec<_>>()),
        });
    }

    let hash = config_hash(&summary.inputs)?;
    let mut artifacts = Vec::new();
    if !summary.gap_cells.is_empty() {
        let mut body = String::from(
            "level,H_nats,regime,runs,gap_median,gap_iqr,trF_median,trF_iqr,cmi_l1_median,cmi_l2_median\n",
        );
        for c in &summary.gap_cells {
            body.push_str(&format!(
                "{},{:?},{},{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                c.level,
                c.h_nats,
                c.regime,
                c.runs,
                c.gap_median,
                c.gap_iqr,
                c.trace_f_median,
                c.trace_f_iqr,
                c.cmi_l1_median,
                c.cmi_l2_median
            ));
        }
        artifacts.push(Artifact::csv("report_gap.csv", &hash, &body));
    }
    if !summary.escape_fits.is_empty() {
        let mut body = String::from("file,slope,intercept,r_squared,groups\n");
        for f in &summary.escape_fits {
            let o = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:?}"));
            body.push_str(&format!(
                "{},{},{},{},{}\n",
                f.file,
                o(f.slope),
                o(f.intercept),
                o(f.r_squared),
                f.groups
            ));
        }
        artifacts.push(Artifact::csv("report_escape.csv", &hash, &body));
    }
    artifacts.push(Artifact::json("report_summary.json", &hash, &summary)?);
    Ok((artifacts, summary))
}
