//! `infogap run`: execute one experiment config into artifacts.

use infogap_core::curvature::entropy_curvature_sweep;
use infogap_core::dist::make_entropy_family;
use infogap_core::gap::{gridworld_task, split_goals, sweep_entropy_gap};
use infogap_core::provenance::config_hash;
use infogap_core::sgd::bridge::entropy_escape_bridge;
use infogap_core::sgd::{
    censored_mean, fit_escape_law, kramers_predict, run_escape_trials, EscapeFit, EscapeTrialRecord,
    Landscape, LandscapeSpec,
};
use infogap_core::stats::spearman;
use infogap_core::RngStream;
use serde::Serialize;

use crate::config::{
    BridgeExperiment, CurvatureExperiment, EscapeExperiment, ExperimentConfig, GapExperiment,
};
use crate::output::Artifact;
use crate::CliError;

/// File names `execute` produces for `cfg`.
pub fn artifact_names(cfg: &ExperimentConfig) -> &'static [&'static str] {
    match cfg {
        ExperimentConfig::CurvatureSweep(_) => &[
            "curvature.csv",
            "curvature_trials.csv",
            "curvature.json",
            "run_manifest.json",
        ],
        ExperimentConfig::Escape(_) => &["escape_trials.csv", "escape_fit.json", "run_manifest.json"],
        ExperimentConfig::GapSweep(_) => &["gap_sweep.csv", "gap_summary.json", "run_manifest.json"],
        ExperimentConfig::EscapeBridge(_) => &["bridge.csv", "bridge.json", "run_manifest.json"],
    }
}

pub fn execute(cfg: &ExperimentConfig) -> Result<(Vec<Artifact>, Vec<String>), CliError> {
    let hash = config_hash(cfg).map_err(CliError::from)?;
    let mut warnings = Vec::new();
    let mut artifacts = match cfg {
        ExperimentConfig::CurvatureSweep(c) => curvature(c, &hash)?,
        ExperimentConfig::Escape(c) => escape(c, &hash, &mut warnings)?,
        ExperimentConfig::GapSweep(c) => gap(c, &hash)?,
        ExperimentConfig::EscapeBridge(c) => bridge(c, &hash)?,
    };
    artifacts.push(Artifact::json("run_manifest.json", &hash, cfg)?);
    Ok((artifacts, warnings))
}

#[derive(Serialize)]
struct CurvatureSummary<'a> {
    spearman_h_trace: Option<f64>,
    sweep: &'a infogap_core::curvature::CurvatureSweep,
}

fn curvature(c: &CurvatureExperiment, hash: &str) -> Result<Vec<Artifact>, CliError> {
    let family = make_entropy_family(c.levels, c.x_size, c.y_size, &mut RngStream::new(c.seed, 0))?;
    let sweep = entropy_curvature_sweep(&family, &c.sweep)?;
    let h: Vec<f64> = sweep.rows.iter().map(|r| r.h_nats).collect();
    let tr: Vec<f64> = sweep.rows.iter().map(|r| r.tr_f_median).collect();
    let mut trials = String::from("level,seed,H_nats,final_loss,trF,trace_bound,trace_bound_norm,bound_violated,diverged\n");
    for t in &sweep.trials {
        trials.push_str(&format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{},{}\n",
            t.level,
            t.seed,
            t.h_nats,
            t.final_loss,
            t.trace_f,
            t.trace_bound,
            t.trace_bound_norm,
            u8::from(t.bound_violated),
            u8::from(t.diverged)
        ));
    }
    let summary = CurvatureSummary {
        spearman_h_trace: spearman(&h, &tr).ok().filter(|v| v.is_finite()),
        sweep: &sweep,
    };
    Ok(vec![
        Artifact::csv("curvature.csv", hash, &sweep.to_csv()),
        Artifact::csv("curvature_trials.csv", hash, &trials),
        Artifact::json("curvature.json", hash, &summary)?,
    ])
}

#[derive(Serialize)]
struct SettingSummary {
    landscape_id: String,
    barrier: f64,
    eta: f64,
    batch: usize,
    path_parameter: Option<f64>,
    predicted_exponent: Option<f64>,
    kramers_steps: Option<f64>,
    uncensored: usize,
    mean_steps: Option<f64>,
}

#[derive(Serialize)]
struct EscapeSummary {
    settings: Vec<SettingSummary>,
    fit: Option<EscapeFit>,
    fit_error: Option<String>,
}

fn escape(
    c: &EscapeExperiment,
    hash: &str,
    warnings: &mut Vec<String>,
) -> Result<Vec<Artifact>, CliError> {
    let mut records: Vec<EscapeTrialRecord> = Vec::new();
    let mut settings = Vec::new();
    let mut curvatures = Vec::new();
    for (i, s) in c.settings.iter().enumerate() {
        let land = Landscape::new(s.landscape.clone())?;
        let recs = run_escape_trials(
            &land,
            s.eta,
            s.batch,
            c.trials,
            c.max_steps,
            c.seed.wrapping_add(i as u64),
        )?;
        let p = land.path_parameter();
        if let LandscapeSpec::DoubleWell { h_min, h_saddle, .. } = s.landscape {
            curvatures.push((h_min, h_saddle));
        }
        let kramers = p.and_then(|p| {
            kramers_predict(land.barrier(), s.eta, s.batch as f64, land.h_min(), land.h_saddle(), p)
                .ok()
                .map(|tau| tau / s.eta)
        });
        let refs: Vec<&EscapeTrialRecord> = recs.iter().collect();
        settings.push(SettingSummary {
            landscape_id: land.id.clone(),
            barrier: land.barrier(),
            eta: s.eta,
            batch: s.batch,
            path_parameter: p,
            predicted_exponent: land.predicted_exponent(s.eta, s.batch),
            kramers_steps: kramers,
            uncensored: recs.iter().filter(|r| r.exited).count(),
            mean_steps: censored_mean(&refs),
        });
        records.extend(recs);
    }
    let shared = curvatures.first().copied().filter(|first| {
        curvatures.len() == c.settings.len() && curvatures.iter().all(|k| k == first)
    });
    let (fit, fit_error) = match fit_escape_law(&records, shared, c.fit) {
        Ok(f) => {
            warnings.extend(f.warnings.iter().cloned());
            (Some(f), None)
        }
        Err(e) => {
            warnings.push(format!("escape-law fit skipped: {e}"));
            (None, Some(e.to_string()))
        }
    };
    let mut csv = String::from(EscapeTrialRecord::CSV_HEADER);
    csv.push('\n');
    for r in &records {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    Ok(vec![
        Artifact::csv("escape_trials.csv", hash, &csv),
        Artifact::json(
            "escape_fit.json",
            hash,
            &EscapeSummary {
                settings,
                fit,
                fit_error,
            },
        )?,
    ])
}

#[derive(Serialize)]
struct GapSummary<'a> {
    task_goals: Vec<usize>,
    pretrain_goals: Vec<usize>,
    rows: &'a [infogap_core::gap::GapSweepRow],
    correlations: &'a [infogap_core::gap::RegimeCorrelation],
}

fn gap(c: &GapExperiment, hash: &str) -> Result<Vec<Artifact>, CliError> {
    let (task_goals, pretrain_goals) = split_goals(
        c.width,
        c.task_goals,
        c.pretrain_goals,
        &mut RngStream::new(c.seed, 0),
    )?;
    let task = gridworld_task(c.width, &task_goals, c.encoding)?;
    let pretrain = if pretrain_goals.is_empty() {
        None
    } else {
        Some(gridworld_task(c.width, &pretrain_goals, c.encoding)?)
    };
    let sweep = sweep_entropy_gap(&task, pretrain.as_ref(), &c.sweep)?;
    let summary = GapSummary {
        task_goals,
        pretrain_goals,
        rows: &sweep.rows,
        correlations: &sweep.correlations,
    };
    Ok(vec![
        Artifact::csv("gap_sweep.csv", hash, &sweep.to_csv()),
        Artifact::json("gap_summary.json", hash, &summary)?,
    ])
}

fn bridge(c: &BridgeExperiment, hash: &str) -> Result<Vec<Artifact>, CliError> {
    let family = make_entropy_family(c.levels, c.x_size, c.y_size, &mut RngStream::new(c.seed, 0))?;
    let out = entropy_escape_bridge(&family, &c.bridge)?;
    Ok(vec![
        Artifact::csv("bridge.csv", hash, &out.to_csv()),
        Artifact::json("bridge.json", hash, &out)?,
    ])
}
