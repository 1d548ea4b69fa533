//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero when any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use infogap_core::curvature::{
    entropy_curvature_sweep, fisher_exact, score_bound_uniform, CurvatureSweepConfig,
};
use infogap_core::dist::{dirichlet_row, entropy_gap, make_entropy_family, CondTable};
use infogap_core::gap::{
    exact_expected_loss, gridworld_task, mc_expected_loss, run_regime, split_goals, sweep_entropy_gap,
    Encoding, GapConfig, GapReport, GapSweepConfig, Regime,
};
use infogap_core::info::{cond_mutual_info, Axis, JointHistogram};
use infogap_core::model::train::TrainConfig;
use infogap_core::model::{Activation, Arch, ModelState};
use infogap_core::sgd::{
    fit_escape_law, kramers_predict, run_escape_trials, EscapeTrialRecord, FitOptions, Landscape,
    LandscapeSpec,
};
use infogap_core::stats::{median, spearman};
use infogap_core::RngStream;
use rand::Rng;
use rand_distr::Exp1;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn pinsker() -> Outcome {
    let mut rng = RngStream::new(1, 0);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let k = rng.random_range(2..=16);
        let row = dirichlet_row(k, &mut rng).unwrap();
        let u = 1.0 / k as f64;
        let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum();
        let d = ((k as f64).ln() - h).max(0.0);
        let sup = row.iter().map(|p| (p - u).abs()).fold(0.0, f64::max);
        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let t = CondTable::from_rows(vec![row.clone()]).unwrap();
        if (entropy_gap(&t, 0).unwrap() - d).abs() > 1e-12 {
            violations += 1;
        }
        let excess = (sup - (d / 2.0).sqrt()).max((hi - lo) - (2.0 * d).sqrt());
        worst = worst.max(excess);
        if excess > 1e-12 {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("1000 rows, {violations} violations, worst excess {worst:.3e}"),
    )
}

fn fisher() -> Outcome {
    let mut worst = 0.0_f64;
    let mut rng = RngStream::new(2, 0);
    let mut logit_sets = vec![vec![0.0; 4]];
    for k in [2, 3, 5, 7] {
        logit_sets.push((0..k).map(|_| rng.random_range(-3.0..3.0)).collect());
    }
    let mut uniform_trace = f64::NAN;
    for logits in logit_sets {
        let k = logits.len();
        let m = ModelState::from_theta(Arch::mlp(0, &[], Activation::Identity, k), logits.clone()).unwrap();
        let t = CondTable::from_rows(vec![vec![1.0 / k as f64; k]]).unwrap();
        let f = fisher_exact(&m, &[vec![]], &t).unwrap();
        let mat = f.matrix.unwrap();
        let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - zmax).exp()).sum();
        let p: Vec<f64> = logits.iter().map(|l| (l - zmax).exp() / z).collect();
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { p[i] * (1.0 - p[i]) } else { -p[i] * p[j] };
                worst = worst.max((mat.get(i, j) - want).abs());
            }
        }
        if logits.iter().all(|&l| l == 0.0) {
            uniform_trace = f.trace;
        }
    }
    let trace_err = (uniform_trace - 0.75).abs();
    outcome(
        worst <= 1e-10 && trace_err <= 1e-10,
        format!("max entry error {worst:.3e}, uniform-4 trace {uniform_trace:.15}"),
    )
}

fn autodiff() -> Outcome {
    let mut rng = RngStream::new(3, 0);
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for act in [Activation::Tanh, Activation::SoftRelu, Activation::Identity] {
        for width in [2, 5, 16] {
            for depth in 0..=3 {
                for bias in [true, false] {
                    let mut arch = Arch::mlp(3, &vec![width; depth], act, 4);
                    if !bias {
                        arch = arch.without_bias();
                    }
                    let m = ModelState::init(arch, &mut rng).unwrap();
                    let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                    for y in 0..4 {
                        let g = m.grad_logp(&x, y).unwrap();
                        let mut theta = m.theta().to_vec();
                        let h = 1e-5;
                        let fd: Vec<f64> = (0..theta.len())
                            .map(|i| {
                                let orig = theta[i];
                                theta[i] = orig + h;
                                let up = m.with_theta(&theta).unwrap().log_probs(&x).unwrap()[y];
                                theta[i] = orig - h;
                                let down = m.with_theta(&theta).unwrap().log_probs(&x).unwrap()[y];
                                theta[i] = orig;
                                (up - down) / (2.0 * h)
                            })
                            .collect();
                        let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
                        worst = worst.max(diff / norm.max(1e-4));
                        cases += 1;
                    }
                }
            }
        }
    }
    outcome(
        worst <= 1e-4,
        format!("{cases} gradients, worst relative error {worst:.3e}"),
    )
}

fn brute_cmi(counts: &[u64], na: usize, nb: usize, nc: usize) -> f64 {
    let n = counts.iter().sum::<u64>() as f64;
    let at = |a: usize, b: usize, c: usize| counts[(a * nb + b) * nc + c] as f64;
    let mut total = 0.0;
    for a in 0..na {
        for b in 0..nb {
            for c in 0..nc {
                let abc = at(a, b, c);
                if abc == 0.0 {
                    continue;
                }
                let ac: f64 = (0..nb).map(|bb| at(a, bb, c)).sum();
                let bc: f64 = (0..na).map(|aa| at(aa, b, c)).sum();
                let cc: f64 = (0..na).map(|aa| (0..nb).map(|bb| at(aa, bb, c)).sum::<f64>()).sum();
                total += abc / n * (abc * cc / (ac * bc)).ln();
            }
        }
    }
    total
}

fn cmi() -> Outcome {
    let mut rng = RngStream::new(4, 0);
    let (mut chain, mut brute) = (0.0_f64, 0.0_f64);
    for _ in 0..200 {
        let (na, nb, nc) = (
            rng.random_range(2..=5),
            rng.random_range(2..=5),
            rng.random_range(2..=5),
        );
        let counts: Vec<u64> = (0..na * nb * nc)
            .map(|_| if rng.random::<f64>() < 0.2 { 0 } else { rng.random_range(1..100) })
            .collect();
        let h = JointHistogram::from_counts(
            vec![Axis::new("a", na), Axis::new("b", nb), Axis::new("c", nc)],
            counts.clone(),
        )
        .unwrap();
        let c = cond_mutual_info(&h, "a", "b", "c").unwrap();
        let joint = h.group_mutual_info(&["a"], &["b", "c"], &[]).unwrap();
        let ac = h.group_mutual_info(&["a"], &["c"], &[]).unwrap();
        chain = chain.max((c - (joint - ac)).abs());
        brute = brute.max((c - brute_cmi(&counts, na, nb, nc)).abs());
    }
    outcome(
        chain <= 1e-10 && brute <= 1e-12,
        format!("200 histograms, chain-rule error {chain:.3e}, triple-sum error {brute:.3e}"),
    )
}

fn escape() -> Outcome {
    let (ha, hb) = (2.0, 1.0);
    let well = |barrier| {
        Landscape::new(LandscapeSpec::DoubleWell {
            barrier,
            h_min: ha,
            h_saddle: hb,
            transverse: 1.0,
            dim: 2,
            noise_scale: 1.0,
        })
        .unwrap()
    };
    let settings = [
        (0.05, 4, 0.1),
        (0.05, 8, 0.1),
        (0.1, 6, 0.1),
        (0.05, 6, 0.05),
        (0.1, 8, 0.1),
    ];
    let mut records = Vec::new();
    let mut notes = Vec::new();
    let mut ok = true;
    for (i, &(barrier, batch, eta)) in settings.iter().enumerate() {
        let land = well(barrier);
        let exponent = land.predicted_exponent(eta, batch).unwrap();
        let recs = run_escape_trials(&land, eta, batch, 240, 10_000_000, 500 + i as u64).unwrap();
        let exits = recs.iter().filter(|r| r.exited).count();
        ok &= exponent <= 12.0 && exits >= 200;
        notes.push(format!("{exponent:.1}:{exits}"));
        records.extend(recs);
    }
    let fit = fit_escape_law(&records, Some((ha, hb)), FitOptions::default()).unwrap();
    ok &= fit.r_squared >= 0.9 && fit.slope > 0.0;

    let mut rng = RngStream::new(5, 0);
    let p = 0.4;
    let true_slope = 2.0 * (p / ha + (1.0 - p) / hb);
    let mut synthetic = Vec::new();
    for (barrier, batch, eta) in [(0.05, 4, 0.1), (0.05, 8, 0.1), (0.1, 6, 0.1), (0.1, 8, 0.1), (0.08, 5, 0.05)] {
        let tau = kramers_predict(barrier, eta, batch as f64, ha, hb, p).unwrap();
        for trial in 0..200 {
            let draw: f64 = rng.sample(Exp1);
            synthetic.push(EscapeTrialRecord {
                landscape_id: "synthetic".into(),
                barrier,
                eta,
                batch,
                seed: 5,
                trial,
                exited: true,
                first_exit_step: (tau * draw / eta * 1e3).round().max(1.0) as u64,
                max_steps: u64::MAX,
                max_transverse: 0.0,
                min_along_path: 0.0,
            });
        }
    }
    let closed = fit_escape_law(&synthetic, Some((ha, hb)), FitOptions::default()).unwrap();
    let rel = (closed.slope / true_slope - 1.0).abs();
    ok &= rel <= 0.05;
    outcome(
        ok,
        format!(
            "exponent:exits [{}], slope {:.4}, R^2 {:.5}; closed loop slope {:.4} vs {true_slope:.4} ({:.2}%)",
            notes.join(" "),
            fit.slope,
            fit.r_squared,
            closed.slope,
            rel * 100.0
        ),
    )
}

fn curvature_config() -> CurvatureSweepConfig {
    CurvatureSweepConfig {
        hidden: vec![16],
        activation: Activation::Tanh,
        bias: false,
        train: TrainConfig {
            steps: 5000,
            lr: 0.01,
            weight_decay: 0.05,
            ..TrainConfig::default()
        },
        seeds: (0..10).collect(),
        delta_theta: 1e-2,
        eps_floor: 1e-6,
    }
}

fn curvature() -> Outcome {
    let family = make_entropy_family(6, 8, 4, &mut RngStream::new(11, 0)).unwrap();
    let sweep = entropy_curvature_sweep(&family, &curvature_config()).unwrap();
    let h: Vec<f64> = sweep.rows.iter().map(|r| r.h_nats).collect();
    let tr: Vec<f64> = sweep.rows.iter().map(|r| r.tr_f_median).collect();
    let rho = spearman(&h, &tr).unwrap();
    let seeds_ok = sweep.rows.iter().all(|r| r.seeds_used >= 10);

    let mut bound_monotone = true;
    let mut prev: Option<(f64, f64)> = None;
    for t in family.iter().rev() {
        let d = entropy_gap(t, 0).unwrap();
        let b = score_bound_uniform(t, 0.05, 0.01, 100).unwrap().trace_bound;
        if let Some((pd, pb)) = prev {
            bound_monotone &= d > pd && b > pb;
        }
        prev = Some((d, b));
    }
    outcome(
        rho <= -0.8 && seeds_ok && bound_monotone && sweep.rows.len() >= 5,
        format!(
            "{} levels x 10 seeds, Spearman(H, median trF) {rho:.3}, bound monotone in D_x: {bound_monotone}",
            sweep.rows.len()
        ),
    )
}

fn gap_config() -> GapConfig {
    GapConfig {
        hidden: vec![32, 32],
        encoder_layers: 2,
        coverage: 0.3,
        train: TrainConfig {
            steps: 5000,
            ..TrainConfig::default()
        },
        pretrain: TrainConfig {
            steps: 5000,
            ..TrainConfig::default()
        },
        ..GapConfig::default()
    }
}

fn frozen_vs_scratch(reports: &mut Vec<GapReport>) -> Outcome {
    let (task_goals, pre_goals) = split_goals(5, 6, 6, &mut RngStream::new(2024, 0)).unwrap();
    let task = gridworld_task(5, &task_goals, Encoding::Coordinate).unwrap();
    let pre = gridworld_task(5, &pre_goals, Encoding::Coordinate).unwrap();
    let cfg = gap_config();
    let (mut frozen, mut scratch) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let f = run_regime(&task, Some(&pre), Regime::Frozen, 100, &cfg, seed).unwrap();
        let s = run_regime(&task, Some(&pre), Regime::Scratch, 100, &cfg, seed).unwrap();
        if (f.train_loss - s.train_loss).abs() <= 0.1 {
            frozen.push(f.gap);
            scratch.push(s.gap);
        }
        reports.push(f);
        reports.push(s);
    }
    let (mf, ms) = (median(&frozen), median(&scratch));
    outcome(
        !frozen.is_empty() && mf <= ms,
        format!(
            "{} of 10 seeds matched in train loss, median gap frozen {mf:.4} vs scratch {ms:.4}",
            frozen.len()
        ),
    )
}

fn gap_bookkeeping(reports: &[GapReport]) -> Outcome {
    let worst_identity = reports
        .iter()
        .map(|r| (r.gap - (r.expected_loss - r.train_loss)).abs())
        .fold(0.0, f64::max);
    let base = gridworld_task(4, &[1, 6, 11], Encoding::Coordinate).unwrap();
    let task = base.with_expert(base.expert().mixed_with_uniform(0.3).unwrap()).unwrap();
    let arch = Arch::mlp(task.input_dim(), &[8], Activation::Tanh, task.ny());
    let mut worst_z = 0.0_f64;
    let mut ok = worst_identity <= 1e-12 && !reports.is_empty();
    for seed in 0..5 {
        let mut rng = RngStream::new(80 + seed, 0);
        let mut m = ModelState::init(arch.clone(), &mut rng).unwrap();
        m.theta_mut().iter_mut().for_each(|v| *v *= 3.0);
        let exact = exact_expected_loss(&m, &task).unwrap();
        let (mc, se) = mc_expected_loss(&m, &task, 1_000_000, &mut rng).unwrap();
        let z = (mc - exact).abs() / se;
        worst_z = worst_z.max(z);
        ok &= z <= 3.0;
    }
    outcome(
        ok,
        format!(
            "{} reports, worst identity error {worst_identity:.1e}; 5 models, worst |MC - exact| {worst_z:.2} SE",
            reports.len()
        ),
    )
}

fn sweep_csvs(threads: usize) -> String {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let (tg, pg) = split_goals(3, 2, 2, &mut RngStream::new(9, 0)).unwrap();
        let task = gridworld_task(3, &tg, Encoding::Coordinate).unwrap();
        let pre = gridworld_task(3, &pg, Encoding::Coordinate).unwrap();
        let gap = sweep_entropy_gap(
            &task,
            Some(&pre),
            &GapSweepConfig {
                levels: 3,
                n: 50,
                regimes: vec![Regime::Frozen, Regime::Finetune, Regime::Scratch],
                seeds: vec![0, 1],
                model: GapConfig {
                    hidden: vec![8, 8],
                    train: TrainConfig {
                        steps: 200,
                        ..TrainConfig::default()
                    },
                    pretrain: TrainConfig {
                        steps: 200,
                        ..TrainConfig::default()
                    },
                    ..GapConfig::default()
                },
            },
        )
        .unwrap();
        let family = make_entropy_family(3, 4, 3, &mut RngStream::new(9, 1)).unwrap();
        let curv = entropy_curvature_sweep(
            &family,
            &CurvatureSweepConfig {
                seeds: vec![0, 1],
                train: TrainConfig {
                    steps: 300,
                    ..curvature_config().train
                },
                ..curvature_config()
            },
        )
        .unwrap();
        let land = Landscape::new(LandscapeSpec::DoubleWell {
            barrier: 0.05,
            h_min: 2.0,
            h_saddle: 1.0,
            transverse: 1.0,
            dim: 3,
            noise_scale: 1.0,
        })
        .unwrap();
        let esc: String = run_escape_trials(&land, 0.1, 4, 30, 100_000, 9)
            .unwrap()
            .iter()
            .map(|r| r.csv_row() + "\n")
            .collect();
        format!("{}{}{esc}", gap.to_csv(), curv.to_csv())
    })
}

fn reproducible() -> Outcome {
    let a = sweep_csvs(1);
    let b = sweep_csvs(1);
    let c = sweep_csvs(3);
    outcome(
        a == b && a == c,
        format!("{} bytes, repeat identical: {}, across thread counts: {}", a.len(), a == b, a == c),
    )
}

fn main() -> ExitCode {
    let mut gap_reports = Vec::new();
    let mut all = true;
    let mut report = |id: u32, name: &str, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let pass = o.passed && took <= budget;
        all &= pass;
        println!(
            "criterion {id} {:<28} {} ({:.2}s, budget {}s): {}",
            name,
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs(),
            o.detail
        );
    };
    report(1, "pinsker_sweep", Duration::from_secs(1), &mut pinsker);
    report(2, "fisher_softmax", Duration::from_secs(1), &mut fisher);
    report(3, "autodiff_vs_fd", Duration::from_secs(30), &mut autodiff);
    report(4, "cmi_identities", Duration::from_secs(5), &mut cmi);
    report(5, "escape_law", Duration::from_secs(600), &mut escape);
    report(6, "entropy_vs_curvature", Duration::from_secs(900), &mut curvature);
    report(7, "frozen_vs_scratch_gap", Duration::from_secs(900), &mut || {
        frozen_vs_scratch(&mut gap_reports)
    });
    let reports = std::mem::take(&mut gap_reports);
    report(8, "gap_bookkeeping", Duration::from_secs(60), &mut || gap_bookkeeping(&reports));
    report(9, "byte_identical_sweeps", Duration::from_secs(600), &mut reproducible);
    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
