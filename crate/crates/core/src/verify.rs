//! One-shot self-check of the numerical core: bound sweeps, analytic
//! oracles, gradient checks, information identities and the escape-law fit.

use rand::Rng;
use serde::Serialize;

use crate::curvature::fisher_exact;
use crate::dist::{dirichlet_row, pinsker_bounds, CondTable};
use crate::error::Result;
use crate::info::{cond_mutual_info, mutual_info, Axis, JointHistogram};
use crate::model::{Activation, Arch, ModelState};
use crate::rng::RngStream;
use crate::sgd::{fit_escape_law, kramers_predict, EscapeTrialRecord, FitOptions};

/// Gradient of `log p_θ(y|x)` as produced by the code under test.
pub type GradFn = fn(&ModelState, &[f64], usize) -> Result<Vec<f64>>;

/// Relative-error denominator floor for gradient checks: coordinates whose
/// true derivative is below this are compared in absolute terms.
pub const GRAD_REL_FLOOR: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst measured discrepancy (or the measured quantity for fits).
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<22} measured={:.3e} tol={:.1e}  {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.tolerance,
                c.detail
            ));
        }
        out.push_str(if self.passed {
            "all checks passed\n"
        } else {
            "verification FAILED\n"
        });
        out
    }
}

fn check(name: &str, measured: f64, tolerance: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: measured <= tolerance,
        measured,
        tolerance,
        detail,
    }
}

fn fail(name: &str, tolerance: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: false,
        measured: f64::INFINITY,
        tolerance,
        detail,
    }
}

/// Run every check with the library's own gradient.
pub fn run_verification(seed: u64) -> VerifyReport {
    run_verification_with(seed, |m, x, y| m.grad_logp(x, y))
}

/// Run every check with `grad` standing in for the autodiff gradient.
pub fn run_verification_with(seed: u64, grad: GradFn) -> VerifyReport {
    let mut checks = vec![
        pinsker_check(seed).unwrap_or_else(|e| fail("pinsker_sweep", 1e-12, e.to_string())),
        fisher_check().unwrap_or_else(|e| fail("fisher_softmax", 1e-10, e.to_string())),
        gradient_check(seed, grad)
            .unwrap_or_else(|e| fail("gradient_check", GRAD_TOL, e.to_string())),
    ];
    match cmi_checks(seed) {
        Ok(mut c) => checks.append(&mut c),
        Err(e) => checks.push(fail("cmi_chain_rule", 1e-10, e.to_string())),
    }
    checks.push(
        escape_fit_check(seed).unwrap_or_else(|e| fail("escape_fit_closed_loop", 0.05, e.to_string())),
    );
    VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn pinsker_check(seed: u64) -> Result<CheckResult> {
    let mut rng = RngStream::new(seed, 101);
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..1000 {
        let k = rng.random_range(2..=16);
        let t = CondTable::from_rows(vec![dirichlet_row(k, &mut rng)?])?;
        let r = pinsker_bounds(&t, 0)?;
        let excess = (r.sup_dev - r.sup_bound).max(r.pair_dev - r.pair_bound);
        worst = worst.max(excess);
        if !r.holds(1e-12) {
            violations += 1;
        }
    }
    let mut c = check(
        "pinsker_sweep",
        worst.max(0.0),
        1e-12,
        format!("1000 rows, {violations} violations, worst excess {worst:.3e}"),
    );
    c.passed = violations == 0;
    Ok(c)
}

fn fisher_check() -> Result<CheckResult> {
    let mut worst = 0.0_f64;
    for logits in [
        vec![0.0; 4],
        vec![1.0, -0.5, 0.25],
        vec![2.0, 0.0, -1.0, 0.5, 3.0],
    ] {
        let k = logits.len();
        let m = ModelState::from_theta(Arch::mlp(0, &[], Activation::Identity, k), logits.clone())?;
        let t = CondTable::from_rows(vec![vec![1.0 / k as f64; k]])?;
        let f = fisher_exact(&m, &[vec![]], &t)?;
        let mat = f.matrix.expect("small model has a dense Fisher");
        let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - zmax).exp()).sum();
        let p: Vec<f64> = logits.iter().map(|l| (l - zmax).exp() / z).collect();
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { p[i] - p[i] * p[i] } else { -p[i] * p[j] };
                worst = worst.max((mat.get(i, j) - want).abs());
            }
        }
        if k == 4 {
            worst = worst.max((f.trace - 0.75).abs());
        }
    }
    Ok(check(
        "fisher_softmax",
        worst,
        1e-10,
        "exact Fisher vs diag(p) - p p^T on 3 logit vectors".into(),
    ))
}

fn architectures() -> Vec<Arch> {
    let mut out = Vec::new();
    for activation in [Activation::Tanh, Activation::SoftRelu] {
        for width in [2, 5, 16] {
            for depth in 1..=3 {
                for bias in [true, false] {
                    let arch = Arch::mlp(3, &vec![width; depth], activation, 4);
                    out.push(if bias { arch } else { arch.without_bias() });
                }
            }
        }
    }
    out
}

fn gradient_check(seed: u64, grad: GradFn) -> Result<CheckResult> {
    let mut rng = RngStream::new(seed, 102);
    let mut worst = 0.0_f64;
    let mut where_worst = String::new();
    let archs = architectures();
    for (a, arch) in archs.iter().enumerate() {
        let m = ModelState::init(arch.clone(), &mut rng)?;
        let x: Vec<f64> = (0..arch.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = rng.random_range(0..arch.outputs);
        let g = grad(&m, &x, y)?;
        let coords: Vec<usize> = if m.k() <= 24 {
            (0..m.k()).collect()
        } else {
            (0..24).map(|_| rng.random_range(0..m.k())).collect()
        };
        for j in coords {
            let mut plus = m.clone();
            plus.theta_mut()[j] += FD_STEP;
            let mut minus = m.clone();
            minus.theta_mut()[j] -= FD_STEP;
            let fd = (plus.log_probs(&x)?[y] - minus.log_probs(&x)?[y]) / (2.0 * FD_STEP);
            let got = g.get(j).copied().unwrap_or(f64::NAN);
            let rel = (got - fd).abs() / fd.abs().max(got.abs()).max(GRAD_REL_FLOOR);
            let rel = if rel.is_nan() { f64::INFINITY } else { rel };
            if rel > worst {
                worst = rel;
                where_worst = format!("architecture {a}, coordinate {j}");
            }
        }
    }
    Ok(check(
        "gradient_check",
        worst,
        GRAD_TOL,
        format!("{} architectures; worst at {where_worst}", archs.len()),
    ))
}

fn brute_cmi(counts: &[u64], na: usize, nb: usize, nc: usize) -> f64 {
    let n: u64 = counts.iter().sum();
    let n = n as f64;
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
                let cc: f64 = (0..na).flat_map(|aa| (0..nb).map(move |bb| (aa, bb))).map(|(aa, bb)| at(aa, bb, c)).sum();
                total += abc / n * (abc * cc / (ac * bc)).ln();
            }
        }
    }
    total.max(0.0)
}

fn cmi_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = RngStream::new(seed, 103);
    let mut worst = 0.0_f64;
    let mut worst_brute = 0.0_f64;
    for _ in 0..200 {
        let (na, nb, nc) = (
            rng.random_range(2..6),
            rng.random_range(2..6),
            rng.random_range(2..6),
        );
        let counts: Vec<u64> = (0..na * nb * nc).map(|_| rng.random_range(0..20)).collect();
        if counts.iter().all(|&c| c == 0) {
            continue;
        }
        let h = JointHistogram::from_counts(
            vec![Axis::new("a", na), Axis::new("b", nb), Axis::new("c", nc)],
            counts.clone(),
        )?;
        let cmi = cond_mutual_info(&h, "a", "b", "c")?;
        let chain = h.group_mutual_info(&["a"], &["b", "c"], &[])? - mutual_info(&h, "a", "c")?;
        worst = worst.max((cmi - chain).abs());
        worst_brute = worst_brute.max((cmi - brute_cmi(&counts, na, nb, nc)).abs());
    }
    Ok(vec![
        check(
            "cmi_chain_rule",
            worst,
            1e-10,
            "I(a;b|c) = I(a;b,c) - I(a;c) on 200 random histograms".into(),
        ),
        check(
            "cmi_triple_sum",
            worst_brute,
            1e-12,
            "plug-in CMI vs direct triple summation".into(),
        ),
    ])
}

fn escape_fit_check(seed: u64) -> Result<CheckResult> {
    let mut rng = RngStream::new(seed, 104);
    let (ha, hb, p) = (2.0, 1.0, 0.4);
    let true_slope = 2.0 * (p / ha + (1.0 - p) / hb);
    let mut records = Vec::new();
    for (barrier, batch, eta) in [
        (0.05, 4, 0.1),
        (0.05, 6, 0.1),
        (0.1, 4, 0.1),
        (0.1, 5, 0.1),
        (0.15, 4, 0.1),
        (0.1, 4, 0.05),
    ] {
        let tau = kramers_predict(barrier, eta, batch as f64, ha, hb, p)?;
        let noise: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.05;
        let steps = (tau * noise.exp() / eta).round() as u64;
        for trial in 0..50 {
            records.push(EscapeTrialRecord {
                landscape_id: "synthetic".into(),
                barrier,
                eta,
                batch,
                seed,
                trial,
                exited: true,
                first_exit_step: steps,
                max_steps: u64::MAX,
                max_transverse: 0.0,
                min_along_path: 0.0,
            });
        }
    }
    let fit = fit_escape_law(&records, Some((ha, hb)), FitOptions::default())?;
    let rel = (fit.slope / true_slope - 1.0).abs();
    Ok(check(
        "escape_fit_closed_loop",
        rel,
        0.05,
        format!("slope {:.4} vs {true_slope:.4}, R^2 {:.4}", fit.slope, fit.r_squared),
    ))
}
