//! Finite conditional distributions `p(y|x)` and entropy-gap machinery.
//!
//! Entropies are in nats. Volumes use counting measure: `V_x` is the number
//! of action symbols in the per-input support set, and the uniform reference
//! `u_x` puts mass `1/V_x` on each of them.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

const ROW_TOL: f64 = 1e-12;

/// Finite conditional table `p(y|x)` with input marginal and per-input
/// support volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCondTable")]
pub struct CondTable {
    x_alphabet: Vec<String>,
    y_alphabet: Vec<String>,
    x_marginal: Vec<f64>,
    rows: Vec<Vec<f64>>,
    volumes: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCondTable {
    x_alphabet: Vec<String>,
    y_alphabet: Vec<String>,
    x_marginal: Vec<f64>,
    rows: Vec<Vec<f64>>,
    volumes: Option<Vec<f64>>,
}

impl TryFrom<RawCondTable> for CondTable {
    type Error = Error;

    fn try_from(raw: RawCondTable) -> Result<Self> {
        CondTable::new(
            raw.x_alphabet,
            raw.y_alphabet,
            raw.x_marginal,
            raw.rows,
            raw.volumes,
        )
    }
}

fn symbols(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn support_size(row: &[f64]) -> usize {
    row.iter().filter(|&&p| p > 0.0).count()
}

impl CondTable {
    /// Build and validate a table. When `volumes` is `None` each `V_x` is the
    /// size of the support of row `x`.
    pub fn new(
        x_alphabet: Vec<String>,
        y_alphabet: Vec<String>,
        x_marginal: Vec<f64>,
        rows: Vec<Vec<f64>>,
        volumes: Option<Vec<f64>>,
    ) -> Result<Self> {
        let volumes =
            volumes.unwrap_or_else(|| rows.iter().map(|r| support_size(r) as f64).collect());
        let t = Self {
            x_alphabet,
            y_alphabet,
            x_marginal,
            rows,
            volumes,
        };
        t.validate()?;
        Ok(t)
    }

    /// Table over generated symbols `x0..`, `y0..` with a uniform input marginal.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let nx = rows.len();
        let ny = rows.first().map_or(0, Vec::len);
        let marginal = vec![1.0 / nx.max(1) as f64; nx];
        Self::new(symbols("x", nx), symbols("y", ny), marginal, rows, None)
    }

    /// Same as [`CondTable::from_rows`] with explicit per-input volumes.
    pub fn from_rows_with_volumes(rows: Vec<Vec<f64>>, volumes: Vec<f64>) -> Result<Self> {
        let nx = rows.len();
        let ny = rows.first().map_or(0, Vec::len);
        let marginal = vec![1.0 / nx.max(1) as f64; nx];
        Self::new(
            symbols("x", nx),
            symbols("y", ny),
            marginal,
            rows,
            Some(volumes),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let nx = self.x_alphabet.len();
        let ny = self.y_alphabet.len();
        if nx == 0 || ny == 0 {
            return Err(Error::Validation("empty alphabet".into()));
        }
        if self.rows.len() != nx || self.x_marginal.len() != nx || self.volumes.len() != nx {
            return Err(Error::Validation(format!(
                "expected {nx} rows, marginal entries and volumes; got {}, {}, {}",
                self.rows.len(),
                self.x_marginal.len(),
                self.volumes.len()
            )));
        }
        check_distribution(&self.x_marginal, "x_marginal")?;
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != ny {
                return Err(Error::Validation(format!(
                    "row {i} has {} entries, expected {ny}",
                    row.len()
                )));
            }
            check_distribution(row, &format!("row {i}"))?;
            let v = self.volumes[i];
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!(
                    "volume of row {i} must be positive, got {v}"
                )));
            }
            if v + 1e-9 < support_size(row) as f64 {
                return Err(Error::Validation(format!(
                    "volume {v} of row {i} is smaller than its support"
                )));
            }
        }
        Ok(())
    }

    pub fn x_alphabet(&self) -> &[String] {
        &self.x_alphabet
    }

    pub fn y_alphabet(&self) -> &[String] {
        &self.y_alphabet
    }

    pub fn x_marginal(&self) -> &[f64] {
        &self.x_marginal
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x]
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn nx(&self) -> usize {
        self.x_alphabet.len()
    }

    pub fn ny(&self) -> usize {
        self.y_alphabet.len()
    }

    pub fn x_index(&self, symbol: &str) -> Result<usize> {
        self.x_alphabet
            .iter()
            .position(|s| s == symbol)
            .ok_or_else(|| Error::Argument(format!("unknown input symbol {symbol:?}")))
    }

    pub fn y_index(&self, symbol: &str) -> Result<usize> {
        self.y_alphabet
            .iter()
            .position(|s| s == symbol)
            .ok_or_else(|| Error::Argument(format!("unknown output symbol {symbol:?}")))
    }

    fn check_x(&self, x: usize) -> Result<()> {
        if x >= self.nx() {
            return Err(Error::Argument(format!(
                "input index {x} out of range ({} inputs)",
                self.nx()
            )));
        }
        Ok(())
    }

    /// Indices of the support set `𝒴_x`: every positive-probability action,
    /// padded with zero-probability actions in alphabet order until the set
    /// holds `⌊V_x⌋` symbols (capped at the alphabet size).
    pub fn support_set(&self, x: usize) -> Vec<usize> {
        let row = &self.rows[x];
        let mut set: Vec<usize> = (0..row.len()).filter(|&y| row[y] > 0.0).collect();
        let target = (self.volumes[x] + 1e-9).floor() as usize;
        let target = target.min(row.len());
        for y in 0..row.len() {
            if set.len() >= target {
                break;
            }
            if row[y] <= 0.0 {
                set.push(y);
            }
        }
        set.sort_unstable();
        set
    }

    /// Replace every row by `(1-λ)·row + λ·uniform` over the full action
    /// alphabet. Every action becomes part of `𝒴_x`, so `V_x = |𝒴|`.
    pub fn mixed_with_uniform(&self, lambda: f64) -> Result<CondTable> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Argument(format!("mixing weight {lambda} not in [0,1]")));
        }
        let ny = self.ny() as f64;
        let rows = self
            .rows
            .iter()
            .map(|row| mix_row(row, lambda, ny))
            .collect();
        CondTable::new(
            self.x_alphabet.clone(),
            self.y_alphabet.clone(),
            self.x_marginal.clone(),
            rows,
            Some(vec![ny; self.nx()]),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("table serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<CondTable> {
        serde_json::from_str(text).map_err(|e| Error::Validation(e.to_string()))
    }
}

fn mix_row(row: &[f64], lambda: f64, ny: f64) -> Vec<f64> {
    if lambda == 1.0 {
        return vec![1.0 / ny; row.len()];
    }
    row.iter()
        .map(|&p| (1.0 - lambda) * p + lambda / ny)
        .collect()
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Validation(format!("{what} has invalid entry {v}")));
    }
    let s = compensated_sum(p);
    if (s - 1.0).abs() > ROW_TOL {
        return Err(Error::Validation(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Shannon entropy of a probability vector in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    0.0 - p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// `H(Y|X) = Σ_x p(x) H(Y|X=x)` in nats.
pub fn cond_entropy(t: &CondTable) -> Result<f64> {
    t.validate()?;
    Ok(t.x_marginal
        .iter()
        .zip(&t.rows)
        .map(|(px, row)| px * entropy(row))
        .sum())
}

/// Entropy gap `D_x = ln V_x − H(Y|X=x)`.
pub fn entropy_gap(t: &CondTable, x: usize) -> Result<f64> {
    t.check_x(x)?;
    let v = t.volumes[x];
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::Validation(format!("volume {v} must be positive")));
    }
    Ok((v.ln() - entropy(&t.rows[x])).max(0.0))
}

/// `KL(p(·|x) ‖ u_x)` computed term by term over the support.
pub fn kl_to_uniform(t: &CondTable, x: usize) -> Result<f64> {
    t.check_x(x)?;
    let v = t.volumes[x];
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::Validation(format!("volume {v} must be positive")));
    }
    Ok(t.rows[x]
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (p * v).ln())
        .sum())
}

/// Measured deviations of a row from its uniform reference, together with
/// the Pinsker-type bounds they must respect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinskerReport {
    /// `max_{y∈𝒴_x} |p(y|x) − 1/V_x|`
    pub sup_dev: f64,
    /// `max_{y1,y2∈𝒴_x} |p(y1|x) − p(y2|x)|`
    pub pair_dev: f64,
    /// `√(D_x/2)`
    pub sup_bound: f64,
    /// `√(2 D_x)`
    pub pair_bound: f64,
    pub gap: f64,
}

impl PinskerReport {
    pub fn holds(&self, slack: f64) -> bool {
        self.sup_dev <= self.sup_bound + slack && self.pair_dev <= self.pair_bound + slack
    }
}

pub fn pinsker_bounds(t: &CondTable, x: usize) -> Result<PinskerReport> {
    let gap = entropy_gap(t, x)?;
    let row = &t.rows[x];
    let u = 1.0 / t.volumes[x];
    let support = t.support_set(x);
    let mut sup_dev = 0.0_f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &y in &support {
        sup_dev = sup_dev.max((row[y] - u).abs());
        lo = lo.min(row[y]);
        hi = hi.max(row[y]);
    }
    let pair_dev = if support.is_empty() { 0.0 } else { hi - lo };
    Ok(PinskerReport {
        sup_dev,
        pair_dev,
        sup_bound: (gap / 2.0).sqrt(),
        pair_bound: (2.0 * gap).sqrt(),
        gap,
    })
}

/// A family of tables sharing one random "preferred action" per input and
/// interpolating from deterministic (`λ = 0`) to uniform (`λ = 1`) rows
/// on an even grid of `levels` mixing weights.
pub fn make_entropy_family(
    levels: usize,
    x_size: usize,
    y_size: usize,
    rng: &mut RngStream,
) -> Result<Vec<CondTable>> {
    if levels < 2 {
        return Err(Error::Argument(format!("need at least 2 levels, got {levels}")));
    }
    if y_size < 2 {
        return Err(Error::Argument(format!("need at least 2 outputs, got {y_size}")));
    }
    if x_size < 1 {
        return Err(Error::Argument("need at least 1 input".into()));
    }
    let base_rows: Vec<Vec<f64>> = (0..x_size)
        .map(|_| {
            let k = rng.random_range(0..y_size);
            let mut row = vec![0.0; y_size];
            row[k] = 1.0;
            row
        })
        .collect();
    let base = CondTable::from_rows(base_rows)?;
    (0..levels)
        .map(|i| base.mixed_with_uniform(mixing_weight(i, levels)))
        .collect()
}

/// Evenly spaced mixing weight of level `i` out of `levels`.
pub fn mixing_weight(i: usize, levels: usize) -> f64 {
    if i + 1 == levels {
        1.0
    } else {
        i as f64 / (levels - 1) as f64
    }
}

/// One Dirichlet(1,…,1) row of length `k`: normalized unit exponentials.
pub fn dirichlet_row(k: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Argument("empty row".into()));
    }
    let mut row: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let s = compensated_sum(&row);
    row.iter_mut().for_each(|p| *p /= s);
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn one_row(row: Vec<f64>, v: f64) -> CondTable {
        CondTable::from_rows_with_volumes(vec![row], vec![v]).unwrap()
    }

    #[test]
    fn cond_entropy_examples() {
        let det = CondTable::from_rows(vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(cond_entropy(&det).unwrap(), 0.0);
        let uni = CondTable::from_rows(vec![vec![0.25; 4]; 3]).unwrap();
        assert!((cond_entropy(&uni).unwrap() - 4f64.ln()).abs() < 1e-14);
        let mixed =
            CondTable::from_rows(vec![vec![0.5, 0.25, 0.25], vec![1.0, 0.0, 0.0]]).unwrap();
        // 0.5 * (0.5 ln 2 + 0.5 ln 4) = 0.5 * 1.0397207708
        assert!((cond_entropy(&mixed).unwrap() - 0.519860385).abs() < 1e-6);
    }

    #[test]
    fn entropy_gap_examples() {
        let t = one_row(vec![1.0 / 3.0; 3], 3.0);
        assert!(entropy_gap(&t, 0).unwrap().abs() < 1e-15);
        let t = one_row(vec![0.5, 0.25, 0.25], 3.0);
        assert!((entropy_gap(&t, 0).unwrap() - 0.058891).abs() < 1e-6);
        assert!((kl_to_uniform(&t, 0).unwrap() - entropy_gap(&t, 0).unwrap()).abs() < 1e-10);
        let t = one_row(vec![1.0, 0.0, 0.0], 3.0);
        assert!((entropy_gap(&t, 0).unwrap() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn pinsker_examples() {
        let t = one_row(vec![0.25; 4], 4.0);
        let r = pinsker_bounds(&t, 0).unwrap();
        assert_eq!((r.sup_dev, r.pair_dev), (0.0, 0.0));
        assert!(r.sup_bound < 1e-7 && r.pair_bound < 1e-7);

        let t = one_row(vec![1.0, 0.0], 2.0);
        let r = pinsker_bounds(&t, 0).unwrap();
        assert_eq!(r.sup_dev, 0.5);
        assert_eq!(r.pair_dev, 1.0);
        assert!((r.sup_bound - (LN2 / 2.0).sqrt()).abs() < 1e-15);
        assert!((r.pair_bound - (2.0 * LN2).sqrt()).abs() < 1e-15);
        assert!(r.holds(0.0));
    }

    #[test]
    fn support_set_pads_to_volume() {
        let t = one_row(vec![1.0, 0.0, 0.0], 2.0);
        assert_eq!(t.support_set(0), vec![0, 1]);
        let t = CondTable::from_rows(vec![vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(t.volumes(), &[1.0]);
        assert_eq!(t.support_set(0), vec![1]);
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            CondTable::from_rows(vec![vec![0.5, 0.6]]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            CondTable::from_rows_with_volumes(vec![vec![0.5, 0.5]], vec![0.0]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            CondTable::from_rows_with_volumes(vec![vec![0.5, 0.5]], vec![1.0]),
            Err(Error::Validation(_))
        ));
        assert!(CondTable::from_json(
            r#"{"x_alphabet":["a"],"y_alphabet":["u","v"],"x_marginal":[1.0],"rows":[[0.5,0.5]],"volumes":[2.0],"extra":1}"#
        )
        .is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = CondTable::from_rows(vec![vec![0.1, 0.9], vec![0.7, 0.3]]).unwrap();
        let back = CondTable::from_json(&t.to_json()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn entropy_family_endpoints_and_order() {
        let mut rng = RngStream::new(1, 0);
        let fam = make_entropy_family(2, 5, 4, &mut rng).unwrap();
        assert_eq!(cond_entropy(&fam[0]).unwrap(), 0.0);
        assert!((entropy_gap(&fam[0], 3).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((cond_entropy(&fam[1]).unwrap() - 4f64.ln()).abs() < 1e-12);

        let fam = make_entropy_family(3, 1, 2, &mut rng).unwrap();
        let mid = fam[1].row(0);
        let mut sorted = mid.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(sorted, vec![0.75, 0.25]);
        // -(0.75 ln 0.75 + 0.25 ln 0.25)
        assert!((cond_entropy(&fam[1]).unwrap() - 0.562335).abs() < 1e-6);

        let fam = make_entropy_family(9, 6, 5, &mut rng).unwrap();
        let hs: Vec<f64> = fam.iter().map(|t| cond_entropy(t).unwrap()).collect();
        assert!(hs.windows(2).all(|w| w[0] < w[1]));

        assert!(matches!(
            make_entropy_family(1, 3, 3, &mut rng),
            Err(Error::Argument(_))
        ));
    }
}
