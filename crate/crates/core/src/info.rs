//! Plug-in information estimators on finite alphabets.
//!
//! All quantities are in nats and computed from empirical cell frequencies
//! without bias correction.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardTrace;

/// Upper limit on the number of dense cells a histogram may allocate.
pub const MAX_CELLS: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub size: usize,
}

impl Axis {
    pub fn new(name: &str, size: usize) -> Self {
        Self {
            name: name.to_string(),
            size,
        }
    }
}

/// Dense joint count table over named finite axes, row-major in axis order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawHistogram", into = "RawHistogram")]
pub struct JointHistogram {
    axes: Vec<Axis>,
    counts: Vec<u64>,
    total: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHistogram {
    axes: Vec<String>,
    shape: Vec<usize>,
    counts: Vec<u64>,
}

impl TryFrom<RawHistogram> for JointHistogram {
    type Error = Error;

    fn try_from(raw: RawHistogram) -> Result<Self> {
        if raw.axes.len() != raw.shape.len() {
            return Err(Error::Validation("axes and shape differ in length".into()));
        }
        let axes = raw
            .axes
            .into_iter()
            .zip(raw.shape)
            .map(|(name, size)| Axis { name, size })
            .collect();
        JointHistogram::from_counts(axes, raw.counts)
    }
}

impl From<JointHistogram> for RawHistogram {
    fn from(h: JointHistogram) -> Self {
        RawHistogram {
            shape: h.axes.iter().map(|a| a.size).collect(),
            axes: h.axes.into_iter().map(|a| a.name).collect(),
            counts: h.counts,
        }
    }
}

fn cell_count(axes: &[Axis]) -> Result<usize> {
    axes.iter().try_fold(1usize, |acc, a| {
        acc.checked_mul(a.size)
            .filter(|&c| c <= MAX_CELLS)
            .ok_or_else(|| Error::Argument(format!("histogram exceeds {MAX_CELLS} cells")))
    })
}

impl JointHistogram {
    pub fn from_counts(axes: Vec<Axis>, counts: Vec<u64>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Validation("histogram needs at least one axis".into()));
        }
        let mut names: Vec<&str> = axes.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("duplicate axis names".into()));
        }
        if axes.iter().any(|a| a.size == 0) {
            return Err(Error::Validation("axis of size 0".into()));
        }
        let cells = cell_count(&axes)?;
        if counts.len() != cells {
            return Err(Error::Validation(format!(
                "shape needs {cells} counts, got {}",
                counts.len()
            )));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Validation("histogram is empty".into()));
        }
        Ok(Self {
            axes,
            counts,
            total,
        })
    }

    /// Count co-occurrences. `columns[k][i]` is the symbol of sample `i` on
    /// axis `k`.
    pub fn from_samples(axes: Vec<Axis>, columns: &[&[usize]]) -> Result<Self> {
        if columns.len() != axes.len() {
            return Err(Error::Argument("one column per axis required".into()));
        }
        let n = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Argument("columns differ in length".into()));
        }
        let cells = cell_count(&axes)?;
        let mut counts = vec![0u64; cells];
        for i in 0..n {
            let mut idx = 0;
            for (axis, col) in axes.iter().zip(columns) {
                let s = col[i];
                if s >= axis.size {
                    return Err(Error::Argument(format!(
                        "symbol {s} outside axis {} of size {}",
                        axis.name, axis.size
                    )));
                }
                idx = idx * axis.size + s;
            }
            counts[idx] += 1;
        }
        Self::from_counts(axes, counts)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn axis_index(&self, name: &str) -> Result<usize> {
        self.axes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::Argument(format!("unknown axis {name:?}")))
    }

    /// Counts marginalized onto `keep` (axis indices, in the given order).
    fn marginal(&self, keep: &[usize]) -> Vec<u64> {
        let sizes: Vec<usize> = self.axes.iter().map(|a| a.size).collect();
        let out_len: usize = keep.iter().map(|&k| sizes[k]).product();
        let mut out = vec![0u64; out_len];
        let mut digits = vec![0usize; sizes.len()];
        for &c in &self.counts {
            if c != 0 {
                let idx = keep.iter().fold(0, |acc, &k| acc * sizes[k] + digits[k]);
                out[idx] += c;
            }
            // increment mixed-radix counter, last axis fastest
            for d in (0..sizes.len()).rev() {
                digits[d] += 1;
                if digits[d] < sizes[d] {
                    break;
                }
                digits[d] = 0;
            }
        }
        out
    }

    /// Plug-in entropy of the marginal over `axes` (names).
    pub fn entropy(&self, axes: &[&str]) -> Result<f64> {
        let idx = axes
            .iter()
            .map(|a| self.axis_index(a))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.entropy_of(&idx))
    }

    fn entropy_of(&self, keep: &[usize]) -> f64 {
        if keep.is_empty() {
            return 0.0;
        }
        let n = self.total as f64;
        -self
            .marginal(keep)
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum::<f64>()
    }

    fn resolve(&self, names: &[&str]) -> Result<Vec<usize>> {
        names.iter().map(|a| self.axis_index(a)).collect()
    }

    /// `I(A;B|C)` for disjoint groups of axes (`C` may be empty), summed cell
    /// by cell as `Σ p(a,b,c) ln[p(a,b,c) p(c) / (p(a,c) p(b,c))]`.
    pub fn group_mutual_info(&self, a: &[&str], b: &[&str], given: &[&str]) -> Result<f64> {
        let (ia, ib, ic) = (self.resolve(a)?, self.resolve(b)?, self.resolve(given)?);
        if ia.is_empty() || ib.is_empty() {
            return Err(Error::Argument("mutual information needs two nonempty groups".into()));
        }
        let mut all: Vec<usize> = ia.iter().chain(&ib).chain(&ic).copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("axis groups must be disjoint".into()));
        }
        let sizes: Vec<usize> = self.axes.iter().map(|a| a.size).collect();
        let size_of = |g: &[usize]| g.iter().map(|&k| sizes[k]).product::<usize>();
        let (na, nb, nc) = (size_of(&ia), size_of(&ib), size_of(&ic));

        let abc_axes: Vec<usize> = ia.iter().chain(&ib).chain(&ic).copied().collect();
        let ac_axes: Vec<usize> = ia.iter().chain(&ic).copied().collect();
        let bc_axes: Vec<usize> = ib.iter().chain(&ic).copied().collect();
        let abc = self.marginal(&abc_axes);
        let ac = self.marginal(&ac_axes);
        let bc = self.marginal(&bc_axes);
        let c = self.marginal(&ic);
        let n = self.total as f64;

        let mut mi = 0.0;
        for xa in 0..na {
            for xb in 0..nb {
                for xc in 0..nc {
                    let cnt = abc[(xa * nb + xb) * nc + xc];
                    if cnt == 0 {
                        continue;
                    }
                    let p = cnt as f64;
                    let ratio = p * c[xc] as f64 / (ac[xa * nc + xc] as f64 * bc[xb * nc + xc] as f64);
                    mi += p / n * ratio.ln();
                }
            }
        }
        Ok(clamp_rounding(mi))
    }
}

fn clamp_rounding(v: f64) -> f64 {
    if v < 0.0 && v > -1e-12 {
        0.0
    } else {
        v.max(0.0)
    }
}

/// Plug-in `I(a;b)`.
pub fn mutual_info(h: &JointHistogram, a: &str, b: &str) -> Result<f64> {
    if a == b {
        return Err(Error::Argument("axes must be distinct".into()));
    }
    h.group_mutual_info(&[a], &[b], &[])
}

/// Plug-in `I(a;b|given) = Σ_y p(y) I(a;b|given=y)`.
pub fn cond_mutual_info(h: &JointHistogram, a: &str, b: &str, given: &str) -> Result<f64> {
    if a == b || a == given || b == given {
        return Err(Error::Argument("axes must be distinct".into()));
    }
    h.group_mutual_info(&[a], &[b], &[given])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampPolicy {
    /// Out-of-range values fall into the first/last bin.
    Clamp,
    /// Out-of-range values are a data error.
    Reject,
}

/// Per-dimension bin edges. `edges[d]` lists `m + 1` increasing edges that
/// define `m` bins `[e_i, e_{i+1})`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    pub edges: Vec<Vec<f64>>,
    pub clamp: ClampPolicy,
}

impl BinningSpec {
    pub fn new(edges: Vec<Vec<f64>>, clamp: ClampPolicy) -> Result<Self> {
        for (d, e) in edges.iter().enumerate() {
            if e.len() < 3 {
                return Err(Error::Argument(format!(
                    "dimension {d} needs at least 2 bins (3 edges)"
                )));
            }
            if e.iter().any(|v| v.is_nan()) || e.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Argument(format!(
                    "edges of dimension {d} must be strictly increasing"
                )));
            }
        }
        Ok(Self { edges, clamp })
    }

    /// The same edges on every one of `dims` dimensions.
    pub fn shared(dims: usize, edges: Vec<f64>, clamp: ClampPolicy) -> Result<Self> {
        Self::new(vec![edges; dims], clamp)
    }

    /// `bins` equal-width bins on `[lo, hi]` for every dimension, clamped.
    pub fn equal_width(dims: usize, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(hi > lo) || bins < 2 {
            return Err(Error::Argument("need hi > lo and at least 2 bins".into()));
        }
        let edges = (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect();
        Self::shared(dims, edges, ClampPolicy::Clamp)
    }

    fn bin(&self, d: usize, v: f64) -> Result<usize> {
        let e = &self.edges[d];
        let m = e.len() - 1;
        if v.is_nan() {
            return Err(Error::Data(format!("NaN activation in dimension {d}")));
        }
        if v < e[0] || v > e[m] {
            return match self.clamp {
                ClampPolicy::Clamp => Ok(if v < e[0] { 0 } else { m - 1 }),
                ClampPolicy::Reject => Err(Error::Data(format!(
                    "value {v} outside the binned range of dimension {d}"
                ))),
            };
        }
        // number of interior edges ≤ v
        let k = e[1..m].partition_point(|&edge| edge <= v);
        Ok(k)
    }
}

/// Binned representation symbols, densely relabeled in order of first
/// appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinnedAxis {
    pub ids: Vec<usize>,
    pub n_bins: usize,
}

/// Map layer-`l` representations (1-based) to bin-tuple symbols.
pub fn bin_representations(
    traces: &[ForwardTrace],
    layer: usize,
    spec: &BinningSpec,
) -> Result<BinnedAxis> {
    let mut table: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut ids = Vec::with_capacity(traces.len());
    for (i, t) in traces.iter().enumerate() {
        let z = t
            .layer(layer)
            .ok_or_else(|| Error::Argument(format!("trace {i} has no layer {layer}")))?;
        if z.len() != spec.edges.len() {
            return Err(Error::Argument(format!(
                "layer {layer} has width {}, binning covers {} dimensions",
                z.len(),
                spec.edges.len()
            )));
        }
        let tuple = z
            .iter()
            .enumerate()
            .map(|(d, &v)| spec.bin(d, v))
            .collect::<Result<Vec<_>>>()?;
        let next = table.len();
        ids.push(*table.entry(tuple).or_insert(next));
    }
    Ok(BinnedAxis {
        ids,
        n_bins: table.len().max(1),
    })
}

/// Right-hand side of the flat-minimum bound on `I(θ; 𝒟)`:
/// `½ K [ln ‖θ̂‖² + ln tr ℋ − K ln(K² β / 2)]`, unclamped.
pub fn weight_info_bound(k: usize, theta_norm_sq: f64, trace_h: f64, beta: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("parameter count must be positive".into()));
    }
    for (name, v) in [
        ("theta_norm_sq", theta_norm_sq),
        ("trace_H", trace_h),
        ("beta", beta),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
        }
    }
    let kf = k as f64;
    Ok(0.5 * kf * (theta_norm_sq.ln() + trace_h.ln() - kf * (kf * kf * beta / 2.0).ln()))
}

/// Bound value as shown in summary tables: negative values clamp to 0.
pub fn clamp_bound(v: f64) -> f64 {
    v.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(name: &str, size: usize) -> Axis {
        Axis {
            name: name.into(),
            size,
        }
    }

    #[test]
    fn independent_counts_have_zero_mi() {
        // outer product of (1,2) and (3,1,2)
        let counts = vec![3, 1, 2, 6, 2, 4];
        let h = JointHistogram::from_counts(vec![axis("a", 2), axis("b", 3)], counts).unwrap();
        assert!(mutual_info(&h, "a", "b").unwrap().abs() < 1e-15);
    }

    #[test]
    fn copy_has_mi_equal_to_entropy() {
        let x = [0, 1, 0, 1, 1, 0];
        let h = JointHistogram::from_samples(vec![axis("x", 2), axis("z", 2)], &[&x, &x]).unwrap();
        let mi = mutual_info(&h, "x", "z").unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_example() {
        let h = JointHistogram::from_counts(vec![axis("a", 2), axis("b", 2)], vec![3, 1, 1, 3])
            .unwrap();
        // 0.75 ln 1.5 + 0.25 ln 0.5
        assert!((mutual_info(&h, "a", "b").unwrap() - 0.130812).abs() < 1e-6);
    }

    #[test]
    fn cmi_special_cases() {
        let a = [0, 1, 1, 0, 1, 0, 0, 1, 1];
        let b = [0, 1, 0, 0, 1, 1, 0, 1, 1];
        let c0 = [0; 9];
        let h = JointHistogram::from_samples(
            vec![axis("a", 2), axis("b", 2), axis("c", 1)],
            &[&a, &b, &c0],
        )
        .unwrap();
        let cmi = cond_mutual_info(&h, "a", "b", "c").unwrap();
        let mi = mutual_info(&h, "a", "b").unwrap();
        assert!((cmi - mi).abs() < 1e-12);

        // z is a function of y
        let y = [0, 1, 2, 1, 0, 2, 2, 1, 0];
        let z: Vec<usize> = y.iter().map(|v| v % 2).collect();
        let h = JointHistogram::from_samples(
            vec![axis("x", 2), axis("z", 2), axis("y", 3)],
            &[&a, &z, &y],
        )
        .unwrap();
        assert_eq!(cond_mutual_info(&h, "x", "z", "y").unwrap(), 0.0);
    }

    #[test]
    fn axis_errors() {
        let h = JointHistogram::from_counts(vec![axis("a", 2), axis("b", 2)], vec![1, 1, 1, 1])
            .unwrap();
        assert!(matches!(mutual_info(&h, "a", "q"), Err(Error::Argument(_))));
        assert!(matches!(mutual_info(&h, "a", "a"), Err(Error::Argument(_))));
        assert!(matches!(
            cond_mutual_info(&h, "a", "b", "b"),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn histogram_json_round_trip() {
        let h = JointHistogram::from_counts(vec![axis("a", 2), axis("b", 3)], vec![1, 0, 2, 3, 4, 5])
            .unwrap();
        let s = serde_json::to_string(&h).unwrap();
        assert!(s.contains("\"shape\":[2,3]"));
        let back: JointHistogram = serde_json::from_str(&s).unwrap();
        assert_eq!(h, back);
        assert!(serde_json::from_str::<JointHistogram>(
            r#"{"axes":["a"],"shape":[2],"counts":[1]}"#
        )
        .is_err());
    }

    fn trace_of(z: Vec<f64>) -> ForwardTrace {
        ForwardTrace {
            layers: vec![z, vec![0.0]],
        }
    }

    #[test]
    fn binning_examples() {
        let spec = BinningSpec::shared(
            2,
            vec![f64::NEG_INFINITY, 0.0, f64::INFINITY],
            ClampPolicy::Reject,
        )
        .unwrap();
        let same: Vec<ForwardTrace> = (0..5).map(|_| trace_of(vec![0.3, -0.2])).collect();
        assert_eq!(bin_representations(&same, 1, &spec).unwrap().n_bins, 1);

        let signs = vec![
            trace_of(vec![1.0, 1.0]),
            trace_of(vec![-1.0, 1.0]),
            trace_of(vec![2.0, 3.0]),
            trace_of(vec![-1.0, -1.0]),
        ];
        let b = bin_representations(&signs, 1, &spec).unwrap();
        assert_eq!(b.ids, vec![0, 1, 0, 2]);
        assert_eq!(b.n_bins, 3);

        let bad = vec![trace_of(vec![f64::NAN, 0.0])];
        assert!(matches!(
            bin_representations(&bad, 1, &spec),
            Err(Error::Data(_))
        ));
        assert!(BinningSpec::shared(1, vec![0.0, 1.0], ClampPolicy::Clamp).is_err());
        assert!(BinningSpec::shared(1, vec![0.0, 1.0, 1.0], ClampPolicy::Clamp).is_err());
    }

    #[test]
    fn weight_info_bound_examples() {
        let b = weight_info_bound(2, 1.0, 2.0, 0.5).unwrap();
        assert!((b - std::f64::consts::LN_2).abs() < 1e-15);
        let k = 7;
        let base = weight_info_bound(k, 2.3, 0.9, 0.01).unwrap();
        let scaled = weight_info_bound(k, 2.3, 0.9 * std::f64::consts::E, 0.01).unwrap();
        assert!((scaled - base - k as f64 / 2.0).abs() < 1e-12);
        let tiny = weight_info_bound(3, 1.0, 1e-300, 1.0).unwrap();
        assert!(tiny < -100.0);
        assert_eq!(clamp_bound(tiny), 0.0);
        assert!(matches!(weight_info_bound(2, 0.0, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(weight_info_bound(2, 1.0, -1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(weight_info_bound(2, 1.0, 1.0, 0.0), Err(Error::Domain(_))));
    }
}
