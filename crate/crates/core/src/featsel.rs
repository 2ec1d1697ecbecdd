//! Information-gain ranking, correlated-column pruning and PCA.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::floatfmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    /// Natural logarithm (nats).
    #[default]
    E,
    /// Base 2 (bits).
    #[serde(rename = "2")]
    Two,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::E => x.ln(),
            LogBase::Two => x.log2(),
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            LogBase::E => "nats",
            LogBase::Two => "bits",
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e" | "E" | "ln" | "nats" => Ok(LogBase::E),
            "2" | "bits" => Ok(LogBase::Two),
            other => Err(Error::Config(format!("log base must be e or 2, got {other:?}"))),
        }
    }
}

/// How a feature column is turned into discrete values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binning {
    /// Distinct values when there are at most `max_distinct` of them,
    /// otherwise `bins` equal-width bins over the column range.
    Auto { max_distinct: usize, bins: usize },
    /// Every distinct value is its own bin.
    Values,
    /// Equal-width bins over the column range.
    EqualWidth(usize),
}

impl Default for Binning {
    fn default() -> Self {
        Binning::Auto {
            max_distinct: 32,
            bins: 10,
        }
    }
}

/// Bin index per record plus a short description of what was done.
fn discretize(values: &[f64], binning: Binning) -> (Vec<usize>, String) {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let by_value = |distinct: &[f64]| {
        let ids = values
            .iter()
            .map(|v| distinct.binary_search_by(|d| d.total_cmp(v)).expect("value present"))
            .collect();
        (ids, format!("values({})", distinct.len()))
    };
    let equal_width = |bins: usize| {
        let bins = bins.max(1);
        let (lo, hi) = (distinct[0], distinct[distinct.len() - 1]);
        let width = (hi - lo) / bins as f64;
        let ids = values
            .iter()
            .map(|&v| {
                if width > 0.0 {
                    (((v - lo) / width) as usize).min(bins - 1)
                } else {
                    0
                }
            })
            .collect();
        (ids, format!("equal-width({bins})"))
    };
    if values.is_empty() {
        return (Vec::new(), "empty".into());
    }
    match binning {
        Binning::Values => by_value(&distinct),
        Binning::EqualWidth(b) => equal_width(b),
        Binning::Auto { max_distinct, bins } => {
            if distinct.len() <= max_distinct {
                by_value(&distinct)
            } else {
                equal_width(bins)
            }
        }
    }
}

/// Entropy of a class histogram; empty classes contribute nothing.
pub fn entropy_of_counts(counts: &[usize], base: LogBase) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * base.log(p)
        })
        .sum::<f64>()
}

pub fn label_entropy(ds: &Dataset, base: LogBase) -> f64 {
    entropy_of_counts(&ds.class_counts(), base)
}

fn conditional_gain(labels: &[usize], classes: usize, bins: &[usize], base: LogBase) -> f64 {
    let n_bins = bins.iter().copied().max().map_or(0, |m| m + 1);
    let mut joint = vec![vec![0usize; classes]; n_bins];
    let mut totals = vec![0usize; classes];
    for (&b, &y) in bins.iter().zip(labels) {
        joint[b][y] += 1;
        totals[y] += 1;
    }
    let n = labels.len() as f64;
    let h = entropy_of_counts(&totals, base);
    let h_cond: f64 = joint
        .iter()
        .map(|row| {
            let size: usize = row.iter().sum();
            size as f64 / n * entropy_of_counts(row, base)
        })
        .sum();
    (h - h_cond).clamp(0.0, h)
}

/// `IG(F) = H(y) - sum_s P(f_s) H(y | f_s)` over the discretized values of `feature`.
pub fn information_gain(ds: &Dataset, feature: usize, binning: Binning, base: LogBase) -> Result<f64> {
    if feature >= ds.n_features() {
        return Err(Error::Dimension {
            expected: ds.n_features(),
            found: feature,
        });
    }
    let labels = ds.targets()?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let values: Vec<f64> = ds.column(feature).collect();
    let (bins, _) = discretize(&values, binning);
    Ok(conditional_gain(&labels, ds.labels().len(), &bins, base))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgReport {
    pub label_entropy: f64,
    pub base: LogBase,
    pub names: Vec<String>,
    pub gains: Vec<f64>,
    pub binning: Vec<String>,
    /// Feature indices sorted by descending gain (ties: lower index first).
    pub order: Vec<usize>,
}

impl IgReport {
    pub fn top(&self, k: usize) -> &[usize] {
        &self.order[..k.min(self.order.len())]
    }

    /// CSV: `rank,feature,name,ig,binning` in rank order, preceded by a comment
    /// line with the label entropy.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# label_entropy={:.6} {}", self.label_entropy, self.base.unit())?;
        writeln!(out, "rank,feature,name,ig,binning")?;
        for (rank, &j) in self.order.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{:.10},{}",
                rank + 1,
                j,
                self.names[j],
                self.gains[j],
                self.binning[j]
            )?;
        }
        Ok(())
    }
}

pub fn rank_features(ds: &Dataset, binning: Binning, base: LogBase) -> Result<IgReport> {
    let labels = ds.targets()?;
    let classes = ds.labels().len();
    let mut gains = Vec::with_capacity(ds.n_features());
    let mut descr = Vec::with_capacity(ds.n_features());
    for j in 0..ds.n_features() {
        let values: Vec<f64> = ds.column(j).collect();
        let (bins, d) = discretize(&values, binning);
        gains.push(if labels.is_empty() {
            0.0
        } else {
            conditional_gain(&labels, classes, &bins, base)
        });
        descr.push(d);
    }
    let mut order: Vec<usize> = (0..gains.len()).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    Ok(IgReport {
        label_entropy: entropy_of_counts(&ds.class_counts(), base),
        base,
        names: ds.column_names(),
        gains,
        binning: descr,
        order,
    })
}

/// Pearson correlation; 0 when either column has no spread.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub constant: Vec<String>,
    /// Correlated groups with more than one member; the kept column comes first.
    pub groups: Vec<Vec<String>>,
    pub kept: Vec<String>,
}

/// Drops constant columns, then keeps one column per group of columns linked
/// by `|corr| >= threshold` (the one with highest IG, ties to lower index).
pub fn prune_correlated(ds: &Dataset, threshold: f64) -> Result<(Dataset, PruneReport)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("correlation threshold {threshold} outside (0, 1]")));
    }
    let names = ds.column_names();
    let columns: Vec<Vec<f64>> = (0..ds.n_features()).map(|j| ds.column(j).collect()).collect();
    let is_constant = |j: usize| ds.columns()[j].stddev == 0.0;
    let live: Vec<usize> = (0..ds.n_features()).filter(|&j| !is_constant(j)).collect();

    let mut parent: Vec<usize> = (0..ds.n_features()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (ai, &a) in live.iter().enumerate() {
        for &b in &live[ai + 1..] {
            if pearson(&columns[a], &columns[b]).abs() >= threshold {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &j in &live {
        let root = find(&mut parent, j);
        groups.entry(root).or_default().push(j);
    }
    let ig = rank_features(ds, Binning::default(), LogBase::E)?;
    let mut kept = Vec::new();
    let mut report_groups = Vec::new();
    for members in groups.values() {
        let best = *members
            .iter()
            .max_by(|&&a, &&b| ig.gains[a].total_cmp(&ig.gains[b]).then(b.cmp(&a)))
            .expect("non-empty group");
        kept.push(best);
        if members.len() > 1 {
            let mut g = vec![names[best].clone()];
            g.extend(members.iter().filter(|&&m| m != best).map(|&m| names[m].clone()));
            report_groups.push(g);
        }
    }
    kept.sort_unstable();
    let out = ds.select_columns(&kept)?;
    let report = PruneReport {
        constant: (0..ds.n_features())
            .filter(|&j| is_constant(j))
            .map(|j| names[j].clone())
            .collect(),
        groups: report_groups,
        kept: kept.iter().map(|&j| names[j].clone()).collect(),
    };
    Ok((out, report))
}

/// Fitted PCA: column means, full eigen-spectrum of the covariance matrix and
/// the number of retained components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaRecipe {
    #[serde(serialize_with = "floatfmt::vec")]
    mean: Vec<f64>,
    /// Eigenvectors as columns of a row-major `M x M` matrix, ordered by
    /// descending eigenvalue.
    #[serde(serialize_with = "floatfmt::vec")]
    vectors: Vec<f64>,
    #[serde(serialize_with = "floatfmt::vec")]
    eigenvalues: Vec<f64>,
    k: usize,
    #[serde(serialize_with = "floatfmt::f64")]
    rho: f64,
}

impl PcaRecipe {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Entry `i` of eigenvector `c`.
    pub fn component(&self, i: usize, c: usize) -> f64 {
        self.vectors[i * self.dim() + c]
    }

    /// Same decomposition, keeping the first `k` components.
    pub fn with_k(&self, k: usize) -> Result<PcaRecipe> {
        if k == 0 || k > self.dim() {
            return Err(Error::Config(format!("component count {k} outside 1..={}", self.dim())));
        }
        Ok(PcaRecipe { k, ..self.clone() })
    }

    /// Retained-variance ratio after `k` components.
    pub fn retained(&self, k: usize) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return 1.0;
        }
        self.eigenvalues[..k].iter().sum::<f64>() / total
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.dim();
        if self.vectors.len() != m * m || self.eigenvalues.len() != m || self.k == 0 || self.k > m {
            return Err(Error::ModelFormat("inconsistent PCA recipe dimensions".into()));
        }
        Ok(())
    }

    /// CSV: `component,eigenvalue,cumulative_ratio`.
    pub fn write_spectrum_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "component,eigenvalue,cumulative_ratio")?;
        for (c, ev) in self.eigenvalues.iter().enumerate() {
            writeln!(out, "{},{:.10e},{:.10}", c + 1, ev, self.retained(c + 1))?;
        }
        Ok(())
    }
}

/// Sample covariance matrix (divisor N-1) and column means.
pub fn covariance(ds: &Dataset) -> (Vec<f64>, DMatrix<f64>) {
    let m = ds.n_features();
    let n = ds.len();
    let mean: Vec<f64> = (0..m).map(|j| ds.column(j).sum::<f64>() / n as f64).collect();
    let mut c = DMatrix::<f64>::zeros(m, m);
    let mut centered = vec![0.0; m];
    for r in ds.records() {
        for (cj, (x, mu)) in centered.iter_mut().zip(r.features.iter().zip(&mean)) {
            *cj = x - mu;
        }
        for i in 0..m {
            for j in i..m {
                c[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for i in 0..m {
        for j in i..m {
            let v = c[(i, j)] / denom;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    (mean, c)
}

/// Eigen-decomposes the covariance matrix and keeps the fewest components
/// whose eigenvalue mass reaches `rho` of the total.
pub fn pca_fit(ds: &Dataset, rho: f64) -> Result<PcaRecipe> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("rho {rho} outside (0, 1]")));
    }
    if ds.len() < 2 {
        return Err(Error::Degenerate(format!("PCA needs at least 2 records, got {}", ds.len())));
    }
    let m = ds.n_features();
    if m == 0 {
        return Err(Error::Degenerate("PCA on a dataset without features".into()));
    }
    let (mean, c) = covariance(ds);
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut vectors = vec![0.0; m * m];
    let mut eigenvalues = Vec::with_capacity(m);
    for (c_out, &c_in) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[c_in]);
        let col = eig.eigenvectors.column(c_in);
        // Sign convention: the largest-magnitude entry is positive.
        let mut pivot = 0;
        for i in 1..m {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            vectors[i * m + c_out] = sign * col[i];
        }
    }

    let total: f64 = eigenvalues.iter().sum();
    let k = if total <= 0.0 {
        1
    } else {
        let mut cum = 0.0;
        let mut k = m;
        for (i, ev) in eigenvalues.iter().enumerate() {
            cum += ev;
            if cum / total >= rho - 1e-12 {
                k = i + 1;
                break;
            }
        }
        k
    };
    Ok(PcaRecipe {
        mean,
        vectors,
        eigenvalues,
        k,
        rho,
    })
}

/// `z = U_k'(x - mean)`.
pub fn pca_project(recipe: &PcaRecipe, x: &[f64]) -> Result<Vec<f64>> {
    let m = recipe.dim();
    if x.len() != m {
        return Err(Error::Dimension {
            expected: m,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut z = vec![0.0; recipe.k];
    for (i, (xi, mi)) in x.iter().zip(&recipe.mean).enumerate() {
        let d = xi - mi;
        let row = &recipe.vectors[i * m..i * m + recipe.k];
        for (zc, u) in z.iter_mut().zip(row) {
            *zc += u * d;
        }
    }
    Ok(z)
}

/// Projects every record; columns are named `pc1..pck`.
pub fn pca_transform(recipe: &PcaRecipe, ds: &Dataset) -> Result<Dataset> {
    let names = (1..=recipe.k).map(|c| format!("pc{c}")).collect();
    ds.map_features(names, |x| pca_project(recipe, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelSpace;

    fn labeled(rows: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> Dataset {
        let names = (0..rows[0].len()).map(|j| format!("f{j}")).collect();
        let space = LabelSpace::new((0..k).map(|c| format!("c{c}")).collect(), 0).unwrap();
        Dataset::from_rows(rows, labels, names, space).unwrap()
    }

    #[test]
    fn entropy_cases() {
        let ds = labeled(vec![vec![0.0]; 4], vec![0, 0, 1, 1], 2);
        assert!((label_entropy(&ds, LogBase::E) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((label_entropy(&ds, LogBase::Two) - 1.0).abs() < 1e-15);
        let single = labeled(vec![vec![0.0]; 3], vec![1, 1, 1], 2);
        assert_eq!(label_entropy(&single, LogBase::E), 0.0);
    }

    #[test]
    fn hand_gain() {
        let rows = [1.0, 1.0, 1.0, 1.0, 2.0, 2.0].iter().map(|v| vec![*v]).collect();
        let ds = labeled(rows, vec![0, 0, 0, 1, 1, 1], 2);
        let ig = information_gain(&ds, 0, Binning::default(), LogBase::E).unwrap();
        assert!((ig - 0.31825708414740644).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_constant_features() {
        let rows = (0..6).map(|i| vec![(i / 3) as f64, 7.0]).collect();
        let ds = labeled(rows, vec![0, 0, 0, 1, 1, 1], 2);
        let h = label_entropy(&ds, LogBase::E);
        assert!((information_gain(&ds, 0, Binning::default(), LogBase::E).unwrap() - h).abs() < 1e-15);
        assert_eq!(information_gain(&ds, 1, Binning::default(), LogBase::E).unwrap(), 0.0);
        let rep = rank_features(&ds, Binning::default(), LogBase::E).unwrap();
        assert_eq!(rep.order, vec![0, 1]);
    }

    #[test]
    fn equal_width_for_many_values() {
        let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let (bins, d) = discretize(&values, Binning::default());
        assert_eq!(d, "equal-width(10)");
        assert_eq!(bins[0], 0);
        assert_eq!(bins[99], 9);
        assert_eq!(bins[55], 5);
    }

    #[test]
    fn duplicate_column_pruned() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let x = i as f64;
                vec![x, 2.0 * x + 1.0, ((i * 7) % 5) as f64, 3.0]
            })
            .collect();
        let labels = (0..20).map(|i| usize::from(i >= 10)).collect();
        let ds = labeled(rows, labels, 2);
        let (out, rep) = prune_correlated(&ds, 0.99).unwrap();
        assert_eq!(rep.constant, vec!["f3"]);
        assert_eq!(rep.groups.len(), 1);
        assert_eq!(out.n_features(), 2);
        assert_eq!(rep.kept, vec!["f0", "f2"]);
    }

    #[test]
    fn hand_pca() {
        let ds = labeled(vec![vec![1.0, 1.0], vec![-1.0, -1.0]], vec![0, 1], 2);
        let p = pca_fit(&ds, 1.0).unwrap();
        assert!((p.eigenvalues()[0] - 4.0).abs() <= 1e-12);
        assert!(p.eigenvalues()[1].abs() <= 1e-12);
        assert_eq!(p.k(), 1);
        let h = 1.0 / 2f64.sqrt();
        assert!((p.component(0, 0) - h).abs() <= 1e-12);
        assert!((p.component(1, 0) - h).abs() <= 1e-12);
        let z = pca_project(&p, &[1.0, 1.0]).unwrap();
        assert!((z[0] - 2f64.sqrt()).abs() <= 1e-12);
        assert_eq!(pca_project(&p, &[0.0, 0.0]).unwrap(), vec![0.0]);
        assert!(pca_project(&p, &[0.0]).is_err());
    }

    #[test]
    fn rho_one_keeps_everything_on_full_rank() {
        let rows = vec![vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 1.0], vec![3.0, 1.0, 0.0], vec![2.0, 5.0, 1.0]];
        let ds = labeled(rows, vec![0, 1, 0, 1], 2);
        assert_eq!(pca_fit(&ds, 1.0).unwrap().k(), 3);
        assert!(pca_fit(&ds, 0.0).is_err());
    }
}
