//! Binary and multinomial logistic regression.
//!
//! Every model carries the standardization recipe fitted on its training
//! data; inputs are raw feature vectors. A bias component of 1 is prepended
//! after standardization, so weight index 0 is the intercept.
//!
//! Binary: `F(w) = (1/N) sum ln(1 + exp(-y_i x_i'w))` with `y_i` in {+1, -1},
//! +1 being the abnormal (positive) class. A record is positive iff `x'w > 0`.
//!
//! Multinomial: `W` is `(M+1) x (K-1)`; class `K-1` is the reference class
//! with an implicit zero weight column, so `P(a|x) = exp(x'w_a) / (1 + sum_b exp(x'w_b))`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{standardize_fit, Dataset, LabelSpace, Relabeling, StandardizationRecipe};
use crate::error::{Error, Result};
use crate::floatfmt;
use crate::optimizer::{minimize, Objective, QnConfig, QnTrace};

/// Logistic function, evaluated without overflow for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)`.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Standardized, bias-augmented design matrix (row-major, `cols = M + 1`).
#[derive(Debug, Clone)]
pub struct Design {
    rows: usize,
    cols: usize,
    x: Vec<f64>,
    y: Vec<usize>,
}

impl Design {
    pub fn new(ds: &Dataset, recipe: &StandardizationRecipe) -> Result<Self> {
        let cols = ds.n_features() + 1;
        let mut x = vec![0.0; ds.len() * cols];
        for (row, rec) in x.chunks_exact_mut(cols).zip(ds.records()) {
            row[0] = 1.0;
            recipe.apply_into(&rec.features, &mut row[1..])?;
        }
        Ok(Self {
            rows: ds.len(),
            cols,
            x,
            y: ds.targets()?,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.cols..(i + 1) * self.cols]
    }
}

/// Objective of binary logistic regression; `positive` is the class mapped to +1.
pub struct BinaryObjective<'a> {
    design: &'a Design,
    positive: usize,
}

impl<'a> BinaryObjective<'a> {
    pub fn new(design: &'a Design, positive: usize) -> Self {
        Self { design, positive }
    }
}

impl Objective for BinaryObjective<'_> {
    fn dim(&self) -> usize {
        self.design.cols
    }

    fn eval(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.design;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        for i in 0..d.rows {
            let x = d.row(i);
            let y = if d.y[i] == self.positive { 1.0 } else { -1.0 };
            let margin = y * dot(x, w);
            value += softplus(-margin);
            let coef = -y * sigmoid(-margin);
            for (g, xj) in grad.iter_mut().zip(x) {
                *g += coef * xj;
            }
        }
        let inv = 1.0 / d.rows as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        value * inv
    }
}

/// Objective of multinomial logistic regression over the flattened
/// row-major `(M+1) x (K-1)` weight matrix.
pub struct MultiObjective<'a> {
    design: &'a Design,
    classes: usize,
}

impl<'a> MultiObjective<'a> {
    pub fn new(design: &'a Design, classes: usize) -> Self {
        Self { design, classes }
    }
}

impl Objective for MultiObjective<'_> {
    fn dim(&self) -> usize {
        self.design.cols * (self.classes - 1)
    }

    fn eval(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.design;
        let free = self.classes - 1;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut logits = vec![0.0; self.classes];
        let mut shifted = vec![0.0; self.classes];
        let mut coef = vec![0.0; free];
        let mut value = 0.0;
        for i in 0..d.rows {
            let x = d.row(i);
            weighted_logits(x, w, free, &mut logits);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (e, l) in shifted.iter_mut().zip(&logits) {
                *e = (l - max).exp();
                sum += *e;
            }
            let y = d.y[i];
            value += max + sum.ln() - logits[y];
            for (a, c) in coef.iter_mut().enumerate() {
                *c = shifted[a] / sum - if y == a { 1.0 } else { 0.0 };
            }
            for (j, xj) in x.iter().enumerate() {
                for (g, c) in grad[j * free..(j + 1) * free].iter_mut().zip(&coef) {
                    *g += c * xj;
                }
            }
        }
        let inv = 1.0 / d.rows as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        value * inv
    }
}

/// Fills `logits[..free]` with `x'w_a` and sets the reference logit to 0.
fn weighted_logits(x: &[f64], w: &[f64], free: usize, logits: &mut [f64]) {
    logits.iter_mut().for_each(|l| *l = 0.0);
    for (j, xj) in x.iter().enumerate() {
        let row = &w[j * free..(j + 1) * free];
        for (l, wa) in logits.iter_mut().zip(row) {
            *l += xj * wa;
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lowest index among the maxima.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    /// One probability per class, in label-space order.
    pub probabilities: Vec<f64>,
    /// Binary: `x'w`. Multinomial: logit of the winning class against the
    /// reference class. One-vs-all: score of the winning binary model.
    pub score: f64,
}

/// Anything that maps a raw feature vector to a class.
pub trait Classifier {
    fn input_dim(&self) -> usize;
    fn labels(&self) -> &LabelSpace;
    fn predict(&self, x: &[f64]) -> Result<Prediction>;

    fn predict_all(&self, ds: &Dataset) -> Result<Vec<usize>> {
        ds.records().iter().map(|r| self.predict(&r.features).map(|p| p.class)).collect()
    }
}

fn standardized_with_bias(recipe: &StandardizationRecipe, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len() + 1];
    out[0] = 1.0;
    recipe.apply_into(x, &mut out[1..])?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryModel {
    #[serde(serialize_with = "floatfmt::vec")]
    weights: Vec<f64>,
    recipe: StandardizationRecipe,
    labels: LabelSpace,
}

impl BinaryModel {
    pub fn new(weights: Vec<f64>, recipe: StandardizationRecipe, labels: LabelSpace) -> Result<Self> {
        let m = Self {
            weights,
            recipe,
            labels,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        self.labels.validate()?;
        if self.labels.len() != 2 || self.labels.positive().is_none() {
            return Err(Error::ModelFormat("binary model needs a two-class space with a positive class".into()));
        }
        if self.weights.len() != self.recipe.len() + 1 || self.recipe.stddevs.len() != self.recipe.len() {
            return Err(Error::ModelFormat(format!(
                "binary model: {} weights for {} features",
                self.weights.len(),
                self.recipe.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn recipe(&self) -> &StandardizationRecipe {
        &self.recipe
    }

    pub fn positive(&self) -> usize {
        self.labels.positive().expect("validated")
    }

    /// `x'w` for a raw feature vector.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(dot(&standardized_with_bias(&self.recipe, x)?, &self.weights))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.recipe.len() {
            return Err(Error::Dimension {
                expected: self.recipe.len(),
                found: x.len(),
            });
        }
        Ok(())
    }
}

impl Classifier for BinaryModel {
    fn input_dim(&self) -> usize {
        self.recipe.len()
    }

    fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    /// Positive iff `x'w > 0`; a score of exactly 0 goes to the negative class.
    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let score = self.score(x)?;
        let pos = self.positive();
        let neg = 1 - pos;
        let mut probabilities = vec![0.0; 2];
        probabilities[pos] = sigmoid(score);
        probabilities[neg] = sigmoid(-score);
        Ok(Prediction {
            class: if score > 0.0 { pos } else { neg },
            probabilities,
            score,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiModel {
    /// Row-major `(M+1) x (K-1)`.
    #[serde(serialize_with = "floatfmt::vec")]
    weights: Vec<f64>,
    recipe: StandardizationRecipe,
    labels: LabelSpace,
}

impl MultiModel {
    pub fn new(weights: Vec<f64>, recipe: StandardizationRecipe, labels: LabelSpace) -> Result<Self> {
        let m = Self {
            weights,
            recipe,
            labels,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        self.labels.validate()?;
        let expected = (self.recipe.len() + 1) * (self.labels.len() - 1);
        if self.weights.len() != expected || self.recipe.stddevs.len() != self.recipe.len() {
            return Err(Error::ModelFormat(format!(
                "multinomial model: {} weights, expected {expected}",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight of standardized input `row` (0 = bias) for class `class < K-1`.
    pub fn weight(&self, row: usize, class: usize) -> f64 {
        self.weights[row * (self.labels.len() - 1) + class]
    }

    pub fn recipe(&self) -> &StandardizationRecipe {
        &self.recipe
    }

    /// Logits `[x'w_0, ..., x'w_{K-2}, 0]`.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.recipe.len() {
            return Err(Error::Dimension {
                expected: self.recipe.len(),
                found: x.len(),
            });
        }
        let xb = standardized_with_bias(&self.recipe, x)?;
        let mut logits = vec![0.0; self.labels.len()];
        weighted_logits(&xb, &self.weights, self.labels.len() - 1, &mut logits);
        Ok(logits)
    }
}

impl Classifier for MultiModel {
    fn input_dim(&self) -> usize {
        self.recipe.len()
    }

    fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let logits = self.logits(x)?;
        let lse = log_sum_exp(&logits);
        let probabilities: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
        let class = argmax(&probabilities);
        Ok(Prediction {
            class,
            probabilities,
            score: logits[class],
        })
    }
}

/// K binary models, model `a` separating class `a` from the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneVsAllModel {
    models: Vec<BinaryModel>,
    labels: LabelSpace,
}

impl OneVsAllModel {
    pub fn new(models: Vec<BinaryModel>, labels: LabelSpace) -> Result<Self> {
        let m = Self { models, labels };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        self.labels.validate()?;
        if self.models.len() != self.labels.len() {
            return Err(Error::ModelFormat(format!(
                "one-vs-all: {} models for {} classes",
                self.models.len(),
                self.labels.len()
            )));
        }
        let dim = self.models[0].input_dim();
        for m in &self.models {
            m.validate()?;
            if m.input_dim() != dim {
                return Err(Error::ModelFormat("one-vs-all models disagree on input size".into()));
            }
        }
        Ok(())
    }

    pub fn models(&self) -> &[BinaryModel] {
        &self.models
    }
}

impl Classifier for OneVsAllModel {
    fn input_dim(&self) -> usize {
        self.models[0].input_dim()
    }

    fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    /// Highest per-class score wins; ties go to the lowest class index.
    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let scores = self
            .models
            .iter()
            .map(|m| m.score(x))
            .collect::<Result<Vec<_>>>()?;
        let class = argmax(&scores);
        let raw: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
        let total: f64 = raw.iter().sum();
        let probabilities = if total > 0.0 {
            raw.iter().map(|p| p / total).collect()
        } else {
            vec![1.0 / raw.len() as f64; raw.len()]
        };
        Ok(Prediction {
            class,
            probabilities,
            score: scores[class],
        })
    }
}

/// Any trained model, tagged by kind on disk and on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Model {
    Binary(BinaryModel),
    Multi(MultiModel),
    OneVsAll(OneVsAllModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Binary(_) => "binary",
            Model::Multi(_) => "multi",
            Model::OneVsAll(_) => "one-vs-all",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Binary(m) => m.validate(),
            Model::Multi(m) => m.validate(),
            Model::OneVsAll(m) => m.validate(),
        }
    }

    fn inner(&self) -> &dyn Classifier {
        match self {
            Model::Binary(m) => m,
            Model::Multi(m) => m,
            Model::OneVsAll(m) => m,
        }
    }
}

impl Classifier for Model {
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    fn labels(&self) -> &LabelSpace {
        self.inner().labels()
    }

    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.inner().predict(x)
    }
}

fn training_design(ds: &Dataset) -> Result<(StandardizationRecipe, Design)> {
    if ds.len() < 2 {
        return Err(Error::Degenerate(format!("training needs at least 2 records, got {}", ds.len())));
    }
    let counts = ds.class_counts();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Degenerate("all training labels are identical".into()));
    }
    let recipe = standardize_fit(ds)?;
    let design = Design::new(ds, &recipe)?;
    Ok((recipe, design))
}

/// Fits a binary model from w = 0. A two-class space without a declared
/// positive class uses the non-normal class as positive.
pub fn train_binary(ds: &Dataset, cfg: &QnConfig) -> Result<(BinaryModel, QnTrace)> {
    let labels = ds.labels();
    if labels.len() != 2 {
        return Err(Error::Degenerate(format!("binary training needs 2 classes, got {}", labels.len())));
    }
    let labels = match labels.positive() {
        Some(_) => labels.clone(),
        None => labels.clone().with_positive(1 - labels.normal())?,
    };
    let (recipe, design) = training_design(ds)?;
    let positive = labels.positive().expect("set above");
    let obj = BinaryObjective::new(&design, positive);
    let (w, trace) = minimize(&obj, &vec![0.0; obj.dim()], cfg)?;
    Ok((BinaryModel::new(w, recipe, labels)?, trace))
}

/// Fits a multinomial model from W = 0.
pub fn train_multi(ds: &Dataset, cfg: &QnConfig) -> Result<(MultiModel, QnTrace)> {
    let (recipe, design) = training_design(ds)?;
    let obj = MultiObjective::new(&design, ds.labels().len());
    let (w, trace) = minimize(&obj, &vec![0.0; obj.dim()], cfg)?;
    Ok((MultiModel::new(w, recipe, ds.labels().clone())?, trace))
}

/// One binary model per class, each trained on "class vs rest".
pub fn one_vs_all_train(ds: &Dataset, cfg: &QnConfig) -> Result<(OneVsAllModel, Vec<QnTrace>)> {
    let labels = ds.labels();
    let mut models = Vec::with_capacity(labels.len());
    let mut traces = Vec::with_capacity(labels.len());
    for name in labels.names() {
        let task = format!("{name}-vs-rest");
        let view = crate::data::relabel(ds, &Relabeling::one_vs_rest(ds, name))?;
        let (m, t) = train_binary(&view, cfg).map_err(|e| Error::Task {
            task,
            source: Box::new(e),
        })?;
        models.push(m);
        traces.push(t);
    }
    Ok((OneVsAllModel::new(models, labels.clone())?, traces))
}

// ---------------------------------------------------------------------------
// Model files

pub const MODEL_FORMAT: &str = "ids-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile<T> {
    format: String,
    version: u32,
    model: T,
}

impl Model {
    pub fn to_text(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            model: self,
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Model> {
        let file: ModelFile<Model> =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "model format version {} unsupported (supported: {MODEL_FORMAT_VERSION})",
                file.version
            )));
        }
        file.model.validate()?;
        Ok(file.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> LabelSpace {
        LabelSpace::binary("normal", "attack")
    }

    #[test]
    fn sigmoid_edges() {
        assert_eq!(sigmoid(0.0), 0.5);
        let tiny = sigmoid(-1000.0);
        assert!((0.0..=1e-300).contains(&tiny));
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() <= 1e-15);
        assert!((sigmoid(3.0) - 0.9525741268224334).abs() < 1e-15);
    }

    #[test]
    fn binary_objective_at_zero() {
        // x = 1 labelled attack (+1), x = -1 labelled normal (-1).
        let ds = Dataset::from_rows(vec![vec![1.0], vec![-1.0]], vec![1, 0], vec!["x".into()], space()).unwrap();
        let design = Design::new(&ds, &StandardizationRecipe::identity(1)).unwrap();
        let obj = BinaryObjective::new(&design, 1);
        let mut g = vec![0.0; 2];
        let f = obj.eval(&[0.0, 0.0], &mut g);
        assert!((f - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(g[0].abs() < 1e-15);
        assert!((g[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn multi_objective_at_zero_is_ln_k() {
        let labels = LabelSpace::new(vec!["a".into(), "b".into(), "c".into(), "d".into()], 0).unwrap();
        let ds = Dataset::from_rows(
            vec![vec![0.3, 1.0], vec![-2.0, 0.1], vec![5.0, 5.0]],
            vec![0, 3, 2],
            vec!["x".into(), "y".into()],
            labels,
        )
        .unwrap();
        let design = Design::new(&ds, &StandardizationRecipe::identity(2)).unwrap();
        let obj = MultiObjective::new(&design, 4);
        assert!((obj.value(&vec![0.0; obj.dim()]) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_tie_to_normal() {
        let m = BinaryModel::new(vec![0.0; 3], StandardizationRecipe::identity(2), space()).unwrap();
        let p = m.predict(&[4.0, -1.0]).unwrap();
        assert_eq!(p.score, 0.0);
        assert_eq!(p.class, 0);
        assert_eq!(p.probabilities, vec![0.5, 0.5]);
    }

    #[test]
    fn score_three() {
        let m = BinaryModel::new(vec![3.0, 0.0], StandardizationRecipe::identity(1), space()).unwrap();
        let p = m.predict(&[7.0]).unwrap();
        assert_eq!(p.class, 1);
        assert!((p.probabilities[1] - 0.9525741268224334).abs() < 1e-15);
    }

    #[test]
    fn nan_and_arity_rejected() {
        let m = BinaryModel::new(vec![0.0; 2], StandardizationRecipe::identity(1), space()).unwrap();
        assert!(matches!(m.predict(&[f64::NAN]), Err(Error::NonFinite)));
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn multi_uniform_and_saturated() {
        let labels = LabelSpace::new(vec!["a".into(), "b".into(), "c".into()], 0).unwrap();
        let zero = MultiModel::new(vec![0.0; 4], StandardizationRecipe::identity(1), labels.clone()).unwrap();
        let p = zero.predict(&[2.0]).unwrap();
        assert_eq!(p.class, 0);
        for q in &p.probabilities {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
        // Bias of class 1 = 50, everything else 0.
        let w = vec![0.0, 50.0, 0.0, 0.0];
        let m = MultiModel::new(w, StandardizationRecipe::identity(1), labels).unwrap();
        let p = m.predict(&[0.0]).unwrap();
        assert_eq!(p.class, 1);
        assert!(p.probabilities[1] > 1.0 - 1e-15);
        assert!(1.0 - p.probabilities[1] < 2.0 * (-50f64).exp());
    }

    #[test]
    fn separable_pair_trains_to_zero_error() {
        let ds = Dataset::from_rows(vec![vec![-1.0], vec![1.0]], vec![0, 1], vec!["x".into()], space()).unwrap();
        let (m, trace) = train_binary(&ds, &QnConfig::default()).unwrap();
        assert_eq!(m.predict_all(&ds).unwrap(), vec![0, 1]);
        for w in trace.values.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn identical_labels_rejected() {
        let ds = Dataset::from_rows(vec![vec![-1.0], vec![1.0]], vec![1, 1], vec!["x".into()], space()).unwrap();
        assert!(matches!(train_binary(&ds, &QnConfig::default()), Err(Error::Degenerate(_))));
        assert!(matches!(train_multi(&ds, &QnConfig::default()), Err(Error::Degenerate(_))));
        let err = one_vs_all_train(&ds, &QnConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Task { ref task, .. } if task == "normal-vs-rest"));
    }

    #[test]
    fn model_text_roundtrip() {
        let labels = LabelSpace::new(vec!["a".into(), "b".into(), "c".into()], 2).unwrap();
        let recipe = StandardizationRecipe {
            means: vec![0.25, -3.0],
            stddevs: vec![1.5, 0.0],
        };
        let w: Vec<f64> = (0..6).map(|i| (i as f64 - 2.5) / 7.0).collect();
        let model = Model::Multi(MultiModel::new(w, recipe, labels).unwrap());
        let text = model.to_text().unwrap();
        assert!(text.contains("\"format\": \"ids-model\""));
        let back = Model::from_text(&text).unwrap();
        assert_eq!(back, model);
        let bumped = text.replace("\"version\": 1", "\"version\": 2");
        assert!(Model::from_text(&bumped).is_err());
    }
}
