//! Training pipelines: column selection or PCA followed by a logistic model.
//! The result is a [`Detector`], the unit pushed from the server to clients.

use serde::{Deserialize, Serialize};

use crate::data::{relabel, Dataset, LabelSpace, Relabeling};
use crate::error::{Error, Result};
use crate::featsel::{pca_fit, pca_project, pca_transform, rank_features, Binning, LogBase, PcaRecipe};
use crate::model::{one_vs_all_train, train_binary, train_multi, Classifier, Model, Prediction};
use crate::optimizer::{QnConfig, QnTrace};

/// Which inputs the model sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Selection {
    /// Every column of the training data.
    Full,
    /// The `k` columns with the highest information gain, in dataset order.
    IgTopK { k: usize },
    /// Explicitly named columns, in the given order.
    Columns { names: Vec<String> },
    /// PCA over all columns, keeping the fewest components reaching `rho`.
    Pca { rho: f64 },
    /// PCA over all columns, keeping exactly `k` components.
    PcaComponents { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trainer {
    /// Normal vs. abnormal; multi-class data is merged into two classes first.
    Binary,
    Multi,
    OneVsAll,
}

impl std::str::FromStr for Trainer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Trainer::Binary),
            "multi" => Ok(Trainer::Multi),
            "ova" | "one-vs-all" => Ok(Trainer::OneVsAll),
            other => Err(Error::Config(format!("unknown trainer {other:?} (binary, multi, ova)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    pub selection: Selection,
    pub trainer: Trainer,
    #[serde(default)]
    pub optimizer: QnConfig,
}

impl Pipeline {
    pub fn new(selection: Selection, trainer: Trainer) -> Self {
        Self {
            selection,
            trainer,
            optimizer: QnConfig::default(),
        }
    }

    /// Label for abnormal records when a binary trainer merges classes.
    pub const ABNORMAL: &'static str = "Attack";

    /// Fits the pipeline. Returns the detector and one optimizer trace per
    /// trained binary/multinomial model.
    pub fn fit(&self, ds: &Dataset) -> Result<(Detector, Vec<QnTrace>)> {
        let ds = match self.trainer {
            Trainer::Binary if ds.labels().len() > 2 => relabel(ds, &Relabeling::normal_vs_abnormal(ds, Self::ABNORMAL))?,
            _ => ds.clone(),
        };
        let (inputs, pca) = match &self.selection {
            Selection::Full => (ds.column_names(), None),
            Selection::IgTopK { k } => {
                if *k == 0 || *k > ds.n_features() {
                    return Err(Error::Config(format!("ig top-k {k} outside 1..={}", ds.n_features())));
                }
                let report = rank_features(&ds, Binning::default(), LogBase::E)?;
                let mut chosen = report.top(*k).to_vec();
                chosen.sort_unstable();
                let names = ds.column_names();
                (chosen.into_iter().map(|j| names[j].clone()).collect(), None)
            }
            Selection::Columns { names } => (names.clone(), None),
            Selection::Pca { rho } => (ds.column_names(), Some(pca_fit(&ds, *rho)?)),
            Selection::PcaComponents { k } => (ds.column_names(), Some(pca_fit(&ds, 1.0)?.with_k(*k)?)),
        };
        let selected = ds.select_named(&inputs)?;
        let train_on = match &pca {
            Some(p) => pca_transform(p, &selected)?,
            None => selected,
        };
        let (model, traces) = match self.trainer {
            Trainer::Binary => {
                let (m, t) = train_binary(&train_on, &self.optimizer)?;
                (Model::Binary(m), vec![t])
            }
            Trainer::Multi => {
                let (m, t) = train_multi(&train_on, &self.optimizer)?;
                (Model::Multi(m), vec![t])
            }
            Trainer::OneVsAll => {
                let (m, t) = one_vs_all_train(&train_on, &self.optimizer)?;
                (Model::OneVsAll(m), t)
            }
        };
        Ok((Detector::new(inputs, pca, model)?, traces))
    }
}

/// Named inputs, optional PCA projection and a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detector {
    #[serde(rename = "feature_list")]
    inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pca: Option<PcaRecipe>,
    model: Model,
}

impl Detector {
    pub fn new(inputs: Vec<String>, pca: Option<PcaRecipe>, model: Model) -> Result<Self> {
        let d = Self { inputs, pca, model };
        d.validate()?;
        Ok(d)
    }

    /// A bare model whose inputs are named `f1..fM`.
    pub fn from_model(model: Model) -> Self {
        let inputs = (1..=model.input_dim()).map(|i| format!("f{i}")).collect();
        Self {
            inputs,
            pca: None,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let model_in = match &self.pca {
            Some(p) => {
                p.validate()?;
                if p.dim() != self.inputs.len() {
                    return Err(Error::ModelFormat(format!(
                        "PCA expects {} inputs, detector lists {}",
                        p.dim(),
                        self.inputs.len()
                    )));
                }
                p.k()
            }
            None => self.inputs.len(),
        };
        if model_in != self.model.input_dim() {
            return Err(Error::ModelFormat(format!(
                "model expects {} inputs, preprocessing yields {model_in}",
                self.model.input_dim()
            )));
        }
        Ok(())
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn pca(&self) -> Option<&PcaRecipe> {
        self.pca.as_ref()
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Column indices of `self.inputs` within `available`, if all are present.
    pub fn input_indices(&self, available: &[String]) -> Option<Vec<usize>> {
        self.inputs
            .iter()
            .map(|n| available.iter().position(|a| a == n))
            .collect()
    }

    /// Re-expresses `ds` (any column order, possibly more columns) as this
    /// detector's inputs.
    pub fn align(&self, ds: &Dataset) -> Result<Dataset> {
        ds.select_named(&self.inputs)
    }

    /// Maps a class name from another label space into this detector's space:
    /// same name, or for a normal/abnormal detector, normal vs. everything else.
    pub fn map_class(&self, name: &str, normal_name: &str) -> Option<usize> {
        let labels = self.labels();
        if let Some(i) = labels.index_of(name) {
            return Some(i);
        }
        if labels.is_binary() {
            if let Some(p) = labels.positive() {
                return Some(if name == normal_name { labels.normal() } else { p });
            }
        }
        None
    }
}

impl Classifier for Detector {
    fn input_dim(&self) -> usize {
        self.inputs.len()
    }

    fn labels(&self) -> &LabelSpace {
        self.model.labels()
    }

    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.inputs.len() {
            return Err(Error::Dimension {
                expected: self.inputs.len(),
                found: x.len(),
            });
        }
        match &self.pca {
            Some(p) => self.model.predict(&pca_project(p, x)?),
            None => self.model.predict(x),
        }
    }
}
