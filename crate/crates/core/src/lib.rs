//! Logistic-regression intrusion detection for tiered SCADA networks.
//!
//! The crate is split by concern:
//!
//! * [`data`] loads connection records from CSV, standardizes, samples and relabels them.
//! * [`optimizer`] is a BFGS quasi-Newton minimizer with back-tracking line search.
//! * [`model`] holds binary, multinomial and one-vs-all logistic regression.
//! * [`featsel`] ranks features by information gain, prunes correlated columns and fits PCA.
//! * [`eval`] computes confusion matrices, recall/precision, repeated k-fold CV and t intervals.
//! * [`protocol`] is the length-prefixed wire format between the server and its clients.
//! * [`runtime`] runs the server (training and principle push) and the detection clients.
//! * [`synth`] generates surrogate datasets shaped like the public benchmark files.

pub mod data;
pub mod error;
pub mod eval;
pub mod featsel;
pub mod model;
pub mod optimizer;
pub mod pipeline;
pub mod protocol;
pub mod runtime;
pub mod synth;

mod floatfmt;

pub use data::{ColumnKind, ColumnMeta, ConnectionRecord, Dataset, LabelSpace, Schema, StandardizationRecipe};
pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, CvConfig, CvResult, Mode};
pub use featsel::{Binning, IgReport, LogBase, PcaRecipe};
pub use model::{BinaryModel, Classifier, Model, MultiModel, OneVsAllModel, Prediction};
pub use optimizer::{QnConfig, QnTrace};
pub use pipeline::{Detector, Pipeline, Selection, Trainer};
pub use protocol::{Message, PrinciplePacket};
