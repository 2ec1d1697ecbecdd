//! Synthetic datasets for tests, benches and demos when the public
//! benchmark files are not at hand.
//!
//! * [`gaussian_classes`]: isotropic Gaussian classes with known means, so the
//!   Bayes-optimal decision rule is available in closed form.
//! * [`ics_command_injection`]: records in the gas-pipeline command-injection
//!   column layout ([`crate::data::ICS_COLUMNS`] plus a nominal `address`),
//!   with four constant columns, two groups of four near-duplicate columns,
//!   and attack classes that are separable to varying degrees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{ColumnKind, ConnectionRecord, Dataset, LabelSpace, ICS_CLASSES, ICS_COLUMNS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub class_names: Vec<String>,
    /// One mean vector per class.
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl GaussianSpec {
    /// Class `c` centred at `distance * e_c`; classes named `c0, c1, ...`.
    pub fn separated(classes: usize, dims: usize, distance: f64) -> Self {
        assert!(classes <= dims, "need at least one dimension per class");
        let means = (0..classes)
            .map(|c| {
                let mut m = vec![0.0; dims];
                m[c] = distance;
                m
            })
            .collect();
        Self {
            class_names: (0..classes).map(|c| format!("c{c}")).collect(),
            means,
            sigma: 1.0,
        }
    }

    /// Four classes shaped like the sampled KDD experiment (38 columns).
    pub fn kdd_like() -> Self {
        let mut spec = Self::separated(4, 38, 2.5);
        spec.class_names = ["Normal", "Smurf", "Neptune", "Others"].iter().map(|s| s.to_string()).collect();
        spec
    }

    pub fn dims(&self) -> usize {
        self.means[0].len()
    }
}

/// Draws `counts[c]` records from class `c`, shuffled. Class 0 is normal.
pub fn gaussian_classes(spec: &GaussianSpec, counts: &[usize], seed: u64) -> Result<Dataset> {
    if counts.len() != spec.means.len() {
        return Err(Error::Dimension {
            expected: spec.means.len(),
            found: counts.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, (&n, mean)) in counts.iter().zip(&spec.means).enumerate() {
        for _ in 0..n {
            let x: Vec<f64> = mean
                .iter()
                .map(|m| m + spec.sigma * { let z: f64 = StandardNormal.sample(&mut rng); z })
                .collect();
            rows.push(x);
            labels.push(c);
        }
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let rows = order.iter().map(|&i| rows[i].clone()).collect();
    let labels = order.iter().map(|&i| labels[i]).collect();
    let names = (1..=spec.dims()).map(|j| format!("x{j}")).collect();
    Dataset::from_rows(rows, labels, names, LabelSpace::new(spec.class_names.clone(), 0)?)
}

/// Class sizes of the multi-class command-injection capture:
/// Good, AddressScan, FuncCodeScan, IllegalSetpoint, PIDModification.
pub const ICS_COUNTS: [usize; 5] = [28086, 2, 9, 198, 49];

/// Address of the legitimate slave device.
const ICS_SLAVE_ADDRESS: f64 = 4.0;

/// Command-injection-style records: column 0 is the nominal `address`
/// (ordinal encoded), columns 1..=17 follow [`ICS_COLUMNS`].
pub fn ics_command_injection(counts: &[usize; 5], seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n01 = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut records = Vec::with_capacity(counts.iter().sum());
    for (class, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let attack = class != 0;
            let address = if class == 1 {
                loop {
                    let a = rng.random_range(0..=255) as f64;
                    if a != ICS_SLAVE_ADDRESS {
                        break a;
                    }
                }
            } else {
                ICS_SLAVE_ADDRESS
            };
            let invalid_fc = match class {
                2 => rng.random_bool(0.9),
                _ => rng.random_bool(0.001),
            };
            let pump = rng.random_bool(if attack { 0.65 } else { 0.5 });
            let solenoid = rng.random_bool(if attack { 0.6 } else { 0.5 });
            let pid = match class {
                4 => Normal::new(14.0, 2.0).expect("valid").sample(&mut rng),
                _ => Normal::new(10.0, 1.0).expect("valid").sample(&mut rng),
            };
            let delta = match class {
                4 => Normal::new(4.0, 1.5).expect("valid").sample(&mut rng),
                _ => 0.2 * n01(&mut rng),
            };
            let setpoint = match class {
                3 => rng.random_range(45.0..95.0),
                _ => 20.0 + 2.0 * n01(&mut rng),
            };
            let crc = n01(&mut rng) + if attack { 0.8 } else { 0.0 };
            let jitter = |rng: &mut ChaCha8Rng, scale: f64| scale * 0.01 * n01(rng);
            let features = vec![
                address,
                f64::from(u8::from(invalid_fc)),
                f64::from(u8::from(pump)),
                pid,
                0.5 * pid + jitter(&mut rng, 0.5),
                2.0 * pid + jitter(&mut rng, 2.0),
                1.0,
                3.0 * pid + jitter(&mut rng, 3.0),
                7.0,
                f64::from(u8::from(solenoid)),
                setpoint,
                delta,
                0.5 * delta + jitter(&mut rng, 0.5),
                2.0 * delta + jitter(&mut rng, 2.0),
                0.0,
                3.0 * delta + jitter(&mut rng, 3.0),
                0.0,
                crc,
            ];
            records.push(ConnectionRecord::new(features, Some(class)));
        }
    }
    rand::seq::SliceRandom::shuffle(records.as_mut_slice(), &mut rng);
    let mut names = vec!["address".to_string()];
    names.extend(ICS_COLUMNS.iter().map(|c| c.to_string()));
    let mut kinds = vec![ColumnKind::NominalEncoded];
    kinds.extend(std::iter::repeat_n(ColumnKind::Numeric, ICS_COLUMNS.len()));
    let labels = LabelSpace::new(ICS_CLASSES.iter().map(|c| c.to_string()).collect(), 0)?;
    Dataset::new(records, names, kinds, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ics_shape() {
        let ds = ics_command_injection(&ICS_COUNTS, 1).unwrap();
        assert_eq!(ds.len(), 28344);
        assert_eq!(ds.n_features(), 18);
        assert_eq!(ds.class_counts(), ICS_COUNTS.to_vec());
        let constant: Vec<&str> = ds
            .columns()
            .iter()
            .filter(|c| c.kind == ColumnKind::Constant)
            .map(|c| c.name.as_str())
            .collect();
        assert_eq!(constant, ["pid_rate", "pipeline_psi", "delta_pid_rate", "delta_pipeline_psi"]);
    }

    #[test]
    fn deterministic() {
        let spec = GaussianSpec::kdd_like();
        let a = gaussian_classes(&spec, &[8, 23, 8, 1], 5).unwrap();
        let b = gaussian_classes(&spec, &[8, 23, 8, 1], 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_features(), 38);
    }
}
