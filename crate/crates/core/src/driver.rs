//! Reproducible parameter sequences `η(ω), η(θω), η(θ²ω), …` in `[A, B]`.
//!
//! Random kinds draw from a counter-based ChaCha8 stream keyed by the seed,
//! so the `j`-th value does not depend on how many values were requested.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{MapParam, INV_E};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DriverKind {
    Constant,
    IidUniform,
    Markov {
        transition: Vec<Vec<f64>>,
        values: Vec<f64>,
    },
    Rotation {
        alpha: f64,
        phase: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverConfig {
    pub a: f64,
    pub b: f64,
    pub kind: DriverKind,
    pub seed: u64,
}

impl DriverConfig {
    pub fn constant(eta: f64) -> Self {
        Self {
            a: eta,
            b: eta,
            kind: DriverKind::Constant,
            seed: 0,
        }
    }

    pub fn iid_uniform(a: f64, b: f64, seed: u64) -> Self {
        Self {
            a,
            b,
            kind: DriverKind::IidUniform,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > INV_E) || !(self.a <= self.b) || !self.b.is_finite() {
            return Err(Error::Config(format!(
                "driver interval must satisfy 1/e < A <= B, got [{}, {}]",
                self.a, self.b
            )));
        }
        match &self.kind {
            DriverKind::Constant | DriverKind::IidUniform => Ok(()),
            DriverKind::Markov { transition, values } => {
                let n = values.len();
                if n == 0 || transition.len() != n {
                    return Err(Error::Config(format!(
                        "markov driver needs a {n}x{n} transition matrix and {n} values"
                    )));
                }
                for (i, row) in transition.iter().enumerate() {
                    if row.len() != n || row.iter().any(|&p| !(p >= 0.0)) {
                        return Err(Error::Config(format!("markov row {i} is malformed")));
                    }
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > 1e-12 {
                        return Err(Error::Config(format!("markov row {i} sums to {s}")));
                    }
                }
                if let Some(v) = values.iter().find(|&&v| !(self.a <= v && v <= self.b)) {
                    return Err(Error::Config(format!(
                        "markov value {v} outside [{}, {}]",
                        self.a, self.b
                    )));
                }
                Ok(())
            }
            DriverKind::Rotation { alpha, phase } => {
                if !(*alpha > 0.0 && *alpha < 1.0) || !phase.is_finite() {
                    return Err(Error::Config(format!(
                        "rotation needs alpha in (0, 1), got {alpha}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// `MapParam` for a value produced by this driver.
    pub fn param(&self, eta: f64) -> Result<MapParam> {
        MapParam::new(eta, self.a, self.b)
    }
}

/// A finite stretch `η(θ^{start}ω), …` of the driver output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSequence {
    pub etas: Vec<f64>,
    pub config: DriverConfig,
    pub start: usize,
}

impl ParamSequence {
    pub fn len(&self) -> usize {
        self.etas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.etas.is_empty()
    }

    pub fn param(&self, j: usize) -> Result<MapParam> {
        let eta = *self.etas.get(j).ok_or(Error::Bounds {
            index: j,
            len: self.etas.len(),
        })?;
        self.config.param(eta)
    }

    /// The sequence of `θ^k ω`.
    pub fn shift(&self, k: usize) -> Result<Self> {
        if k > self.etas.len() {
            return Err(Error::Bounds {
                index: k,
                len: self.etas.len(),
            });
        }
        Ok(Self {
            etas: self.etas[k..].to_vec(),
            config: self.config.clone(),
            start: self.start + k,
        })
    }
}

const IID_STREAM: u64 = 1;
const MARKOV_STREAM: u64 = 2;

fn iid_values(cfg: &DriverConfig, start: usize, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(IID_STREAM);
    // one f64 consumes two 32-bit words
    rng.set_word_pos(2 * start as u128);
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            (cfg.a + (cfg.b - cfg.a) * u).clamp(cfg.a, cfg.b)
        })
        .collect()
}

fn markov_values(cfg: &DriverConfig, transition: &[Vec<f64>], values: &[f64], n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(MARKOV_STREAM);
    let mut state = rng.gen_range(0..values.len());
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(values[state]);
        let u: f64 = rng.gen();
        let row = &transition[state];
        let mut acc = 0.0;
        let mut next = row.len() - 1;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = j;
                break;
            }
        }
        state = next;
    }
    out
}

/// The first `n` values starting at `θ^{start}ω`.
pub fn sample_from(cfg: &DriverConfig, start: usize, n: usize) -> Result<ParamSequence> {
    cfg.validate()?;
    let etas = match &cfg.kind {
        DriverKind::Constant => vec![cfg.a; n],
        DriverKind::IidUniform => iid_values(cfg, start, n),
        DriverKind::Markov { transition, values } => {
            let mut v = markov_values(cfg, transition, values, start + n);
            v.drain(..start);
            v
        }
        DriverKind::Rotation { alpha, phase } => (start..start + n)
            .map(|j| {
                let s = (phase + j as f64 * alpha).rem_euclid(1.0);
                (cfg.a + (cfg.b - cfg.a) * s).clamp(cfg.a, cfg.b)
            })
            .collect(),
    };
    assert!(
        etas.iter().all(|&e| cfg.a <= e && e <= cfg.b),
        "driver produced a value outside [A, B]"
    );
    Ok(ParamSequence {
        etas,
        config: cfg.clone(),
        start,
    })
}

pub fn sample_sequence(cfg: &DriverConfig, n: usize) -> Result<ParamSequence> {
    sample_from(cfg, 0, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn golden() -> f64 {
        (5f64.sqrt() - 1.0) / 2.0
    }

    #[test]
    fn constant_and_rotation() {
        let s = sample_sequence(&DriverConfig::constant(1.0), 3).unwrap();
        assert_eq!(s.etas, vec![1.0, 1.0, 1.0]);
        let cfg = DriverConfig {
            a: 1.0,
            b: 2.0,
            kind: DriverKind::Rotation {
                alpha: golden(),
                phase: 0.0,
            },
            seed: 0,
        };
        let s = sample_sequence(&cfg, 3).unwrap();
        assert_eq!(s.etas[0], 1.0);
        assert_relative_eq!(s.etas[1], 1.618_03, epsilon = 1e-5);
        assert_relative_eq!(s.etas[2], 1.236_07, epsilon = 1e-5);
    }

    #[test]
    fn iid_is_deterministic_and_counter_based() {
        let cfg = DriverConfig::iid_uniform(1.0, 1.2, 42);
        let a = sample_sequence(&cfg, 10).unwrap();
        let b = sample_sequence(&cfg, 10).unwrap();
        assert_eq!(a.etas, b.etas);
        let c = sample_from(&cfg, 4, 6).unwrap();
        assert_eq!(&a.etas[4..], &c.etas[..]);
        assert_ne!(a.etas, sample_sequence(&cfg.with_seed(43), 10).unwrap().etas);
    }

    #[test]
    fn iid_mean() {
        let (a, b) = (1.0, 2.0);
        let s = sample_sequence(&DriverConfig::iid_uniform(a, b, 7), 1_000_000).unwrap();
        let mean = s.etas.iter().sum::<f64>() / s.len() as f64;
        let sigma = (b - a) / 12f64.sqrt() / (s.len() as f64).sqrt();
        assert!((mean - 1.5).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn markov_stationary_frequencies() {
        let transition = vec![
            vec![0.5, 0.3, 0.2],
            vec![0.1, 0.6, 0.3],
            vec![0.4, 0.1, 0.5],
        ];
        let values = vec![1.0, 1.5, 2.0];
        let cfg = DriverConfig {
            a: 1.0,
            b: 2.0,
            kind: DriverKind::Markov {
                transition: transition.clone(),
                values: values.clone(),
            },
            seed: 11,
        };
        let n = 400_000;
        let s = sample_sequence(&cfg, n).unwrap();

        // stationary vector as the eigenvector of P^T for eigenvalue 1
        let pt = nalgebra::DMatrix::from_fn(3, 3, |i, j| transition[j][i]);
        let eig = pt.clone().complex_eigenvalues();
        assert!(eig.iter().any(|e| (e.re - 1.0).abs() < 1e-12));
        let a = pt - nalgebra::DMatrix::identity(3, 3);
        let svd = a.svd(true, true);
        let v_t = svd.v_t.unwrap();
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .unwrap();
        let mut pi: Vec<f64> = v_t.row(imin).iter().copied().collect();
        let sum: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= sum);

        // batch means for the occupation frequency of each state
        let batches = 40;
        let len = n / batches;
        for (state, &v) in values.iter().enumerate() {
            let means: Vec<f64> = (0..batches)
                .map(|b| {
                    s.etas[b * len..(b + 1) * len]
                        .iter()
                        .filter(|&&e| e == v)
                        .count() as f64
                        / len as f64
                })
                .collect();
            let m = means.iter().sum::<f64>() / batches as f64;
            let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
            let se = (var / batches as f64).sqrt();
            assert!((m - pi[state]).abs() < 3.0 * se + 1e-4, "state {state}: {m} vs {}", pi[state]);
        }
    }

    #[test]
    fn validation() {
        assert!(DriverConfig::constant(0.3).validate().is_err());
        assert!(DriverConfig::iid_uniform(1.2, 1.0, 0).validate().is_err());
        let bad_row = DriverConfig {
            a: 1.0,
            b: 2.0,
            kind: DriverKind::Markov {
                transition: vec![vec![0.5, 0.6], vec![0.5, 0.5]],
                values: vec![1.0, 2.0],
            },
            seed: 0,
        };
        assert!(matches!(bad_row.validate(), Err(Error::Config(_))));
        let bad_alpha = DriverConfig {
            a: 1.0,
            b: 2.0,
            kind: DriverKind::Rotation {
                alpha: 1.5,
                phase: 0.0,
            },
            seed: 0,
        };
        assert!(bad_alpha.validate().is_err());
    }

    #[test]
    fn shift_examples() {
        let s = ParamSequence {
            etas: vec![1.0, 2.0, 3.0],
            config: DriverConfig::iid_uniform(1.0, 3.0, 0),
            start: 0,
        };
        let s1 = s.shift(1).unwrap();
        assert_eq!(s1.etas, vec![2.0, 3.0]);
        assert_eq!(s1.start, 1);
        assert_eq!(s.shift(0).unwrap(), s);
        assert_eq!(s1.shift(1).unwrap(), s.shift(2).unwrap());
        assert!(matches!(s.shift(4), Err(Error::Bounds { index: 4, len: 3 })));
    }

    proptest! {
        #[test]
        fn values_in_range(a in 0.4f64..3.0, w in 0.0f64..2.0, seed: u64, n in 0usize..500) {
            prop_assume!(a > INV_E);
            let cfg = DriverConfig::iid_uniform(a, a + w, seed);
            let s = sample_sequence(&cfg, n).unwrap();
            prop_assert_eq!(s.len(), n);
            prop_assert!(s.etas.iter().all(|&e| a <= e && e <= a + w));
            let rot = DriverConfig { kind: DriverKind::Rotation { alpha: golden(), phase: 0.3 }, ..cfg };
            let s = sample_sequence(&rot, n).unwrap();
            prop_assert!(s.etas.iter().all(|&e| a <= e && e <= a + w));
        }
    }
}
