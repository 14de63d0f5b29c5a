use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{percentile, Dataset, PairedSample, Split};
use crate::embedding_db::TargetShape;
use crate::error::{MrisError, Result};
use crate::numerics::DenseMatrix;
use crate::types::RecordId;

/// How subjects are divided among train_db / downstream / test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    Fractions([f64; 3]),
    Counts([usize; 3]),
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions([0.43, 0.38, 0.19])
    }
}

impl SplitSpec {
    pub fn counts(&self, subjects: usize) -> Result<[usize; 3]> {
        match *self {
            SplitSpec::Counts(c) => {
                if c.iter().sum::<usize>() != subjects {
                    return Err(MrisError::Config(format!(
                        "split counts {c:?} do not sum to {subjects} subjects"
                    )));
                }
                Ok(c)
            }
            SplitSpec::Fractions(f) => {
                let total: f64 = f.iter().sum();
                if f.iter().any(|&x| !(x >= 0.0)) || total <= 0.0 {
                    return Err(MrisError::Config(format!("invalid split fractions {f:?}")));
                }
                let test = ((f[2] / total) * subjects as f64).round() as usize;
                let down = ((f[1] / total) * subjects as f64).round() as usize;
                let down = down.min(subjects - test.min(subjects));
                let test = test.min(subjects);
                Ok([subjects - test - down, down, test])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub num_subjects: usize,
    /// Each subject gets a uniform draw from `1..=max_timepoints`.
    pub max_timepoints: u32,
    pub latent_dim: usize,
    pub query_dim: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f64,
    /// Scale of the per-subject drift magnitude `|N(0,1)|·drift_rate`.
    pub drift_rate: f64,
    /// Standard deviation of latent coordinate 0, the severity axis.
    pub severity_scale: f64,
    /// Constant baseline level added to every query value.
    pub query_offset: f64,
    /// Constant baseline level added to every target pixel.
    pub target_offset: f64,
    pub seed: u64,
    pub split: SplitSpec,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_subjects: 300,
            max_timepoints: 4,
            latent_dim: 8,
            query_dim: 64,
            height: 16,
            width: 16,
            noise: 0.05,
            drift_rate: 0.3,
            severity_scale: 3.0,
            query_offset: 1.5,
            target_offset: 1.5,
            seed: 0,
            split: SplitSpec::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.num_subjects > 0
            && self.latent_dim > 0
            && self.query_dim > 0
            && self.height > 0
            && self.width > 0;
        if !positive {
            return Err(MrisError::Config("generator sizes must be positive".into()));
        }
        if !(1..=4).contains(&self.max_timepoints) {
            return Err(MrisError::Config(format!(
                "timepoints per subject must be in 1..=4, got {}",
                self.max_timepoints
            )));
        }
        let finite = [self.noise, self.drift_rate, self.severity_scale]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.query_offset.is_finite()
            && self.target_offset.is_finite();
        if !finite || self.severity_scale == 0.0 {
            return Err(MrisError::Config(
                "noise and drift must be >= 0 and severity scale > 0".into(),
            ));
        }
        self.split.counts(self.num_subjects)?;
        Ok(())
    }
}

/// Generated dataset plus the ground truth that produced it.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// Drifted latent per sample, aligned with `dataset.samples`.
    pub latents: Vec<Vec<f64>>,
    pub query_projection: DenseMatrix<f64>,
    pub target_projection: DenseMatrix<f64>,
}

/// Latent-variable paired data:
///
/// ```text
/// z_t = z + t·r·u        x = c_x + A·z_t + ε        y = c_y + B·z_t + ε′
/// ```
///
/// with per-subject `z`, unit drift direction `u` and drift magnitude `r`,
/// dataset-wide projections `A (Q×L)`, `B (HW×L)` and constant offsets
/// `c_x`, `c_y`.
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let l = cfg.latent_dim;
    let pixels = cfg.height * cfg.width;
    let inv = 1.0 / (l as f64).sqrt();
    let a = DenseMatrix::<f64>::from_fn(cfg.query_dim, l, |_, _| normal(&mut rng) * inv);
    let b = DenseMatrix::<f64>::from_fn(pixels, l, |_, _| normal(&mut rng) * inv);

    let mut raw = Vec::new();
    let mut drift = Vec::with_capacity(cfg.num_subjects);
    for s in 0..cfg.num_subjects {
        let subject = format!("S{s:04}");
        let mut z: Vec<f64> = (0..l).map(|_| normal(&mut rng)).collect();
        z[0] *= cfg.severity_scale;
        let mut u: Vec<f64> = (0..l).map(|_| normal(&mut rng)).collect();
        let un = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        u.iter_mut().for_each(|v| *v /= un);
        let rate = cfg.drift_rate * normal(&mut rng).abs();
        drift.push(rate);
        let timepoints = rng.random_range(1..=cfg.max_timepoints);
        for t in 0..timepoints {
            let zt: Vec<f64> = z.iter().zip(&u).map(|(zi, ui)| zi + t as f64 * rate * ui).collect();
            let x: Vec<f32> = a
                .matvec(&zt)?
                .into_iter()
                .map(|v| (cfg.query_offset + v + cfg.noise * normal(&mut rng)) as f32)
                .collect();
            let y: Vec<f32> = b
                .matvec(&zt)?
                .into_iter()
                .map(|v| (cfg.target_offset + v + cfg.noise * normal(&mut rng)) as f32)
                .collect();
            raw.push((RecordId::new(subject.clone(), t), s, x, y, zt));
        }
    }

    let severity: Vec<f64> = raw.iter().map(|r| r.4[0]).collect();
    let cuts = [
        percentile(&severity, 0.25)?,
        percentile(&severity, 0.50)?,
        percentile(&severity, 0.75)?,
    ];
    let drift_median = percentile(&drift, 0.5)?;

    let mut subjects: Vec<usize> = (0..cfg.num_subjects).collect();
    subjects.shuffle(&mut rng);
    let [n_db, n_down, _] = cfg.split.counts(cfg.num_subjects)?;
    let mut splits = BTreeMap::new();
    for (rank, &s) in subjects.iter().enumerate() {
        let split = if rank < n_db {
            Split::TrainDb
        } else if rank < n_db + n_down {
            Split::Downstream
        } else {
            Split::Test
        };
        splits.insert(format!("S{s:04}"), split);
    }

    let mut samples = Vec::with_capacity(raw.len());
    let mut latents = Vec::with_capacity(raw.len());
    for (id, s, x, y, zt) in raw {
        let stratum = cuts.iter().filter(|&&c| zt[0] > c).count() as u8;
        samples.push(PairedSample {
            id,
            query: x,
            target: y,
            stratum,
            progression: Some(drift[s] > drift_median),
        });
        latents.push(zt);
    }

    let dataset = Dataset {
        query_dim: cfg.query_dim,
        shape: TargetShape::new(cfg.height, cfg.width),
        seed: cfg.seed,
        samples,
        splits,
    };
    dataset.validate()?;
    Ok(Synthetic {
        dataset,
        latents,
        query_projection: a,
        target_projection: b,
    })
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
