//! Seeded synthetic datasets.
//!
//! * Sinusoid regression: `z ~ U([-1,1]²)`, `y = cos(2πω z₁)·cos(2πω z₂)`,
//!   embedded isometrically as `x = R z` with `R` a random 10×2 matrix with
//!   orthonormal columns.
//! * Corrupted blobs: two Gaussian classes (means `±1.5·e₁`, covariance
//!   `I/4`) with an exact number of flipped labels.
//!
//! Every generator draws from [`ChaCha8Rng`] streams derived from the seed,
//! so outputs are identical across platforms.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, Matrix};

/// Ambient dimension of the sinusoid embedding.
pub const SINUSOID_AMBIENT_DIM: usize = 10;
/// Distance between the two blob means.
pub const BLOB_SEPARATION: f64 = 3.0;
/// Per-coordinate standard deviation of each blob (covariance `I/4`).
pub const BLOB_STD: f64 = 0.5;
pub const BLOB_DEFAULT_DIM: usize = 10;

const STREAM_SAMPLES: u64 = 0;
const STREAM_EMBEDDING: u64 = 1;
const STREAM_FLIPS: u64 = 2;

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Sinusoid,
    CorruptedBlobs,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub task: TaskKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub corruption: Option<f64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub embedding: Option<Matrix>,
    /// Number of labels flipped (blobs only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flipped: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// Low-dimensional coordinates before embedding, when there is one.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latent: Option<Vec<Vec<f64>>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Wraps arbitrary points; panics if lengths disagree or the set is empty.
    pub fn custom(inputs: Vec<Vec<f64>>, labels: Vec<f64>) -> Self {
        assert!(!inputs.is_empty(), "dataset must be nonempty");
        assert_eq!(inputs.len(), labels.len());
        Self {
            inputs,
            labels,
            latent: None,
            meta: DatasetMeta {
                task: TaskKind::Custom,
                omega: None,
                corruption: None,
                seed: 0,
                embedding: None,
                flipped: None,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// `dataset.csv`: columns `x_0 … x_{n-1}, y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.dim())
            .map(|i| format!("x_{i}"))
            .chain(std::iter::once("y".to_string()))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (x, y) in self.inputs.iter().zip(&self.labels) {
            let row: Vec<String> = x
                .iter()
                .chain(std::iter::once(y))
                .map(|v| v.to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// `meta.json` contents.
    pub fn meta_json(&self) -> String {
        serde_json::to_string_pretty(&self.meta).expect("meta serializes")
    }
}

/// Ground-truth label of the sinusoid task at latent point `z`.
pub fn sinusoid_label(omega: f64, z: &[f64]) -> f64 {
    let w = 2.0 * std::f64::consts::PI * omega;
    (w * z[0]).cos() * (w * z[1]).cos()
}

/// A sinusoid task instance: a frequency plus a fixed embedding. Train and
/// test samples drawn from the same instance share the embedding.
#[derive(Debug, Clone)]
pub struct SinusoidTask {
    pub omega: f64,
    pub embedding: Matrix,
    pub embedding_seed: u64,
}

impl SinusoidTask {
    pub fn new(omega: f64, embedding_seed: u64) -> Self {
        assert!(omega > 0.0, "frequency must be positive");
        let embedding = random_isometry(SINUSOID_AMBIENT_DIM, 2, embedding_seed);
        Self {
            omega,
            embedding,
            embedding_seed,
        }
    }

    pub fn embed(&self, z: &[f64]) -> Vec<f64> {
        self.embedding.mul_vec(z)
    }

    /// Draws `n` points. The latent stream depends only on `sample_seed`,
    /// never on the frequency.
    pub fn sample(&self, n: usize, sample_seed: u64) -> Dataset {
        let mut rng = stream(sample_seed, STREAM_SAMPLES);
        let latent: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
            .collect();
        let inputs = latent.iter().map(|z| self.embed(z)).collect();
        let labels = latent
            .iter()
            .map(|z| sinusoid_label(self.omega, z))
            .collect();
        Dataset {
            inputs,
            labels,
            latent: Some(latent),
            meta: DatasetMeta {
                task: TaskKind::Sinusoid,
                omega: Some(self.omega),
                corruption: None,
                seed: sample_seed,
                embedding: Some(self.embedding.clone()),
                flipped: None,
            },
        }
    }
}

/// Sinusoid regression set with embedding and samples both derived from `seed`.
pub fn gen_sinusoid(omega: f64, n: usize, seed: u64) -> Dataset {
    SinusoidTask::new(omega, seed).sample(n, seed)
}

/// Two Gaussian blobs with exactly `⌊corruption · n⌋` flipped labels.
pub fn gen_corrupted_blobs(corruption: f64, n: usize, n_dim: usize, seed: u64) -> Dataset {
    assert!(
        (0.0..=1.0).contains(&corruption),
        "corruption must lie in [0, 1]"
    );
    assert!(n_dim >= 1);
    let mut rng = stream(seed, STREAM_SAMPLES);
    let half = BLOB_SEPARATION / 2.0;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_bool(0.5);
        let mut x: Vec<f64> = (0..n_dim)
            .map(|_| BLOB_STD * rng.sample::<f64, _>(StandardNormal))
            .collect();
        x[0] += if class { half } else { -half };
        inputs.push(x);
        labels.push(if class { 1.0 } else { 0.0 });
    }
    let flips = (corruption * n as f64).floor() as usize;
    let mut flip_rng = stream(seed, STREAM_FLIPS);
    for i in index::sample(&mut flip_rng, n, flips.min(n)) {
        labels[i] = 1.0 - labels[i];
    }
    Dataset {
        inputs,
        labels,
        latent: None,
        meta: DatasetMeta {
            task: TaskKind::CorruptedBlobs,
            omega: None,
            corruption: Some(corruption),
            seed,
            embedding: None,
            flipped: Some(flips),
        },
    }
}

/// Class a point would carry before corruption (sign of the first coordinate
/// is the Bayes-optimal linear rule).
pub fn blob_bayes_label(x: &[f64]) -> f64 {
    if x[0] > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `n_hi × n_lo` matrix with orthonormal columns, from the QR factor of a
/// seeded Gaussian matrix.
pub fn random_isometry(n_hi: usize, n_lo: usize, seed: u64) -> Matrix {
    assert!(n_lo <= n_hi, "isometry needs n_lo <= n_hi");
    let mut rng = stream(seed, STREAM_EMBEDDING);
    loop {
        let data = (0..n_hi * n_lo)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let g = Matrix::from_vec(n_hi, n_lo, data);
        // A Gaussian matrix is rank deficient with probability zero; retry
        // from the same stream if it ever is numerically.
        if let Some(q) = linalg::orthonormalize_columns(&g) {
            return q;
        }
    }
}
