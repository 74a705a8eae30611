//! Synthetic networks with known ground truth.
//!
//! Neurons are modelled as i.i.d. draws from a spiked Gaussian: a few
//! "learned" directions on top of an isotropic initialization bulk. Paired
//! fixtures add a planted orthogonal change of basis between two networks,
//! applied to both activations and weights.

use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{invalid, Result};
use crate::factorization::ChannelWeight;
use crate::linalg::{haar_orthogonal, orthogonality_defect, random_orthonormal_columns, Matrix};
use crate::rng::{gaussian, gaussian_matrix, stream, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct Spike {
    pub value: f64,
    /// Unit vector of length `d`.
    pub vector: Vec<f64>,
}

/// Covariance `Σ ℓ_k u_k u_kᵀ + σ² I`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikedModel {
    pub d: usize,
    pub spikes: Vec<Spike>,
    pub sigma2: f64,
}

impl SpikedModel {
    pub fn new(d: usize, spikes: Vec<Spike>, sigma2: f64) -> Result<Self> {
        if d == 0 {
            return Err(invalid("model dimension must be positive"));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(invalid("bulk variance must be positive"));
        }
        if spikes.len() > d {
            return Err(invalid("more spikes than dimensions"));
        }
        if spikes.iter().any(|s| s.vector.len() != d || !(s.value > 0.0)) {
            return Err(invalid("spikes need positive values and length-d vectors"));
        }
        if spikes.windows(2).any(|w| w[0].value < w[1].value) {
            return Err(invalid("spike values must be sorted descending"));
        }
        let u = Matrix::from_fn(d, spikes.len(), |i, k| spikes[k].vector[i]);
        if orthogonality_defect(&u) > 1e-10 {
            return Err(invalid("spike vectors must be orthonormal"));
        }
        Ok(Self { d, spikes, sigma2 })
    }

    /// Spike directions from orthonormalized seeded Gaussian vectors.
    /// `values` may be given in any order.
    pub fn random(d: usize, values: &[f64], sigma2: f64, seed: u64) -> Result<Self> {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let u = random_orthonormal_columns(&mut stream(seed, streams::SPIKE_VECTORS), d, sorted.len())?;
        let spikes = sorted
            .iter()
            .enumerate()
            .map(|(k, &value)| Spike {
                value,
                vector: u.column(k).iter().copied().collect(),
            })
            .collect();
        Self::new(d, spikes, sigma2)
    }

    /// Largest leading spike, 0 without spikes.
    pub fn max_spike(&self) -> f64 {
        self.spikes.first().map_or(0.0, |s| s.value)
    }

    pub fn covariance(&self) -> Matrix {
        let mut c = Matrix::identity(self.d, self.d) * self.sigma2;
        for s in &self.spikes {
            let u = nalgebra::DVector::from_column_slice(&s.vector);
            c += &u * u.transpose() * s.value;
        }
        c
    }

    /// Learned component `Σ ℓ_k u_k u_kᵀ` (the quantity shrinkage estimates
    /// after normalizing the bulk to 1).
    pub fn learned_covariance(&self) -> Matrix {
        self.covariance() - Matrix::identity(self.d, self.d) * self.sigma2
    }
}

/// One model per layer, each with the same spike values and its own
/// seeded spike directions.
pub fn layer_models(d: usize, values: &[f64], sigma2: f64, layers: usize, seed: u64) -> Result<Vec<SpikedModel>> {
    (0..layers)
        .map(|l| SpikedModel::random(d, values, sigma2, child_seed(seed, l, ROLE_MODEL_A)))
        .collect()
}

/// `n` neurons drawn i.i.d. from the model, as an `n x d` channel weight with
/// `init_std = σ`.
pub fn sample_weights(model: &SpikedModel, n: usize, seed: u64) -> Result<ChannelWeight> {
    if n == 0 {
        return Err(invalid("need at least one neuron"));
    }
    let mut rng = stream(seed, streams::WEIGHTS);
    let sigma = libm::sqrt(model.sigma2);
    let amplitudes: Vec<f64> = model.spikes.iter().map(|s| libm::sqrt(s.value)).collect();
    let mut m = Matrix::zeros(n, model.d);
    for r in 0..n {
        for c in 0..model.d {
            m[(r, c)] = sigma * gaussian(&mut rng);
        }
        for (s, amp) in model.spikes.iter().zip(&amplitudes) {
            let g = amp * gaussian(&mut rng);
            for (c, u) in s.vector.iter().enumerate() {
                m[(r, c)] += g * u;
            }
        }
    }
    Ok(ChannelWeight::new(m, 0).with_init_std(Some(sigma)))
}

/// How the second network of a fixture relates to the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FixtureMode {
    /// Second network's weights are exactly the first's in the rotated basis.
    #[default]
    Conjugate,
    /// Independent draw from the same model, then rotated.
    Shared,
    /// Independent draw from a model with fresh spike directions, then
    /// rotated.
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureLayer {
    pub layer_index: usize,
    pub weights_a: ChannelWeight,
    pub weights_b: ChannelWeight,
    /// `n_acts x d` representation feeding the layer in network A.
    pub acts_a: Matrix,
    /// `acts_a Qᵀ`.
    pub acts_b: Matrix,
    /// Planted rotation `Q`.
    pub rotation: Matrix,
    /// Population covariance of each network's neurons in its own basis.
    pub truth_a: Matrix,
    pub truth_b: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedFixture {
    pub layers: Vec<FixtureLayer>,
    pub mode: FixtureMode,
    pub seed: u64,
    pub neurons: usize,
    pub activation_samples: usize,
}

const ROLE_WEIGHTS_A: u64 = 0;
const ROLE_WEIGHTS_B: u64 = 1;
const ROLE_ACTS: u64 = 2;
const ROLE_ROTATION: u64 = 3;
const ROLE_MODEL_B: u64 = 4;
const ROLE_MODEL_A: u64 = 5;

fn child_seed(seed: u64, layer: usize, role: u64) -> u64 {
    stream(seed, streams::FIXTURE_BASE + 16 * layer as u64 + role).next_u64()
}

/// One fixture layer per model. Layer indices start at 1.
pub fn make_paired_fixture(
    models: &[SpikedModel],
    neurons: usize,
    activation_samples: usize,
    mode: FixtureMode,
    seed: u64,
) -> Result<PairedFixture> {
    if activation_samples == 0 {
        return Err(invalid("need at least one activation sample"));
    }
    let mut layers = Vec::with_capacity(models.len());
    for (l, model) in models.iter().enumerate() {
        let layer_index = l + 1;
        let d = model.d;
        let q = haar_orthogonal(&mut stream(child_seed(seed, l, ROLE_ROTATION), 0), d);
        let acts_a = gaussian_matrix(&mut stream(child_seed(seed, l, ROLE_ACTS), 0), activation_samples, d);
        let acts_b = &acts_a * q.transpose();

        let mut weights_a = sample_weights(model, neurons, child_seed(seed, l, ROLE_WEIGHTS_A))?;
        weights_a.layer_index = layer_index;
        let (b_in_a_basis, truth_b_own) = match mode {
            FixtureMode::Conjugate => (weights_a.clone(), model.covariance()),
            FixtureMode::Shared => (
                sample_weights(model, neurons, child_seed(seed, l, ROLE_WEIGHTS_B))?,
                model.covariance(),
            ),
            FixtureMode::Independent => {
                let values: Vec<f64> = model.spikes.iter().map(|s| s.value).collect();
                let other = SpikedModel::random(d, &values, model.sigma2, child_seed(seed, l, ROLE_MODEL_B))?;
                (
                    sample_weights(&other, neurons, child_seed(seed, l, ROLE_WEIGHTS_B))?,
                    other.covariance(),
                )
            }
        };
        let mut weights_b = b_in_a_basis;
        weights_b.matrix = &weights_b.matrix * q.transpose();
        weights_b.layer_index = layer_index;
        layers.push(FixtureLayer {
            layer_index,
            weights_a,
            weights_b,
            acts_a,
            acts_b,
            truth_a: model.covariance(),
            truth_b: &q * truth_b_own * q.transpose(),
            rotation: q,
        });
    }
    Ok(PairedFixture {
        layers,
        mode,
        seed,
        neurons,
        activation_samples,
    })
}
