//! Reproducible random streams and matrix-variate samplers (multivariate normal,
//! Wishart via the Bartlett construction, inverse Wishart).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, max_abs, spd_inverse, symmetrize};
use crate::matparam::CovarianceMatrix;

/// A seed plus stream index identifying one reproducible draw sequence.
///
/// The generator is ChaCha8 keyed by `seed` with its stream counter set to
/// `stream_index`, so distinct indices are independent and a given pair always
/// yields the same sequence regardless of thread scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    #[serde(default)]
    pub stream_index: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream_index: 0 }
    }

    pub fn with_index(seed: u64, stream_index: u64) -> Self {
        Self { seed, stream_index }
    }

    /// The generator for this stream, positioned at its start.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_index);
        rng
    }

    /// A child stream, independent of this one and of its other children.
    pub fn substream(&self, index: u64) -> Self {
        Self {
            seed: mix64(self.seed ^ mix64(self.stream_index.wrapping_add(0x9E37_79B9_7F4A_7C15))),
            stream_index: index,
        }
    }

    /// A child stream keyed by a label, for separating unrelated uses of one seed.
    pub fn fork(&self, label: &str) -> Self {
        let h = label
            .bytes()
            .fold(0xCBF2_9CE4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3));
        Self {
            seed: mix64(self.seed ^ h),
            stream_index: self.stream_index,
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Multivariate normal sampler with a cached factor.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    // None for an all-zero covariance.
    factor: Option<DMatrix<f64>>,
}

impl MvnSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension(format!(
                "mean of length {} with a {}x{} covariance",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if max_abs(cov) == 0.0 {
            return Ok(Self { mean, factor: None });
        }
        let chol = cholesky_jitter(&symmetrize(cov))?;
        Ok(Self {
            mean,
            factor: Some(chol.unpack()),
        })
    }

    /// Sampler for independent components with the given variances.
    pub fn diagonal(mean: DVector<f64>, var: &DVector<f64>) -> Result<Self> {
        if var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameters("variances must be nonnegative".into()));
        }
        Self::new(mean, &DMatrix::from_diagonal(var))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match &self.factor {
            None => self.mean.clone(),
            Some(l) => {
                let z = DVector::from_iterator(self.mean.len(), (0..self.mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
                &self.mean + l * z
            }
        }
    }
}

/// One multivariate normal draw.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &CovarianceMatrix, rng: &mut R) -> Result<DVector<f64>> {
    Ok(MvnSampler::new(mean.clone(), cov.as_matrix())?.sample(rng))
}

/// Wishart sampler using the Bartlett decomposition `W = L A Aᵀ Lᵀ`.
#[derive(Debug, Clone)]
pub struct WishartSampler {
    scale_factor: DMatrix<f64>,
    chi: Vec<ChiSquared<f64>>,
}

impl WishartSampler {
    pub fn new(scale: &DMatrix<f64>, dof: f64) -> Result<Self> {
        let m = scale.nrows();
        if !(dof >= m as f64) || !dof.is_finite() {
            return Err(Error::InvalidParameters(format!(
                "Wishart degrees of freedom {dof} must be at least the dimension {m}"
            )));
        }
        let chol = cholesky_jitter(&symmetrize(scale))?;
        let chi = (0..m)
            .map(|i| {
                ChiSquared::new(dof - i as f64)
                    .map_err(|e| Error::InvalidParameters(format!("chi-square dof {}: {e}", dof - i as f64)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scale_factor: chol.unpack(),
            chi,
        })
    }

    pub fn dim(&self) -> usize {
        self.scale_factor.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let m = self.dim();
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            a[(i, i)] = self.chi[i].sample(rng).sqrt();
            for j in 0..i {
                a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let la = &self.scale_factor * a;
        symmetrize(&(&la * la.transpose()))
    }
}

/// One Wishart draw with `E[W] = dof * scale`.
pub fn sample_wishart<R: Rng + ?Sized>(scale: &CovarianceMatrix, dof: f64, rng: &mut R) -> Result<CovarianceMatrix> {
    let w = WishartSampler::new(scale.as_matrix(), dof)?.sample(rng);
    CovarianceMatrix::new(w)
}

/// Parameters of `IW(ν, H)`, mean `H / (ν - M - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseWishartParams {
    pub h: DMatrix<f64>,
    pub nu: f64,
}

impl InverseWishartParams {
    pub fn new(h: DMatrix<f64>, nu: f64) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::Dimension("inverse-Wishart scale must be square".into()));
        }
        let m = h.nrows() as f64;
        if !(nu > m + 1.0) || !nu.is_finite() {
            return Err(Error::UndefinedMean { nu, limit: m + 1.0 });
        }
        let h = symmetrize(&h);
        if nalgebra::Cholesky::new(h.clone()).is_none() {
            return Err(Error::InvalidParameters("inverse-Wishart scale must be positive definite".into()));
        }
        Ok(Self { h, nu })
    }

    /// Prior whose mean equals `sigma0`: `H = Σ₀ (ν - M - 1)`.
    pub fn with_mean(sigma0: &CovarianceMatrix, nu: f64) -> Result<Self> {
        let m = sigma0.dim() as f64;
        Self::new(sigma0.as_matrix() * (nu - m - 1.0), nu)
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
}

/// Inverse-Wishart sampler: inverts Wishart(H⁻¹, ν) draws.
#[derive(Debug, Clone)]
pub struct InverseWishartSampler {
    wishart: WishartSampler,
}

impl InverseWishartSampler {
    pub fn new(params: &InverseWishartParams) -> Result<Self> {
        let h_inv = spd_inverse(&params.h)?;
        Ok(Self {
            wishart: WishartSampler::new(&h_inv, params.nu)?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DMatrix<f64>> {
        spd_inverse(&self.wishart.sample(rng))
    }
}

pub fn sample_inverse_wishart<R: Rng + ?Sized>(params: &InverseWishartParams, rng: &mut R) -> Result<CovarianceMatrix> {
    CovarianceMatrix::new(InverseWishartSampler::new(params)?.sample(rng)?)
}

pub fn iw_mean(params: &InverseWishartParams) -> Result<CovarianceMatrix> {
    let m = params.dim() as f64;
    let denom = params.nu - m - 1.0;
    if !(denom > 0.0) {
        return Err(Error::UndefinedMean {
            nu: params.nu,
            limit: m + 1.0,
        });
    }
    CovarianceMatrix::new(&params.h / denom)
}

pub fn iw_mode(params: &InverseWishartParams) -> Result<CovarianceMatrix> {
    let m = params.dim() as f64;
    CovarianceMatrix::new(&params.h / (params.nu + m + 1.0))
}
