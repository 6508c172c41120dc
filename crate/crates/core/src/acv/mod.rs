//! Approximate control variate estimators.
//!
//! Every allocation family is described by `M` disjoint sample groups `g_0..g_{M-1}`.
//! The sets `z_0`, `z*_m` and `z_m` are unions of groups, so all set intersections
//! reduce to sums of group sizes. Model `m ≥ 1` is evaluated on `z*_m ∪ z_m` and the
//! high-fidelity model on `z_0`.

mod estimator;
mod optimize;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;
use crate::matparam::CovarianceMatrix;

pub use estimator::{evaluate_acv, AcvEvaluation};
pub use optimize::{
    allocate_at, continuous_optimum, mc_variance, mlmc_allocation, optimize_allocation,
    optimize_allocation_with, AllocationResult, FamilyOptimum, OptimizerConfig,
};

/// Largest ensemble the allocation kernels accept.
pub const MAX_MODELS: usize = 16;

/// Per-evaluation model costs, high fidelity first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CostModel {
    w: Vec<f64>,
}

impl CostModel {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidParameters("cost vector is empty".into()));
        }
        if w.len() > MAX_MODELS {
            return Err(Error::Dimension(format!("at most {MAX_MODELS} models are supported, got {}", w.len())));
        }
        if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidParameters(format!("cost w[{i}] = {v} must be positive and finite")));
        }
        Ok(Self { w })
    }

    pub fn n_models(&self) -> usize {
        self.w.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn get(&self, m: usize) -> f64 {
        self.w[m]
    }

    /// Cost of one joint evaluation of every model (one pilot row).
    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Whether the high-fidelity model is the most expensive one.
    pub fn is_ordered(&self) -> bool {
        self.w.iter().all(|&v| v <= self.w[0])
    }
}

impl TryFrom<Vec<f64>> for CostModel {
    type Error = Error;
    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<CostModel> for Vec<f64> {
    fn from(c: CostModel) -> Self {
        c.w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationFamily {
    AcvIs,
    Mfmc,
    Mlmc,
}

impl AllocationFamily {
    pub const ALL: [AllocationFamily; 3] = [Self::AcvIs, Self::Mfmc, Self::Mlmc];

    pub fn name(self) -> &'static str {
        match self {
            Self::AcvIs => "acv_is",
            Self::Mfmc => "mfmc",
            Self::Mlmc => "mlmc",
        }
    }
}

impl fmt::Display for AllocationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AllocationFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "acv_is" | "acvis" => Ok(Self::AcvIs),
            "mfmc" => Ok(Self::Mfmc),
            "mlmc" => Ok(Self::Mlmc),
            _ => Err(Error::Config(format!("unknown allocation family '{s}'"))),
        }
    }
}

/// Group membership of `z_0`, `z*_m` and `z_m` as bitmasks over sample groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLayout {
    family: AllocationFamily,
    n_models: usize,
    z0: u64,
    zstar: Vec<u64>,
    z: Vec<u64>,
}

fn range_mask(lo: usize, hi: usize) -> u64 {
    (lo..=hi).fold(0, |acc, g| acc | (1 << g))
}

impl GroupLayout {
    pub fn new(family: AllocationFamily, n_models: usize) -> Result<Self> {
        if n_models == 0 || n_models > MAX_MODELS {
            return Err(Error::Dimension(format!("model count {n_models} outside 1..={MAX_MODELS}")));
        }
        // Index 0 of `zstar`/`z` is unused so that model m reads slot m.
        let mut zstar = vec![0; n_models];
        let mut z = vec![0; n_models];
        for m in 1..n_models {
            let (s, t) = match family {
                AllocationFamily::AcvIs => (1, 1 << m),
                AllocationFamily::Mfmc => (range_mask(0, m - 1), range_mask(0, m)),
                AllocationFamily::Mlmc => (1 << (m - 1), 1 << m),
            };
            zstar[m] = s;
            z[m] = t;
        }
        Ok(Self {
            family,
            n_models,
            z0: 1,
            zstar,
            z,
        })
    }

    pub fn family(&self) -> AllocationFamily {
        self.family
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_groups(&self) -> usize {
        self.n_models
    }

    pub fn z0(&self) -> u64 {
        self.z0
    }

    pub fn zstar(&self, m: usize) -> u64 {
        self.zstar[m]
    }

    pub fn z(&self, m: usize) -> u64 {
        self.z[m]
    }

    /// Groups on which model `m` must be evaluated.
    pub fn evaluation_mask(&self, m: usize) -> u64 {
        if m == 0 {
            self.z0
        } else {
            self.zstar[m] | self.z[m]
        }
    }

    /// Cost of adding one sample to each group.
    pub fn group_costs(&self, w: &CostModel) -> Vec<f64> {
        (0..self.n_groups())
            .map(|g| {
                (0..self.n_models)
                    .filter(|&m| self.evaluation_mask(m) & (1 << g) != 0)
                    .map(|m| w.get(m))
                    .sum()
            })
            .collect()
    }

    /// `W(w, A)`: model costs times the number of distinct samples each model sees.
    pub fn cost(&self, w: &CostModel, sizes: &[f64]) -> f64 {
        (0..self.n_models)
            .map(|m| w.get(m) * set_size(self.evaluation_mask(m), sizes))
            .sum()
    }

    /// Cheapest allocation of the family: one sample per group.
    pub fn min_cost(&self, w: &CostModel) -> f64 {
        self.cost(w, &vec![1.0; self.n_groups()])
    }
}

#[inline]
fn set_size(mask: u64, sizes: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut bits = mask;
    while bits != 0 {
        let g = bits.trailing_zeros() as usize;
        s += sizes[g];
        bits &= bits - 1;
    }
    s
}

/// Integer sample allocation. `counts` follows the family convention: group sizes for
/// ACV-IS and MLMC, cumulative nested sizes `N_0 ≤ … ≤ N_{M-1}` for MFMC.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleAllocation {
    family: AllocationFamily,
    counts: Vec<u64>,
}

impl SampleAllocation {
    pub fn new(family: AllocationFamily, counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() || counts.len() > MAX_MODELS {
            return Err(Error::InvalidAllocation(format!("{} counts for {family}", counts.len())));
        }
        if counts[0] == 0 {
            return Err(Error::InvalidAllocation("N_0 must be at least 1".into()));
        }
        match family {
            AllocationFamily::Mfmc => {
                if counts.windows(2).any(|p| p[1] < p[0]) {
                    return Err(Error::InvalidAllocation(format!("mfmc counts must be nondecreasing: {counts:?}")));
                }
            }
            AllocationFamily::AcvIs | AllocationFamily::Mlmc => {
                if counts.iter().any(|&c| c == 0) {
                    return Err(Error::InvalidAllocation(format!("{family} group sizes must be positive: {counts:?}")));
                }
            }
        }
        Ok(Self { family, counts })
    }

    pub fn from_group_sizes(family: AllocationFamily, sizes: &[u64]) -> Result<Self> {
        let counts = match family {
            AllocationFamily::Mfmc => sizes
                .iter()
                .scan(0u64, |acc, &s| {
                    *acc += s;
                    Some(*acc)
                })
                .collect(),
            _ => sizes.to_vec(),
        };
        Self::new(family, counts)
    }

    /// Plain Monte Carlo with `n0` high-fidelity samples.
    pub fn monte_carlo(n0: u64) -> Result<Self> {
        Self::new(AllocationFamily::AcvIs, vec![n0])
    }

    pub fn family(&self) -> AllocationFamily {
        self.family
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n_models(&self) -> usize {
        self.counts.len()
    }

    pub fn n0(&self) -> u64 {
        self.counts[0]
    }

    pub fn group_sizes(&self) -> Vec<u64> {
        match self.family {
            AllocationFamily::Mfmc => {
                let mut prev = 0;
                self.counts
                    .iter()
                    .map(|&c| {
                        let d = c - prev;
                        prev = c;
                        d
                    })
                    .collect()
            }
            _ => self.counts.clone(),
        }
    }

    pub(crate) fn group_sizes_f64(&self) -> Vec<f64> {
        self.group_sizes().into_iter().map(|s| s as f64).collect()
    }

    pub fn layout(&self) -> GroupLayout {
        GroupLayout::new(self.family, self.n_models()).expect("allocation size validated")
    }

    /// Distinct samples evaluated by each model.
    pub fn evaluations(&self) -> Vec<u64> {
        let layout = self.layout();
        let sizes = self.group_sizes();
        (0..self.n_models())
            .map(|m| {
                (0..sizes.len())
                    .filter(|&g| layout.evaluation_mask(m) & (1 << g) != 0)
                    .map(|g| sizes[g])
                    .sum()
            })
            .collect()
    }

    /// `W(w, A)`.
    pub fn cost(&self, w: &CostModel) -> f64 {
        self.evaluations()
            .iter()
            .enumerate()
            .map(|(m, &n)| w.get(m) * n as f64)
            .sum()
    }
}

/// Coupling of the control-variate differences: `Cov[Δ, Δ] = G ⊙ S_LL` and
/// `Cov[Δ, Q̂_0] = g ⊙ s_0L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingStructure {
    pub g_mat: DMatrix<f64>,
    pub g: DVector<f64>,
    pub n0: u64,
}

pub fn coupling(a: &SampleAllocation) -> CouplingStructure {
    let layout = a.layout();
    let sizes = a.group_sizes_f64();
    let d = a.n_models() - 1;
    let mut g_mat = DMatrix::zeros(d, d);
    let mut g = DVector::zeros(d);
    coupling_into(&layout, &sizes, g_mat.as_mut_slice(), g.as_mut_slice());
    CouplingStructure { g_mat, g, n0: a.n0() }
}

/// Fills `gm` (d×d, symmetric so storage order is irrelevant) and `gv` (d).
pub(crate) fn coupling_into(layout: &GroupLayout, sizes: &[f64], gm: &mut [f64], gv: &mut [f64]) {
    let m = layout.n_models;
    let d = m - 1;
    let n0 = set_size(layout.z0, sizes);
    let mut ns = [0.0; MAX_MODELS];
    let mut nn = [0.0; MAX_MODELS];
    for k in 1..m {
        ns[k] = set_size(layout.zstar[k], sizes);
        nn[k] = set_size(layout.z[k], sizes);
    }
    for i in 1..m {
        for j in i..m {
            let v = set_size(layout.zstar[i] & layout.zstar[j], sizes) / (ns[i] * ns[j])
                - set_size(layout.zstar[i] & layout.z[j], sizes) / (ns[i] * nn[j])
                - set_size(layout.z[i] & layout.zstar[j], sizes) / (nn[i] * ns[j])
                + set_size(layout.z[i] & layout.z[j], sizes) / (nn[i] * nn[j]);
            gm[(i - 1) * d + (j - 1)] = v;
            gm[(j - 1) * d + (i - 1)] = v;
        }
        gv[i - 1] = set_size(layout.zstar[i] & layout.z0, sizes) / (ns[i] * n0)
            - set_size(layout.z[i] & layout.z0, sizes) / (nn[i] * n0);
    }
}

/// Covariance copied into a flat row-major buffer for the allocation kernels.
#[derive(Clone)]
pub(crate) struct CovBuf {
    m: usize,
    s: [f64; MAX_MODELS * MAX_MODELS],
}

impl CovBuf {
    pub(crate) fn new(s: &DMatrix<f64>) -> Self {
        let m = s.nrows();
        let mut buf = [0.0; MAX_MODELS * MAX_MODELS];
        for i in 0..m {
            for j in 0..m {
                buf[i * m + j] = s[(i, j)];
            }
        }
        Self { m, s: buf }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.m + j]
    }
}

/// Outcome of the weight solve at fixed group sizes.
pub(crate) struct WeightSolve {
    pub alpha: [f64; MAX_MODELS],
    pub variance: f64,
}

const TIKHONOV: f64 = 1e-10;

/// Optimal weights and variance for group sizes `sizes` under covariance `cov`.
///
/// Differences with `Var[Δ_m] ≡ 0` (identical `z*_m` and `z_m`) get weight zero.
/// Returns `None` when the reduced system is singular even after regularization.
pub(crate) fn solve_weights(layout: &GroupLayout, sizes: &[f64], cov: &CovBuf) -> Option<WeightSolve> {
    let m = layout.n_models;
    let d = m - 1;
    let n0 = set_size(layout.z0, sizes);
    let base = cov.at(0, 0) / n0;
    let mut alpha = [0.0; MAX_MODELS];
    if d == 0 {
        return Some(WeightSolve {
            alpha,
            variance: base,
        });
    }
    let mut gm = [0.0; MAX_MODELS * MAX_MODELS];
    let mut gv = [0.0; MAX_MODELS];
    coupling_into(layout, sizes, &mut gm[..d * d], &mut gv[..d]);

    let mut active = [0usize; MAX_MODELS];
    let mut na = 0;
    let gmax = (0..d).fold(0.0_f64, |a, i| a.max(gm[i * d + i].abs()));
    for i in 0..d {
        if gm[i * d + i] > 1e-14 * gmax && cov.at(i + 1, i + 1) > 0.0 {
            active[na] = i;
            na += 1;
        }
    }
    if na == 0 {
        return Some(WeightSolve {
            alpha,
            variance: base,
        });
    }
    let mut a = [0.0; MAX_MODELS * MAX_MODELS];
    let mut b = [0.0; MAX_MODELS];
    for (p, &i) in active[..na].iter().enumerate() {
        for (q, &j) in active[..na].iter().enumerate() {
            a[p * na + q] = gm[i * d + j] * cov.at(i + 1, j + 1);
        }
        b[p] = gv[i] * cov.at(0, i + 1);
    }
    let mut x = b;
    let mut fac = a;
    if !crate::linalg::cholesky_solve_in_place(&mut fac[..na * na], &mut x[..na], na) {
        let mean_diag = (0..na).map(|p| a[p * na + p]).sum::<f64>() / na as f64;
        fac = a;
        for p in 0..na {
            fac[p * na + p] += TIKHONOV * mean_diag;
        }
        x = b;
        if !crate::linalg::cholesky_solve_in_place(&mut fac[..na * na], &mut x[..na], na) {
            return None;
        }
    }
    let mut quad = 0.0;
    for p in 0..na {
        alpha[active[p]] = -x[p];
        quad += b[p] * x[p];
    }
    Some(WeightSolve {
        alpha,
        variance: (base - quad).max(0.0),
    })
}

/// Variance of the estimator with explicit weights `alpha` (length `M-1`).
pub(crate) fn variance_with_weights(layout: &GroupLayout, sizes: &[f64], cov: &CovBuf, alpha: &[f64]) -> f64 {
    let m = layout.n_models;
    let d = m - 1;
    let n0 = set_size(layout.z0, sizes);
    let mut v = cov.at(0, 0) / n0;
    if d == 0 {
        return v;
    }
    let mut gm = [0.0; MAX_MODELS * MAX_MODELS];
    let mut gv = [0.0; MAX_MODELS];
    coupling_into(layout, sizes, &mut gm[..d * d], &mut gv[..d]);
    for i in 0..d {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..d {
            v += alpha[i] * gm[i * d + j] * cov.at(i + 1, j + 1) * alpha[j];
        }
        v += 2.0 * alpha[i] * gv[i] * cov.at(0, i + 1);
    }
    v.max(0.0)
}

/// ACV hyperparameters: control-variate weights and the sample allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub alpha: DVector<f64>,
    pub allocation: SampleAllocation,
}

impl EstimatorConfig {
    pub fn new(alpha: DVector<f64>, allocation: SampleAllocation) -> Result<Self> {
        if alpha.len() + 1 != allocation.n_models() {
            return Err(Error::Dimension(format!(
                "{} weights for {} models",
                alpha.len(),
                allocation.n_models()
            )));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameters("weights must be finite".into()));
        }
        Ok(Self { alpha, allocation })
    }

    pub fn family(&self) -> AllocationFamily {
        self.allocation.family()
    }

    pub fn cost(&self, w: &CostModel) -> f64 {
        self.allocation.cost(w)
    }
}

fn check_cov(s: &CovarianceMatrix, m: usize) -> Result<()> {
    if s.dim() != m {
        return Err(Error::Dimension(format!("covariance is {0}x{0} but the allocation has {m} models", s.dim())));
    }
    Ok(())
}

fn singular(layout: &GroupLayout, sizes: &[f64], s: &CovarianceMatrix) -> Error {
    let c = coupling_with(layout, sizes);
    let d = c.g.len();
    let sll = s.as_matrix().view((1, 1), (d, d));
    let a = c.g_mat.component_mul(&sll);
    let eig = nalgebra::SymmetricEigen::new(a);
    let hi = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let lo = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    Error::SingularCoupling { condition: hi / lo }
}

fn coupling_with(layout: &GroupLayout, sizes: &[f64]) -> CouplingStructure {
    let d = layout.n_models - 1;
    let mut g_mat = DMatrix::zeros(d, d);
    let mut g = DVector::zeros(d);
    coupling_into(layout, sizes, g_mat.as_mut_slice(), g.as_mut_slice());
    CouplingStructure {
        g_mat,
        g,
        n0: set_size(layout.z0, sizes) as u64,
    }
}

/// `α* = −(G ⊙ S_LL)⁻¹ (g ⊙ s_0L)`.
pub fn optimal_weights(s: &CovarianceMatrix, a: &SampleAllocation) -> Result<DVector<f64>> {
    check_cov(s, a.n_models())?;
    let layout = a.layout();
    let sizes = a.group_sizes_f64();
    let sol = solve_weights(&layout, &sizes, &CovBuf::new(s.as_matrix())).ok_or_else(|| singular(&layout, &sizes, s))?;
    Ok(DVector::from_column_slice(&sol.alpha[..a.n_models() - 1]))
}

/// `S_00/N_0 + αᵀ(G ⊙ S_LL)α + 2αᵀ(g ⊙ s_0L)` for any weights and covariance.
pub fn estimator_variance(s: &CovarianceMatrix, zeta: &EstimatorConfig) -> Result<f64> {
    check_cov(s, zeta.allocation.n_models())?;
    let layout = zeta.allocation.layout();
    let sizes = zeta.allocation.group_sizes_f64();
    Ok(variance_with_weights(
        &layout,
        &sizes,
        &CovBuf::new(s.as_matrix()),
        zeta.alpha.as_slice(),
    ))
}

/// `S_00/N_0 − (g ⊙ s_0L)ᵀ (G ⊙ S_LL)⁻¹ (g ⊙ s_0L)`.
pub fn optimal_variance(s: &CovarianceMatrix, a: &SampleAllocation) -> Result<f64> {
    check_cov(s, a.n_models())?;
    let layout = a.layout();
    let sizes = a.group_sizes_f64();
    solve_weights(&layout, &sizes, &CovBuf::new(s.as_matrix()))
        .map(|sol| sol.variance)
        .ok_or_else(|| singular(&layout, &sizes, s))
}

/// Estimator configuration with the optimal weights for `a` under `s`.
pub fn optimal_config(s: &CovarianceMatrix, a: &SampleAllocation) -> Result<EstimatorConfig> {
    EstimatorConfig::new(optimal_weights(s, a)?, a.clone())
}

/// Whether `G` is positive semidefinite within rounding.
pub fn coupling_is_psd(c: &CouplingStructure) -> bool {
    c.g_mat.nrows() == 0 || min_eigenvalue(&c.g_mat) >= -1e-12 * c.g_mat.amax().max(1e-300)
}
