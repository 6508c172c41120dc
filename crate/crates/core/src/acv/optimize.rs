//! Budget-constrained allocation search.
//!
//! For a fixed family the optimal group sizes scale linearly with the budget, so the
//! search runs once on the scale-free objective `Var(r) · W(r)` over log group-size
//! ratios `r = (1, e^{x_1}, …)`, and the result is integerized per budget.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{
    solve_weights, variance_with_weights, AllocationFamily, CostModel, CovBuf, EstimatorConfig, GroupLayout,
    SampleAllocation, MAX_MODELS,
};
use crate::error::{Error, Result};
use crate::matparam::CovarianceMatrix;

const LOG_LO: f64 = -12.0;
const LOG_HI: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub n_starts: usize,
    pub rel_tol: f64,
    pub max_evals: usize,
    /// Spend budget left over after rounding on single-sample increments.
    pub greedy_fill: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_starts: 8,
            rel_tol: 1e-6,
            max_evals: 2000,
            greedy_fill: true,
        }
    }
}

/// Continuous optimum of one family, independent of the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyOptimum {
    pub family: AllocationFamily,
    pub n_models: usize,
    /// Log of group sizes relative to group 0 (length `M - 1`).
    pub log_ratios: Vec<f64>,
    /// `Var · W` at the optimum.
    pub objective: f64,
}

impl FamilyOptimum {
    pub fn ratios(&self) -> Vec<f64> {
        std::iter::once(1.0).chain(self.log_ratios.iter().map(|x| x.exp())).collect()
    }

    /// Continuous group sizes that exactly exhaust `budget`.
    pub fn sizes_at(&self, w: &CostModel, budget: f64) -> Vec<f64> {
        let layout = GroupLayout::new(self.family, self.n_models).expect("validated");
        let r = self.ratios();
        let t = budget / layout.cost(w, &r);
        r.into_iter().map(|v| v * t).collect()
    }
}

/// An integer allocation with its weights and predicted variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub config: EstimatorConfig,
    pub predicted_variance: f64,
    pub cost: f64,
}

impl AllocationResult {
    pub fn family(&self) -> AllocationFamily {
        self.config.family()
    }
}

/// Variance of plain Monte Carlo spending `budget` on the high-fidelity model.
pub fn mc_variance(s: &CovarianceMatrix, budget: f64, w: &CostModel) -> Result<f64> {
    let n = (budget / w.get(0)).floor();
    if n < 1.0 {
        return Err(Error::BudgetInfeasible {
            budget,
            min_budget: w.get(0),
            family: AllocationFamily::AcvIs,
        });
    }
    Ok(s.get(0, 0) / n)
}

fn objective(layout: &GroupLayout, w: &CostModel, cov: &CovBuf, x: &[f64], sizes: &mut [f64]) -> f64 {
    sizes[0] = 1.0;
    for (k, v) in x.iter().enumerate() {
        sizes[k + 1] = v.clamp(LOG_LO, LOG_HI).exp();
    }
    match solve_weights(layout, sizes, cov) {
        Some(sol) => sol.variance * layout.cost(w, sizes),
        None => f64::INFINITY,
    }
}

/// Nelder–Mead on `f` from `x0`. Returns the best point and value.
fn nelder_mead(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], step: f64, rel_tol: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut vals: Vec<f64> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    vals.push(f(x0));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        vals.push(f(&p));
        pts.push(p);
    }
    let mut evals = n + 1;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let (best, worst, second) = (order[0], order[n], order[n - 1]);
        let (fb, fw) = (vals[best], vals[worst]);
        if evals >= max_evals || (fw - fb).abs() <= rel_tol * fb.abs() || !fb.is_finite() && !fw.is_finite() {
            return (pts[best].clone(), fb);
        }
        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for k in 0..n {
                centroid[k] += pts[i][k] / n as f64;
            }
        }
        for k in 0..n {
            trial[k] = centroid[k] + (centroid[k] - pts[worst][k]);
        }
        let fr = f(&trial);
        evals += 1;
        if fr < fb {
            for k in 0..n {
                trial2[k] = centroid[k] + 2.0 * (centroid[k] - pts[worst][k]);
            }
            let fe = f(&trial2);
            evals += 1;
            if fe < fr {
                pts[worst].copy_from_slice(&trial2);
                vals[worst] = fe;
            } else {
                pts[worst].copy_from_slice(&trial);
                vals[worst] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            pts[worst].copy_from_slice(&trial);
            vals[worst] = fr;
            continue;
        }
        let outside = fr < fw;
        for k in 0..n {
            trial2[k] = if outside {
                centroid[k] + 0.5 * (trial[k] - centroid[k])
            } else {
                centroid[k] + 0.5 * (pts[worst][k] - centroid[k])
            };
        }
        let fc = f(&trial2);
        evals += 1;
        if fc < fr.min(fw) {
            pts[worst].copy_from_slice(&trial2);
            vals[worst] = fc;
            continue;
        }
        let xb = pts[best].clone();
        for i in 0..=n {
            if i == best {
                continue;
            }
            for k in 0..n {
                pts[i][k] = xb[k] + 0.5 * (pts[i][k] - xb[k]);
            }
            vals[i] = f(&pts[i]);
            evals += 1;
        }
    }
}

fn starts(layout: &GroupLayout, w: &CostModel, s: &CovarianceMatrix, n_starts: usize) -> Vec<Vec<f64>> {
    let c = layout.group_costs(w);
    let d = layout.n_models() - 1;
    let sqrt_rule = |scale: f64| -> Vec<f64> { (1..=d).map(|g| (scale * (c[0] / c[g]).sqrt()).ln()).collect() };
    let mut out = vec![sqrt_rule(0.3), sqrt_rule(1.0), sqrt_rule(3.0)];
    for scale in [0.1, 1.0] {
        out.push((1..=d).map(|g| (scale * c[0] / c[g]).ln()).collect());
    }
    out.push(vec![0.0; d]);
    out.push((1..=d).map(|g| g as f64 * 4f64.ln()).collect());
    // Classic multilevel rule on level-difference variances.
    let v = level_variances(s);
    let r0 = (v[0] / c[0]).sqrt().max(1e-300);
    out.push((1..=d).map(|g| ((v[g] / c[g]).sqrt().max(1e-300) / r0).ln()).collect());
    let mut i = out.len();
    while out.len() < n_starts {
        let base = sqrt_rule(1.0);
        out.push(
            base.iter()
                .enumerate()
                .map(|(g, b)| b + (crate::randmat::mix64((i * 31 + g) as u64) % 1000) as f64 / 250.0 - 2.0)
                .collect(),
        );
        i += 1;
    }
    for x in &mut out {
        for v in x.iter_mut() {
            *v = if v.is_finite() { v.clamp(LOG_LO, LOG_HI) } else { 0.0 };
        }
    }
    out
}

/// `Var[f_l − f_{l+1}]` for consecutive models and `Var[f_{M-1}]` for the last.
fn level_variances(s: &CovarianceMatrix) -> Vec<f64> {
    let m = s.dim();
    (0..m)
        .map(|l| {
            if l + 1 < m {
                (s.get(l, l) + s.get(l + 1, l + 1) - 2.0 * s.get(l, l + 1)).max(0.0)
            } else {
                s.get(l, l)
            }
        })
        .collect()
}

/// Minimizes `Var · W` over continuous group-size ratios for one family.
pub fn continuous_optimum(
    s: &CovarianceMatrix,
    w: &CostModel,
    family: AllocationFamily,
    cfg: &OptimizerConfig,
    warm_start: Option<&[f64]>,
) -> Result<FamilyOptimum> {
    let m = check_inputs(s, w, cfg)?;
    let layout = GroupLayout::new(family, m)?;
    let cov = CovBuf::new(s.as_matrix());
    let d = m - 1;
    let mut sizes = [0.0; MAX_MODELS];
    if d == 0 {
        let objective = objective(&layout, w, &cov, &[], &mut sizes);
        return Ok(FamilyOptimum {
            family,
            n_models: m,
            log_ratios: vec![],
            objective,
        });
    }
    let mut f = |x: &[f64]| objective(&layout, w, &cov, x, &mut sizes);
    let mut best_x = vec![0.0; d];
    let mut best_f = f64::INFINITY;
    let mut all = starts(&layout, w, s, cfg.n_starts);
    if let Some(ws) = warm_start {
        if ws.len() == d {
            all.insert(0, ws.iter().map(|v| v.clamp(LOG_LO, LOG_HI)).collect());
        }
    }
    for x0 in &all {
        let (x, fx) = nelder_mead(&mut f, x0, 1.0, cfg.rel_tol, cfg.max_evals);
        if fx < best_f {
            best_f = fx;
            best_x = x;
        }
    }
    let (x, fx) = nelder_mead(&mut f, &best_x, 0.25, cfg.rel_tol * 0.1, cfg.max_evals);
    if fx < best_f {
        best_f = fx;
        best_x = x;
    }
    if !best_f.is_finite() {
        return Err(Error::SingularCoupling { condition: f64::INFINITY });
    }
    Ok(FamilyOptimum {
        family,
        n_models: m,
        log_ratios: best_x.into_iter().map(|v| v.clamp(LOG_LO, LOG_HI)).collect(),
        objective: best_f,
    })
}

fn check_inputs(s: &CovarianceMatrix, w: &CostModel, cfg: &OptimizerConfig) -> Result<usize> {
    if s.dim() != w.n_models() {
        return Err(Error::Dimension(format!(
            "covariance has {} models, cost vector {}",
            s.dim(),
            w.n_models()
        )));
    }
    if cfg.n_starts < 8 {
        return Err(Error::Config(format!("at least 8 optimizer starts required, got {}", cfg.n_starts)));
    }
    Ok(s.dim())
}

fn to_f64(n: &[u64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(n) {
        *o = v as f64;
    }
}

/// Lowers group sizes, largest group first, until the allocation fits the budget.
/// Group `keep` is only lowered once no other group can be.
fn repair(layout: &GroupLayout, w: &CostModel, costs: &[f64], n: &mut [u64], budget: f64, keep: Option<usize>) -> bool {
    let mut buf = [0.0; MAX_MODELS];
    loop {
        to_f64(n, &mut buf);
        let cost = layout.cost(w, &buf[..n.len()]);
        if cost <= budget {
            return true;
        }
        let largest = |skip: Option<usize>| {
            (0..n.len())
                .filter(|&g| n[g] > 1 && Some(g) != skip)
                .max_by(|&a, &b| n[a].cmp(&n[b]).then(b.cmp(&a)))
        };
        let Some(g) = largest(keep).or_else(|| largest(None)) else {
            return false;
        };
        let need = ((cost - budget) / costs[g]).ceil().max(1.0) as u64;
        n[g] -= need.min(n[g] - 1);
    }
}

/// Adds single samples to the group with the best variance decrease per unit cost
/// while any increment still fits.
fn greedy_fill(layout: &GroupLayout, w: &CostModel, costs: &[f64], cov: &CovBuf, n: &mut [u64], budget: f64) {
    let k = n.len();
    let mut buf = [0.0; MAX_MODELS];
    to_f64(n, &mut buf);
    let Some(mut current) = solve_weights(layout, &buf[..k], cov).map(|s| s.variance) else {
        return;
    };
    loop {
        to_f64(n, &mut buf);
        let mut best: Option<(usize, f64, f64)> = None;
        for g in 0..k {
            buf[g] += 1.0;
            if layout.cost(w, &buf[..k]) <= budget {
                if let Some(sol) = solve_weights(layout, &buf[..k], cov) {
                    let gain = (current - sol.variance) / costs[g];
                    if best.map_or(true, |(_, bg, _)| gain > bg) {
                        best = Some((g, gain, sol.variance));
                    }
                }
            }
            buf[g] -= 1.0;
        }
        match best {
            Some((g, _, v)) => {
                n[g] += 1;
                current = v;
            }
            _ => return,
        }
    }
}

fn exact_variance(layout: &GroupLayout, cov: &CovBuf, n: &[u64]) -> Option<f64> {
    let mut buf = [0.0; MAX_MODELS];
    to_f64(n, &mut buf);
    solve_weights(layout, &buf[..n.len()], cov).map(|s| s.variance)
}

fn finish(layout: &GroupLayout, s: &CovarianceMatrix, cov: &CovBuf, w: &CostModel, sizes: &[u64]) -> Result<AllocationResult> {
    let allocation = SampleAllocation::from_group_sizes(layout.family(), sizes)?;
    let f: Vec<f64> = sizes.iter().map(|&v| v as f64).collect();
    let sol = solve_weights(layout, &f, cov).ok_or_else(|| super::singular(layout, &f, s))?;
    let alpha = DVector::from_column_slice(&sol.alpha[..sizes.len() - 1]);
    let cost = allocation.cost(w);
    Ok(AllocationResult {
        config: EstimatorConfig::new(alpha, allocation)?,
        predicted_variance: sol.variance,
        cost,
    })
}

fn infeasible(layout: &GroupLayout, w: &CostModel, budget: f64) -> Error {
    Error::BudgetInfeasible {
        budget,
        min_budget: layout.min_cost(w),
        family: layout.family(),
    }
}

/// Integer allocation at `budget` from a continuous optimum. Feasible `candidates` of
/// the same family compete on exact variance and win ties.
pub fn allocate_at(
    s: &CovarianceMatrix,
    w: &CostModel,
    opt: &FamilyOptimum,
    budget: f64,
    candidates: &[SampleAllocation],
    cfg: &OptimizerConfig,
) -> Result<AllocationResult> {
    let m = check_inputs(s, w, cfg)?;
    let layout = GroupLayout::new(opt.family, m)?;
    if !(budget >= layout.min_cost(w)) {
        return Err(infeasible(&layout, w, budget));
    }
    let cov = CovBuf::new(s.as_matrix());
    let costs = layout.group_costs(w);
    let cont = opt.sizes_at(w, budget);
    let cap = u64::MAX as f64 / 4.0;
    let floor: Vec<u64> = cont.iter().map(|v| v.floor().max(1.0).min(cap) as u64).collect();
    // Floor everywhere, then each group rounded up on its own, then all rounded up.
    let mut roundings = vec![(floor.clone(), None)];
    for g in 0..floor.len() {
        if (cont[g].ceil().max(1.0).min(cap) as u64) > floor[g] {
            let mut c = floor.clone();
            c[g] += 1;
            roundings.push((c, Some(g)));
        }
    }
    if roundings.len() > 2 {
        roundings.push((cont.iter().map(|v| v.ceil().max(1.0).min(cap) as u64).collect(), None));
    }
    let mut n: Option<Vec<u64>> = None;
    let mut best_v = f64::INFINITY;
    for (mut c, keep) in roundings {
        if !repair(&layout, w, &costs, &mut c, budget, keep) {
            continue;
        }
        if cfg.greedy_fill {
            greedy_fill(&layout, w, &costs, &cov, &mut c, budget);
        }
        let v = exact_variance(&layout, &cov, &c).unwrap_or(f64::INFINITY);
        if n.is_none() || v < best_v {
            best_v = v;
            n = Some(c);
        }
    }
    let Some(mut n) = n else {
        return Err(infeasible(&layout, w, budget));
    };
    for c in candidates {
        if c.family() != opt.family || c.n_models() != m || c.cost(w) > budget {
            continue;
        }
        let g = c.group_sizes();
        if let Some(v) = exact_variance(&layout, &cov, &g) {
            if v <= best_v {
                best_v = v;
                n = g;
            }
        }
    }
    finish(&layout, s, &cov, w, &n)
}

/// Best allocation over `families` at `budget` with default settings.
pub fn optimize_allocation(
    s: &CovarianceMatrix,
    budget: f64,
    w: &CostModel,
    families: &[AllocationFamily],
) -> Result<AllocationResult> {
    optimize_allocation_with(s, budget, w, families, &OptimizerConfig::default(), &[])
}

pub fn optimize_allocation_with(
    s: &CovarianceMatrix,
    budget: f64,
    w: &CostModel,
    families: &[AllocationFamily],
    cfg: &OptimizerConfig,
    candidates: &[SampleAllocation],
) -> Result<AllocationResult> {
    let m = check_inputs(s, w, cfg)?;
    if families.is_empty() {
        return Err(Error::Config("no allocation family selected".into()));
    }
    let mut best: Option<AllocationResult> = None;
    let mut cheapest: Option<Error> = None;
    for &family in families {
        let layout = GroupLayout::new(family, m)?;
        if !(budget >= layout.min_cost(w)) {
            let e = infeasible(&layout, w, budget);
            let keep = match (&cheapest, &e) {
                (Some(Error::BudgetInfeasible { min_budget: a, .. }), Error::BudgetInfeasible { min_budget: b, .. }) => b < a,
                _ => true,
            };
            if keep {
                cheapest = Some(e);
            }
            continue;
        }
        let opt = continuous_optimum(s, w, family, cfg, None)?;
        let r = allocate_at(s, w, &opt, budget, candidates, cfg)?;
        if best.as_ref().map_or(true, |b| r.predicted_variance < b.predicted_variance) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| cheapest.expect("some family was tried"))
}

/// Multilevel Monte Carlo with unit weights and the classic `N_l ∝ sqrt(V_l / c_l)` rule.
pub fn mlmc_allocation(s: &CovarianceMatrix, budget: f64, w: &CostModel) -> Result<AllocationResult> {
    let m = check_inputs(s, w, &OptimizerConfig::default())?;
    let layout = GroupLayout::new(AllocationFamily::Mlmc, m)?;
    if !(budget >= layout.min_cost(w)) {
        return Err(infeasible(&layout, w, budget));
    }
    let costs = layout.group_costs(w);
    let v = level_variances(s);
    let r: Vec<f64> = (0..m).map(|l| (v[l] / costs[l]).sqrt()).collect();
    let denom: f64 = (0..m).map(|l| (v[l] * costs[l]).sqrt()).sum();
    let mut n: Vec<u64> = if denom > 0.0 {
        r.iter().map(|&x| (budget * x / denom).floor().max(1.0) as u64).collect()
    } else {
        vec![1; m]
    };
    if !repair(&layout, w, &costs, &mut n, budget, None) {
        return Err(infeasible(&layout, w, budget));
    }
    let allocation = SampleAllocation::from_group_sizes(AllocationFamily::Mlmc, &n)?;
    let alpha = DVector::from_element(m - 1, -1.0);
    let cov = CovBuf::new(s.as_matrix());
    let f: Vec<f64> = n.iter().map(|&x| x as f64).collect();
    let predicted_variance = variance_with_weights(&layout, &f, &cov, alpha.as_slice());
    let cost = allocation.cost(w);
    Ok(AllocationResult {
        config: EstimatorConfig::new(alpha, allocation)?,
        predicted_variance,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acv::optimal_variance;
    use nalgebra::DMatrix;

    fn monomial_cov() -> CovarianceMatrix {
        let m = 4;
        CovarianceMatrix::new(DMatrix::from_fn(m, m, |i, j| {
            let (a, b) = ((5 - i) as f64, (5 - j) as f64);
            1.0 / (a + b + 1.0) - 1.0 / ((a + 1.0) * (b + 1.0))
        }))
        .unwrap()
    }

    fn costs() -> CostModel {
        CostModel::new(vec![1.0, 0.1, 0.01, 0.001]).unwrap()
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let mut f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 1.0;
        let (x, fx) = nelder_mead(&mut f, &[0.0, 0.0], 1.0, 1e-12, 5000);
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] + 2.0).abs() < 1e-4);
        assert!((fx - 1.0).abs() < 1e-8);
    }

    #[test]
    fn single_model_is_plain_mc() {
        let s = CovarianceMatrix::new(DMatrix::from_element(1, 1, 2.0)).unwrap();
        let w = CostModel::new(vec![0.5]).unwrap();
        let r = optimize_allocation(&s, 10.2, &w, &AllocationFamily::ALL).unwrap();
        assert_eq!(r.config.allocation.counts(), &[20]);
        assert_eq!(r.predicted_variance, 0.1);
        let ml = mlmc_allocation(&s, 10.2, &w).unwrap();
        assert_eq!(ml.config.allocation.counts(), &[20]);
    }

    #[test]
    fn infeasible_budget_reports_minimum() {
        let e = optimize_allocation(&monomial_cov(), 1.0, &costs(), &[AllocationFamily::Mfmc]).unwrap_err();
        match e {
            Error::BudgetInfeasible { min_budget, .. } => assert!((min_budget - (1.111 + 0.111 + 0.011 + 0.001)).abs() < 1e-12),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn monomial_best_vrr() {
        let s = monomial_cov();
        let w = costs();
        let b = 200.0 * w.total();
        let r = optimize_allocation(&s, b, &w, &AllocationFamily::ALL).unwrap();
        let vrr = mc_variance(&s, b, &w).unwrap() / r.predicted_variance;
        assert!((24.0..=28.0).contains(&vrr), "vrr {vrr}");
        assert!(r.cost <= b);
    }

    #[test]
    fn mlmc_vrr_and_dominance() {
        let s = monomial_cov();
        let w = costs();
        let b = 200.0 * w.total();
        let ml = mlmc_allocation(&s, b, &w).unwrap();
        let vrr = mc_variance(&s, b, &w).unwrap() / ml.predicted_variance;
        assert!((16.4..=20.2).contains(&vrr), "vrr {vrr}");
        let best = optimize_allocation(&s, b, &w, &AllocationFamily::ALL).unwrap();
        assert!(best.predicted_variance <= ml.predicted_variance);
        assert_eq!(ml.config.alpha.as_slice(), &[-1.0, -1.0, -1.0]);
    }

    #[test]
    fn doubling_budget_halves_variance() {
        let s = monomial_cov();
        let w = costs();
        let b = 200.0 * w.total();
        let cfg = OptimizerConfig::default();
        let opt = continuous_optimum(&s, &w, AllocationFamily::Mlmc, &cfg, None).unwrap();
        let s1 = opt.sizes_at(&w, b);
        let s2 = opt.sizes_at(&w, 2.0 * b);
        for (a, c) in s1.iter().zip(&s2) {
            assert!((c / a - 2.0).abs() < 1e-12);
        }
        let v1 = allocate_at(&s, &w, &opt, b, &[], &cfg).unwrap().predicted_variance;
        let v2 = allocate_at(&s, &w, &opt, 2.0 * b, &[], &cfg).unwrap().predicted_variance;
        assert!((v1 / v2 / 2.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn candidate_allocation_is_never_beaten_by_worse_rounding() {
        let s = monomial_cov();
        let w = costs();
        let b = 50.0 * w.total();
        let cfg = OptimizerConfig::default();
        let cand = SampleAllocation::from_group_sizes(AllocationFamily::Mfmc, &[5, 20, 100, 4000]).unwrap();
        assert!(cand.cost(&w) <= b);
        let opt = continuous_optimum(&s, &w, AllocationFamily::Mfmc, &cfg, None).unwrap();
        let r = allocate_at(&s, &w, &opt, b, &[cand.clone()], &cfg).unwrap();
        assert!(r.predicted_variance <= optimal_variance(&s, &cand).unwrap());
    }

    #[test]
    fn brute_force_two_model_grid() {
        let s = CovarianceMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0])).unwrap();
        let w = CostModel::new(vec![1.0, 0.05]).unwrap();
        let budget = 12.0;
        let mut best = f64::INFINITY;
        for n0 in 1..=20u64 {
            for n1 in 1..=200u64 {
                let a = SampleAllocation::new(AllocationFamily::AcvIs, vec![n0, n1]).unwrap();
                if a.cost(&w) <= budget {
                    best = best.min(optimal_variance(&s, &a).unwrap());
                }
            }
        }
        let r = optimize_allocation(&s, budget, &w, &[AllocationFamily::AcvIs]).unwrap();
        assert!(r.predicted_variance <= best * 1.02, "{} vs {best}", r.predicted_variance);
    }
}
