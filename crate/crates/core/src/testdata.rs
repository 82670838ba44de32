//! Artificial test data and winner's-bias-corrected welfare estimates.
//!
//! A policy learned on a sample looks better on that sample than it is. To
//! correct for this, conditional means `E[Y | X, D = j]` and the opt-in
//! take-up probability are fitted on the training data, and fresh test sets
//! are built by adding arm-wise resampled residuals to the fitted means and
//! redrawing opt-in choices. The policy is then evaluated on each test set.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_propensities, Arm, Choice, RctDataset};
use crate::error::{Error, Result};
use crate::policy::AssignmentPolicy;
use crate::stats;
use crate::welfare::{
    assignment_gain, assignment_welfare, welfare_from_outcomes, OutcomeOptions, WelfareGain,
    WelfareParams,
};

/// Conditional-mean estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum CondMeanMethod {
    /// k nearest neighbours in standardized covariates; `k` defaults to
    /// `ceil(n_j^0.7)` per arm.
    Knn { k: Option<usize> },
    /// CART-style tree grown on half of the arm and estimated on the other half.
    RegressionTree { min_leaf: usize, max_depth: usize },
}

impl Default for CondMeanMethod {
    fn default() -> Self {
        CondMeanMethod::Knn { k: None }
    }
}

impl CondMeanMethod {
    pub fn default_tree() -> Self {
        CondMeanMethod::RegressionTree {
            min_leaf: 20,
            max_depth: 6,
        }
    }
}

pub fn default_knn_k(n: usize) -> usize {
    ((n as f64).powf(0.7).ceil() as usize).clamp(1, n.max(1))
}

#[derive(Debug, Clone)]
enum Predictor {
    Knn { k: usize },
    Tree(RegNode),
}

#[derive(Debug, Clone)]
enum RegNode {
    Leaf(f64),
    Split {
        var: usize,
        threshold: f64,
        ge: Box<RegNode>,
        lt: Box<RegNode>,
    },
}

impl RegNode {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            RegNode::Leaf(v) => *v,
            RegNode::Split {
                var,
                threshold,
                ge,
                lt,
            } => {
                if x[*var] >= *threshold {
                    ge.predict(x)
                } else {
                    lt.predict(x)
                }
            }
        }
    }
}

/// One fitted regression of a target on covariates over a set of rows.
#[derive(Debug, Clone)]
struct Fit {
    /// Dataset row indices of the training sample.
    rows: Vec<usize>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    fitted: Vec<f64>,
    predictor: Predictor,
}

/// Fitted per-arm conditional means and opt-in take-up probability.
#[derive(Debug, Clone)]
pub struct CondMeanModel {
    method: CondMeanMethod,
    scale: Vec<f64>,
    arms: [Fit; 3],
    takeup: Fit,
}

impl CondMeanModel {
    pub fn method(&self) -> CondMeanMethod {
        self.method
    }

    /// Dataset rows of `arm` in fitting order.
    pub fn rows(&self, arm: Arm) -> &[usize] {
        &self.arms[arm.index()].rows
    }

    /// In-sample fitted means of `arm`, aligned with [`Self::rows`].
    pub fn fitted(&self, arm: Arm) -> &[f64] {
        &self.arms[arm.index()].fitted
    }

    /// In-sample residuals of `arm`, aligned with [`Self::rows`].
    pub fn residuals(&self, arm: Arm) -> Vec<f64> {
        let f = &self.arms[arm.index()];
        f.y.iter().zip(&f.fitted).map(|(y, m)| y - m).collect()
    }

    /// In-sample fitted take-up probabilities of the opt-in rows.
    pub fn takeup_fitted(&self) -> &[f64] {
        &self.takeup.fitted
    }

    pub fn predict(&self, arm: Arm, x: &[f64]) -> f64 {
        self.predict_with(&self.arms[arm.index()], x)
    }

    pub fn predict_takeup(&self, x: &[f64]) -> f64 {
        self.predict_with(&self.takeup, x).clamp(0.0, 1.0)
    }

    fn predict_with(&self, fit: &Fit, x: &[f64]) -> f64 {
        match &fit.predictor {
            Predictor::Knn { k } => knn_mean(&fit.x, &fit.y, &self.scale, x, *k),
            Predictor::Tree(t) => t.predict(x),
        }
    }
}

fn knn_mean(train: &[Vec<f64>], y: &[f64], scale: &[f64], x: &[f64], k: usize) -> f64 {
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let dist = t
                .iter()
                .zip(x)
                .zip(scale)
                .map(|((a, b), s)| ((a - b) / s).powi(2))
                .sum::<f64>();
            (dist, i)
        })
        .collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, by);
        d.truncate(k);
    }
    stats::mean(&d.iter().map(|&(_, i)| y[i]).collect::<Vec<_>>())
}

fn grow(x: &[&Vec<f64>], y: &[f64], idx: &[usize], min_leaf: usize, depth: usize) -> RegNode {
    let mean = stats::mean(&idx.iter().map(|&i| y[i]).collect::<Vec<_>>());
    if depth == 0 || idx.len() < 2 * min_leaf {
        return RegNode::Leaf(mean);
    }
    let k = x[0].len();
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let n = idx.len() as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    for var in 0..k {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| x[a][var].total_cmp(&x[b][var]).then(a.cmp(&b)));
        let mut left = 0.0;
        for (pos, &i) in order.iter().enumerate().take(order.len() - 1) {
            left += y[i];
            let nl = (pos + 1) as f64;
            let (lo, hi) = (x[i][var], x[order[pos + 1]][var]);
            if lo == hi || pos + 1 < min_leaf || order.len() - pos - 1 < min_leaf {
                continue;
            }
            // reduction in squared error, up to a constant
            let gain = left * left / nl + (total - left).powi(2) / (n - nl) - total * total / n;
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, var, lo + (hi - lo) / 2.0));
            }
        }
    }
    match best {
        Some((gain, var, threshold)) if gain > 1e-12 * total.abs().max(1.0) => {
            let (ge, lt): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| x[i][var] >= threshold);
            RegNode::Split {
                var,
                threshold,
                ge: Box::new(grow(x, y, &ge, min_leaf, depth - 1)),
                lt: Box::new(grow(x, y, &lt, min_leaf, depth - 1)),
            }
        }
        _ => RegNode::Leaf(mean),
    }
}

/// Replaces leaf values with means of the estimation half; leaves it misses
/// keep their growing-half mean.
fn reestimate(node: &RegNode, x: &[&Vec<f64>], y: &[f64], idx: &[usize]) -> RegNode {
    match node {
        RegNode::Leaf(v) => {
            if idx.is_empty() {
                RegNode::Leaf(*v)
            } else {
                RegNode::Leaf(stats::mean(&idx.iter().map(|&i| y[i]).collect::<Vec<_>>()))
            }
        }
        RegNode::Split {
            var,
            threshold,
            ge,
            lt,
        } => {
            let (gi, li): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| x[i][*var] >= *threshold);
            RegNode::Split {
                var: *var,
                threshold: *threshold,
                ge: Box::new(reestimate(ge, x, y, &gi)),
                lt: Box::new(reestimate(lt, x, y, &li)),
            }
        }
    }
}

fn fit_one(
    method: CondMeanMethod,
    scale: &[f64],
    ds: &RctDataset,
    rows: Vec<usize>,
    y: Vec<f64>,
    what: &str,
) -> Result<Fit> {
    let x: Vec<Vec<f64>> = rows.iter().map(|&i| ds.rows()[i].x.clone()).collect();
    let n = rows.len();
    let predictor = match method {
        CondMeanMethod::Knn { k } => {
            let k = k.unwrap_or_else(|| default_knn_k(n));
            if k == 0 || n < k {
                return Err(Error::InsufficientData(format!(
                    "{what} has {n} rows, fewer than k = {k}"
                )));
            }
            Predictor::Knn { k }
        }
        CondMeanMethod::RegressionTree {
            min_leaf,
            max_depth,
        } => {
            let need = min_leaf.max(2);
            if min_leaf == 0 || n < need {
                return Err(Error::InsufficientData(format!(
                    "{what} has {n} rows, fewer than {need}"
                )));
            }
            let xr: Vec<&Vec<f64>> = x.iter().collect();
            let grow_idx: Vec<usize> = (0..n).step_by(2).collect();
            let est_idx: Vec<usize> = (1..n).step_by(2).collect();
            let tree = grow(&xr, &y, &grow_idx, min_leaf, max_depth);
            Predictor::Tree(reestimate(&tree, &xr, &y, &est_idx))
        }
    };
    let fitted: Vec<f64> = match &predictor {
        Predictor::Knn { k } => x.par_iter().map(|xi| knn_mean(&x, &y, scale, xi, *k)).collect(),
        Predictor::Tree(t) => x.iter().map(|xi| t.predict(xi)).collect(),
    };
    Ok(Fit {
        rows,
        x,
        y,
        fitted,
        predictor,
    })
}

/// Fits `E[Y | X, D = j]` for every arm, with `Y` from `opts`, and the
/// take-up probability among opt-in rows.
pub fn fit_cond_means(
    ds: &RctDataset,
    opts: OutcomeOptions,
    method: CondMeanMethod,
) -> Result<CondMeanModel> {
    let y = opts.outcome(ds);
    let scale: Vec<f64> = (0..ds.dim())
        .map(|k| {
            let sd = stats::variance(&ds.column(k)).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let arm_rows = |arm: Arm| -> Vec<usize> {
        (0..ds.len()).filter(|&i| ds.rows()[i].d == arm).collect()
    };
    let fit_arm = |arm: Arm| {
        let rows = arm_rows(arm);
        let ys = rows.iter().map(|&i| y[i]).collect();
        fit_one(method, &scale, ds, rows, ys, &format!("arm {arm}"))
    };
    let arms = [fit_arm(Arm::NT)?, fit_arm(Arm::T)?, fit_arm(Arm::O)?];
    let o_rows = arm_rows(Arm::O);
    let taken = o_rows
        .iter()
        .map(|&i| ds.rows()[i].z.is_taken() as u8 as f64)
        .collect();
    let takeup = fit_one(method, &scale, ds, o_rows, taken, "opt-in take-up")?;
    Ok(CondMeanModel {
        method,
        scale,
        arms,
        takeup,
    })
}

/// One artificial test sample; arms and covariates are those of the
/// training data.
#[derive(Debug, Clone, PartialEq)]
pub struct TestData {
    pub y: Vec<f64>,
    pub z: Vec<Choice>,
    /// Dataset row whose residual each row received.
    pub residual_source: Vec<usize>,
}

pub fn make_test_data(ds: &RctDataset, model: &CondMeanModel, seed: u64) -> Result<TestData> {
    let n = ds.len();
    let mut y = vec![0.0; n];
    let mut z = vec![Choice::NT; n];
    let mut src = vec![0usize; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p_take = vec![f64::NAN; n];
    for (&i, &p) in model.takeup.rows.iter().zip(&model.takeup.fitted) {
        p_take[i] = p.clamp(0.0, 1.0);
    }
    for arm in Arm::ALL {
        let fit = &model.arms[arm.index()];
        if fit.rows.len() != ds.arm_count(arm) {
            return Err(Error::InvalidArgument(
                "model was fitted on a different dataset".into(),
            ));
        }
        let resid: Vec<f64> = fit.y.iter().zip(&fit.fitted).map(|(a, b)| a - b).collect();
        for (&i, &m) in fit.rows.iter().zip(&fit.fitted) {
            let pick = rng.random_range(0..resid.len());
            y[i] = m + resid[pick];
            src[i] = fit.rows[pick];
            z[i] = match arm {
                Arm::T => Choice::T,
                Arm::NT => Choice::NT,
                Arm::O => {
                    if rng.random::<f64>() < p_take[i] {
                        Choice::T
                    } else {
                        Choice::NT
                    }
                }
            };
        }
    }
    Ok(TestData {
        y,
        z,
        residual_source: src,
    })
}

/// Settings for [`corrected_estimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionConfig {
    pub params: WelfareParams,
    pub outcome: OutcomeOptions,
    pub method: CondMeanMethod,
    pub n_reps: usize,
    pub seed: u64,
}

pub const DEFAULT_REPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub seed: u64,
    pub welfare: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectedEstimate {
    pub estimate: f64,
    /// Combines the mean within-replication IPW variance with the spread
    /// across replications.
    pub se: f64,
    pub within_se: f64,
    pub between_sd: f64,
    pub replications: Vec<ReplicationRecord>,
}

impl CorrectedEstimate {
    pub fn ci95(&self) -> (f64, f64) {
        stats::ci95(self.estimate, self.se)
    }

    pub fn as_gain(&self) -> WelfareGain {
        WelfareGain {
            gain: self.estimate,
            se: self.se,
        }
    }

    pub fn write_log<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.replications {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<replication log>", e))?;
        Ok(())
    }

    pub fn save_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_log(std::io::BufWriter::new(file))
    }
}

/// Welfare of `policy` (or its gain over `reference`) averaged over
/// artificial test samples built from `train`.
pub fn corrected_estimate(
    train: &RctDataset,
    policy: &AssignmentPolicy,
    reference: Option<&AssignmentPolicy>,
    cfg: &CorrectionConfig,
) -> Result<CorrectedEstimate> {
    if cfg.n_reps == 0 {
        return Err(Error::InvalidArgument("n_reps must be at least 1".into()));
    }
    let model = fit_cond_means(train, cfg.outcome, cfg.method)?;
    corrected_estimate_with(train, &model, policy, reference, cfg)
}

/// As [`corrected_estimate`] with an already fitted model.
pub fn corrected_estimate_with(
    train: &RctDataset,
    model: &CondMeanModel,
    policy: &AssignmentPolicy,
    reference: Option<&AssignmentPolicy>,
    cfg: &CorrectionConfig,
) -> Result<CorrectedEstimate> {
    let props = sample_propensities(train)?;
    let arms = train.arms();
    let assigned = policy.assign_all(train)?;
    let ref_assigned = reference.map(|r| r.assign_all(train)).transpose()?;
    let per_rep: Vec<(ReplicationRecord, f64)> = (0..cfg.n_reps)
        .into_par_iter()
        .map(|rep| {
            let seed = stats::derive_seed(cfg.seed, rep as u64);
            let test = make_test_data(train, model, seed)?;
            let w = welfare_from_outcomes(&test.y, &test.z, &cfg.params, cfg.outcome.demean);
            let g = match &ref_assigned {
                Some(b) => assignment_gain(&w.w, &arms, &assigned, b, &props)?,
                None => assignment_welfare(&w.w, &arms, &assigned, &props)?,
            };
            Ok((
                ReplicationRecord {
                    rep,
                    seed,
                    welfare: g.gain,
                },
                g.se,
            ))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = per_rep.iter().map(|(r, _)| r.welfare).collect();
    let within_var = stats::mean(&per_rep.iter().map(|(_, se)| se * se).collect::<Vec<_>>());
    let between_var = stats::variance(&values);
    Ok(CorrectedEstimate {
        estimate: stats::mean(&values),
        se: (within_var + between_var).sqrt(),
        within_se: within_var.sqrt(),
        between_sd: between_var.sqrt(),
        replications: per_rep.into_iter().map(|(r, _)| r).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, DgpSpec};

    fn no_demean() -> OutcomeOptions {
        OutcomeOptions {
            baseline_diff: true,
            demean: false,
        }
    }

    fn sample(n: usize, seed: u64) -> RctDataset {
        generate(&DgpSpec::preset("logistic").unwrap(), n, seed)
            .unwrap()
            .dataset
    }

    #[test]
    fn constant_arm_fits_constant() {
        let ds = sample(600, 1);
        let rows: Vec<_> = ds
            .rows()
            .iter()
            .cloned()
            .map(|mut r| {
                if r.d == Arm::T {
                    r.y_treat = r.y_base + 7.0;
                }
                r
            })
            .collect();
        let ds = RctDataset::new(ds.schema().to_vec(), rows).unwrap();
        for method in [CondMeanMethod::default(), CondMeanMethod::default_tree()] {
            let m = fit_cond_means(&ds, no_demean(), method).unwrap();
            assert!(m.fitted(Arm::T).iter().all(|v| (v - 7.0).abs() < 1e-12));
            assert!(m.residuals(Arm::T).iter().all(|r| r.abs() < 1e-12));
            assert!((m.predict(Arm::T, &[0.1, 0.9]) - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_neighbourhood_is_grand_mean() {
        let ds = sample(300, 2);
        let n_nt = ds.arm_count(Arm::NT);
        let m = fit_cond_means(&ds, no_demean(), CondMeanMethod::Knn { k: Some(n_nt) });
        // other arms are smaller than k
        assert!(m.is_err());
        let y = no_demean().outcome(&ds);
        let nt: Vec<f64> = ds
            .rows()
            .iter()
            .zip(&y)
            .filter(|(r, _)| r.d == Arm::NT)
            .map(|(_, v)| *v)
            .collect();
        let scale = vec![1.0; 2];
        let rows: Vec<Vec<f64>> = ds
            .rows()
            .iter()
            .filter(|r| r.d == Arm::NT)
            .map(|r| r.x.clone())
            .collect();
        let grand = stats::mean(&nt);
        for x in [[0.0, 0.0], [0.3, 0.8]] {
            assert!((knn_mean(&rows, &nt, &scale, &x, n_nt) - grand).abs() < 1e-9);
        }
    }

    #[test]
    fn arm_too_small() {
        let ds = sample(40, 3);
        let method = CondMeanMethod::RegressionTree {
            min_leaf: 100,
            max_depth: 3,
        };
        assert!(matches!(
            fit_cond_means(&ds, no_demean(), method),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn prediction_error_near_noise_floor() {
        let spec = DgpSpec::preset("roy").unwrap();
        let g = generate(&spec, 12_500, 4).unwrap();
        let params = spec.welfare.params().unwrap();
        let beta = params.outcome_coefficient();
        let m = fit_cond_means(&g.dataset, no_demean(), CondMeanMethod::default()).unwrap();
        // in consumption units the noise variance is (sigma / beta)^2
        let noise_var = (spec.sigma / beta).powi(2);
        for arm in [Arm::NT, Arm::T] {
            let rows = m.rows(arm);
            assert!(rows.len() > 4500);
            let mse = stats::mean(
                &rows
                    .iter()
                    .zip(m.fitted(arm))
                    .map(|(&i, f)| {
                        let x = &g.dataset.rows()[i].x;
                        let truth = if arm == Arm::T {
                            params.consumption_for(spec.m_t.eval(x), Choice::T).unwrap()
                        } else {
                            params.consumption_for(spec.m_nt.eval(x), Choice::NT).unwrap()
                        };
                        (f - truth).powi(2)
                    })
                    .collect::<Vec<_>>(),
            );
            // expected squared error on a fresh draw is mse + noise_var
            assert!(mse < 0.1 * noise_var, "{arm}: {mse} vs {noise_var}");
        }
    }

    #[test]
    fn test_data_invariants() {
        let ds = sample(900, 5);
        let m = fit_cond_means(&ds, no_demean(), CondMeanMethod::default()).unwrap();
        let t = make_test_data(&ds, &m, 11).unwrap();
        assert_eq!(t, make_test_data(&ds, &m, 11).unwrap());
        for (i, r) in ds.rows().iter().enumerate() {
            assert_eq!(ds.rows()[t.residual_source[i]].d, r.d);
            match r.d {
                Arm::T => assert_eq!(t.z[i], Choice::T),
                Arm::NT => assert_eq!(t.z[i], Choice::NT),
                Arm::O => {}
            }
        }
        // accounting identity per arm
        for arm in Arm::ALL {
            let rows = m.rows(arm);
            let resid = m.residuals(arm);
            let pos = |i: usize| rows.iter().position(|&r| r == i).unwrap();
            let y_mean = stats::mean(&rows.iter().map(|&i| t.y[i]).collect::<Vec<_>>());
            let f_mean = stats::mean(m.fitted(arm));
            let r_mean = stats::mean(
                &rows.iter().map(|&i| resid[pos(t.residual_source[i])]).collect::<Vec<_>>(),
            );
            assert!((y_mean - f_mean - r_mean).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_residuals_reproduce_fitted() {
        let ds = sample(300, 6);
        let rows: Vec<_> = ds
            .rows()
            .iter()
            .cloned()
            .map(|mut r| {
                r.y_treat = r.y_base + [1.0, 2.0, 3.0][r.d.index()];
                r
            })
            .collect();
        let ds = RctDataset::new(ds.schema().to_vec(), rows).unwrap();
        let m = fit_cond_means(&ds, no_demean(), CondMeanMethod::default()).unwrap();
        let t = make_test_data(&ds, &m, 1).unwrap();
        for (i, r) in ds.rows().iter().enumerate() {
            assert!((t.y[i] - [1.0, 2.0, 3.0][r.d.index()]).abs() < 1e-12);
        }
    }

    #[test]
    fn resampling_expectation() {
        let ds = sample(200, 7);
        let m = fit_cond_means(&ds, no_demean(), CondMeanMethod::default()).unwrap();
        let reps = 500;
        let mut acc = vec![Vec::with_capacity(reps); ds.len()];
        for s in 0..reps {
            let t = make_test_data(&ds, &m, s as u64).unwrap();
            for (a, y) in acc.iter_mut().zip(t.y) {
                a.push(y);
            }
        }
        let mut misses = 0;
        for arm in Arm::ALL {
            let r_mean = stats::mean(&m.residuals(arm));
            for (&i, f) in m.rows(arm).iter().zip(m.fitted(arm)) {
                let (mean, se) = (stats::mean(&acc[i]), stats::std_error(&acc[i]));
                if (mean - f - r_mean).abs() > 3.0 * se {
                    misses += 1;
                }
            }
        }
        // three-sigma misses occur about 0.3% of the time
        assert!(misses <= 5, "{misses} of {}", ds.len());
    }

    #[test]
    fn single_rep_reproducible_and_log() {
        let ds = sample(400, 8);
        let cfg = CorrectionConfig {
            params: WelfareParams::default(),
            outcome: OutcomeOptions::default(),
            method: CondMeanMethod::default(),
            n_reps: 1,
            seed: 42,
        };
        let p = AssignmentPolicy::Uniform(Arm::O);
        let a = corrected_estimate(&ds, &p, None, &cfg).unwrap();
        let b = corrected_estimate(&ds, &p, None, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.between_sd, 0.0);
        let mut buf = Vec::new();
        a.write_log(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("rep,seed,welfare\n0,"));
        let many = corrected_estimate(&ds, &p, None, &CorrectionConfig { n_reps: 20, ..cfg }).unwrap();
        assert_eq!(many.replications.len(), 20);
        assert!(many.se >= many.within_se);
    }

    #[test]
    fn identical_policies_gain_zero() {
        let ds = sample(400, 9);
        let cfg = CorrectionConfig {
            params: WelfareParams::default(),
            outcome: OutcomeOptions::default(),
            method: CondMeanMethod::default_tree(),
            n_reps: 5,
            seed: 1,
        };
        let p = AssignmentPolicy::Uniform(Arm::T);
        let e = corrected_estimate(&ds, &p, Some(&p), &cfg).unwrap();
        assert_eq!(e.estimate, 0.0);
    }
}
