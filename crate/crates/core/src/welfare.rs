//! Welfare outcome construction and inverse-propensity-weighted policy welfare.
//!
//! Each household's welfare contribution is affine in its consumption change
//! `Y` with a per-takeup administrative cost:
//!
//! ```text
//! W = beta * Y - a * 1{z = T}
//! ```
//!
//! Under [`SignConvention::SavingsPositive`] `beta = -(delta + (c - p) / 2)`,
//! so a one kWh reduction is worth `delta + (c - p) / 2` JPY. Under
//! [`SignConvention::PaperPrinted`] `beta = delta + (p - c) / 2`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Arm, Choice, Propensities, RctDataset};
use crate::error::{Error, Result};
use crate::policy::AssignmentPolicy;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// Consumption reductions raise welfare.
    SavingsPositive,
    /// Coefficient `delta + (p - c) / 2` applied to consumption as written.
    PaperPrinted,
}

impl std::str::FromStr for SignConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "savings_positive" => Ok(SignConvention::SavingsPositive),
            "paper_printed" => Ok(SignConvention::PaperPrinted),
            _ => Err(Error::Config(format!("unknown sign convention `{s}`"))),
        }
    }
}

/// Economic parameters of the welfare criterion (all JPY).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfareParams {
    /// Retail price per kWh.
    pub price: f64,
    /// Marginal production cost per kWh.
    pub marginal_cost: f64,
    /// Administrative cost per household that takes up the program.
    pub admin_cost: f64,
    /// Long-term benefit per kWh of reduction.
    pub delta: f64,
    pub sign_convention: SignConvention,
}

/// File form of [`WelfareParams`]; `delta` is derived as
/// `capacity_price / event_hours`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WelfareConfig {
    pub price: f64,
    pub marginal_cost: f64,
    pub admin_cost: f64,
    pub capacity_price: f64,
    pub event_hours: f64,
    pub sign_convention: SignConvention,
}

impl Default for WelfareConfig {
    fn default() -> Self {
        WelfareConfig {
            price: 25.0,
            marginal_cost: 125.0,
            admin_cost: 291.1,
            capacity_price: 9425.0,
            event_hours: 28.0,
            sign_convention: SignConvention::SavingsPositive,
        }
    }
}

impl WelfareConfig {
    pub fn params(&self) -> Result<WelfareParams> {
        if !(self.event_hours.is_finite() && self.event_hours > 0.0) {
            return Err(Error::Config(format!(
                "event_hours must be positive, got {}",
                self.event_hours
            )));
        }
        let params = WelfareParams {
            price: self.price,
            marginal_cost: self.marginal_cost,
            admin_cost: self.admin_cost,
            delta: self.capacity_price / self.event_hours,
            sign_convention: self.sign_convention,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

impl Default for WelfareParams {
    fn default() -> Self {
        WelfareConfig::default()
            .params()
            .expect("default welfare parameters are valid")
    }
}

impl WelfareParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("price", self.price),
            ("marginal_cost", self.marginal_cost),
            ("admin_cost", self.admin_cost),
            ("delta", self.delta),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// JPY value of one kWh saved under the savings-positive convention.
    pub fn kappa(&self) -> f64 {
        self.delta + (self.marginal_cost - self.price) / 2.0
    }

    /// Coefficient multiplying the consumption change `Y`.
    pub fn outcome_coefficient(&self) -> f64 {
        match self.sign_convention {
            SignConvention::SavingsPositive => -self.kappa(),
            SignConvention::PaperPrinted => self.delta + (self.price - self.marginal_cost) / 2.0,
        }
    }

    /// Welfare of one household with consumption change `y` and take-up `z`.
    pub fn welfare(&self, y: f64, z: Choice) -> f64 {
        let cost = if z.is_taken() { self.admin_cost } else { 0.0 };
        self.outcome_coefficient() * y - cost
    }

    /// Consumption change that produces welfare `w` under take-up `z`.
    pub fn consumption_for(&self, w: f64, z: Choice) -> Result<f64> {
        let beta = self.outcome_coefficient();
        if beta == 0.0 {
            return Err(Error::Degenerate(
                "welfare does not depend on consumption (zero coefficient)".into(),
            ));
        }
        let cost = if z.is_taken() { self.admin_cost } else { 0.0 };
        Ok((w + cost) / beta)
    }
}

/// How the observed outcome is preprocessed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeOptions {
    /// Use `y_treat - y_base` instead of `y_treat`.
    pub baseline_diff: bool,
    /// Subtract the grand mean of `W`.
    pub demean: bool,
}

impl Default for OutcomeOptions {
    fn default() -> Self {
        OutcomeOptions {
            baseline_diff: true,
            demean: true,
        }
    }
}

impl OutcomeOptions {
    /// The consumption outcome `Y` per row.
    pub fn outcome(&self, ds: &RctDataset) -> Vec<f64> {
        ds.rows()
            .iter()
            .map(|r| {
                if self.baseline_diff {
                    r.y_treat - r.y_base
                } else {
                    r.y_treat
                }
            })
            .collect()
    }
}

/// Per-row welfare contributions aligned with the dataset rows.
#[derive(Debug, Clone, PartialEq)]
pub struct WelfareOutcome {
    pub w: Vec<f64>,
    pub demeaned: bool,
    pub baseline_differenced: bool,
}

impl WelfareOutcome {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Multiplies every contribution by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        WelfareOutcome {
            w: self.w.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }
}

/// Welfare from raw outcome and choice vectors.
pub fn welfare_from_outcomes(
    y: &[f64],
    z: &[Choice],
    params: &WelfareParams,
    demean: bool,
) -> WelfareOutcome {
    assert_eq!(y.len(), z.len(), "outcome and choice vectors differ in length");
    let mut w: Vec<f64> = y.iter().zip(z).map(|(&y, &z)| params.welfare(y, z)).collect();
    if demean && !w.is_empty() {
        let m = stats::mean(&w);
        w.iter_mut().for_each(|v| *v -= m);
    }
    WelfareOutcome {
        w,
        demeaned: demean,
        baseline_differenced: false,
    }
}

pub fn build_welfare(
    ds: &RctDataset,
    params: &WelfareParams,
    opts: OutcomeOptions,
) -> WelfareOutcome {
    let y = opts.outcome(ds);
    let mut out = welfare_from_outcomes(&y, &ds.choices(), params, opts.demean);
    out.baseline_differenced = opts.baseline_diff;
    out
}

/// Inverse-propensity-weighted scores `w_i 1{d_i = j} / p_j`, one triple per
/// row indexed by [`Arm::index`]. Arms with zero propensity score zero; use
/// [`check_policy_arms`] before evaluating a policy that can emit them.
pub fn ipw_scores(w: &[f64], arms: &[Arm], props: &Propensities) -> Vec<[f64; 3]> {
    assert_eq!(w.len(), arms.len(), "welfare and arm vectors differ in length");
    w.iter()
        .zip(arms)
        .map(|(&wi, &d)| {
            let mut s = [0.0; 3];
            let p = props.get(d);
            if p > 0.0 {
                s[d.index()] = wi / p;
            }
            s
        })
        .collect()
}

pub(crate) fn check_policy_arms(policy: &AssignmentPolicy, props: &Propensities) -> Result<()> {
    for arm in policy.arms() {
        props.require(arm)?;
    }
    Ok(())
}

/// Mean IPW score of the arms in `assigned`.
pub fn welfare_of_assignment(
    w: &[f64],
    arms: &[Arm],
    assigned: &[Arm],
    props: &Propensities,
) -> Result<f64> {
    Ok(stats::mean(&assignment_scores(w, arms, assigned, props)?))
}

fn assignment_scores(
    w: &[f64],
    arms: &[Arm],
    assigned: &[Arm],
    props: &Propensities,
) -> Result<Vec<f64>> {
    if w.len() != arms.len() || w.len() != assigned.len() {
        return Err(Error::InvalidArgument("length mismatch".into()));
    }
    w.iter()
        .zip(arms)
        .zip(assigned)
        .map(|((&wi, &d), &g)| {
            let p = props.require(g)?;
            Ok(if d == g { wi / p } else { 0.0 })
        })
        .collect()
}

/// `(1/n) sum_i sum_j w_i 1{d_i = j} / p_j 1{policy(x_i) = j}`.
pub fn empirical_welfare(
    w: &WelfareOutcome,
    ds: &RctDataset,
    policy: &AssignmentPolicy,
    props: &Propensities,
) -> Result<f64> {
    check_len(w, ds)?;
    check_policy_arms(policy, props)?;
    let assigned = policy.assign_all(ds)?;
    welfare_of_assignment(&w.w, &ds.arms(), &assigned, props)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfareGain {
    pub gain: f64,
    pub se: f64,
}

impl WelfareGain {
    pub fn ci95(&self) -> (f64, f64) {
        stats::ci95(self.gain, self.se)
    }
}

/// Welfare of `a` minus welfare of `b`, with the standard error of the mean
/// per-row score difference.
pub fn welfare_gain(
    w: &WelfareOutcome,
    ds: &RctDataset,
    a: &AssignmentPolicy,
    b: &AssignmentPolicy,
    props: &Propensities,
) -> Result<WelfareGain> {
    check_len(w, ds)?;
    check_policy_arms(a, props)?;
    check_policy_arms(b, props)?;
    let arms = ds.arms();
    let sa = assignment_scores(&w.w, &arms, &a.assign_all(ds)?, props)?;
    let sb = assignment_scores(&w.w, &arms, &b.assign_all(ds)?, props)?;
    Ok(gain_from_scores(&sa, &sb))
}

pub(crate) fn gain_from_scores(sa: &[f64], sb: &[f64]) -> WelfareGain {
    let diff: Vec<f64> = sa.iter().zip(sb).map(|(a, b)| a - b).collect();
    WelfareGain {
        gain: stats::mean(sa) - stats::mean(sb),
        se: stats::std_error(&diff),
    }
}

/// Welfare of an assignment on raw vectors, with the standard error of the
/// mean IPW score.
pub fn assignment_welfare(
    w: &[f64],
    arms: &[Arm],
    assigned: &[Arm],
    props: &Propensities,
) -> Result<WelfareGain> {
    let s = assignment_scores(w, arms, assigned, props)?;
    Ok(WelfareGain {
        gain: stats::mean(&s),
        se: stats::std_error(&s),
    })
}

/// Welfare gain of assignment `a` over `b` on raw vectors.
pub fn assignment_gain(
    w: &[f64],
    arms: &[Arm],
    a: &[Arm],
    b: &[Arm],
    props: &Propensities,
) -> Result<WelfareGain> {
    let sa = assignment_scores(w, arms, a, props)?;
    let sb = assignment_scores(w, arms, b, props)?;
    Ok(gain_from_scores(&sa, &sb))
}

fn check_len(w: &WelfareOutcome, ds: &RctDataset) -> Result<()> {
    if w.len() != ds.len() {
        return Err(Error::InvalidArgument(format!(
            "welfare vector has {} entries for {} rows",
            w.len(),
            ds.len()
        )));
    }
    Ok(())
}
