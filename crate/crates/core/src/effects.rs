//! Subgroup mechanism estimators: opt-in take-up, ATE, ITT and the two
//! local average treatment effects (for takers and for non-takers).
//!
//! Within a region `R` of covariate space, with arm means `m_j` of welfare and
//! opt-in take-up rate `q`:
//!
//! ```text
//! ate            = m_T - m_NT
//! itt            = m_O - m_NT
//! late_takers    = (m_O - m_NT) / q
//! late_nontakers = (m_T - m_O) / (1 - q)
//! ```
//!
//! so `itt = q * late_takers` and `ate = q * late_takers + (1 - q) * late_nontakers`.
//! Standard errors are delta-method, with arms independent and the within-arm
//! covariance of welfare and take-up among opt-in rows included.

use std::fmt::Write as _;

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{Arm, RctDataset};
use crate::error::{Error, Result};
use crate::policy::AssignmentPolicy;
use crate::stats;
use crate::welfare::WelfareOutcome;

/// A point estimate with standard error, or an explicit "undefined" marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quantity {
    Defined { estimate: f64, se: f64 },
    Undefined,
}

impl Quantity {
    pub fn estimate(&self) -> Option<f64> {
        match self {
            Quantity::Defined { estimate, .. } => Some(*estimate),
            Quantity::Undefined => None,
        }
    }

    pub fn se(&self) -> Option<f64> {
        match self {
            Quantity::Defined { se, .. } => Some(*se),
            Quantity::Undefined => None,
        }
    }

    pub fn ci95(&self) -> Option<(f64, f64)> {
        match self {
            Quantity::Defined { estimate, se } => Some(stats::ci95(*estimate, *se)),
            Quantity::Undefined => None,
        }
    }

    pub fn is_defined(&self) -> bool {
        matches!(self, Quantity::Defined { .. })
    }
}

impl Serialize for Quantity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Quantity::Undefined => s.serialize_str("undefined"),
            Quantity::Defined { estimate, se } => {
                let (lo, hi) = stats::ci95(*estimate, *se);
                let mut m = s.serialize_map(Some(3))?;
                m.serialize_entry("estimate", estimate)?;
                m.serialize_entry("se", se)?;
                m.serialize_entry("ci95", &[lo, hi])?;
                m.end()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TakeUp {
    pub rate: f64,
    pub se: f64,
    /// Opt-in rows in the region.
    pub n: usize,
}

/// Share of opt-in rows in the region that took up treatment.
pub fn take_up_rate<F>(ds: &RctDataset, region: F) -> Result<TakeUp>
where
    F: Fn(&[f64]) -> bool,
{
    let (n, takers) = ds
        .rows()
        .iter()
        .filter(|r| r.d == Arm::O && region(&r.x))
        .fold((0usize, 0usize), |(n, t), r| (n + 1, t + r.z.is_taken() as usize));
    if n == 0 {
        return Err(Error::InsufficientData("no opt-in rows in region".into()));
    }
    let rate = takers as f64 / n as f64;
    Ok(TakeUp {
        rate,
        se: (rate * (1.0 - rate) / n as f64).sqrt(),
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubgroupEffects {
    pub label: String,
    /// Rows per arm, indexed by [`Arm::index`].
    pub n: [usize; 3],
    pub takeup: Quantity,
    pub ate: Quantity,
    pub itt: Quantity,
    pub late_takers: Quantity,
    pub late_nontakers: Quantity,
}

struct ArmMoments {
    n: usize,
    mean: f64,
    var_mean: f64,
}

fn moments(values: &[f64]) -> ArmMoments {
    ArmMoments {
        n: values.len(),
        mean: stats::mean(values),
        var_mean: stats::variance(values) / values.len() as f64,
    }
}

/// All five mechanism quantities for the rows whose covariates satisfy
/// `region`. Each arm must be present in the region.
pub fn subgroup_effects<F>(
    ds: &RctDataset,
    w: &WelfareOutcome,
    region: F,
    label: &str,
) -> Result<SubgroupEffects>
where
    F: Fn(&[f64]) -> bool,
{
    if w.len() != ds.len() {
        return Err(Error::InvalidArgument("welfare/dataset length mismatch".into()));
    }
    let mut by_arm: [Vec<f64>; 3] = Default::default();
    let mut takeup_o = Vec::new();
    for (r, &wi) in ds.rows().iter().zip(&w.w) {
        if !region(&r.x) {
            continue;
        }
        by_arm[r.d.index()].push(wi);
        if r.d == Arm::O {
            takeup_o.push(if r.z.is_taken() { 1.0 } else { 0.0 });
        }
    }
    for arm in Arm::ALL {
        if by_arm[arm.index()].is_empty() {
            return Err(Error::InsufficientData(format!(
                "region `{label}` has no rows in arm {arm}"
            )));
        }
    }
    let nt = moments(&by_arm[Arm::NT.index()]);
    let t = moments(&by_arm[Arm::T.index()]);
    let o = moments(&by_arm[Arm::O.index()]);
    let q = stats::mean(&takeup_o);
    let var_q = q * (1.0 - q) / o.n as f64;
    // covariance of the opt-in welfare mean and the take-up rate
    let cov_oq = stats::covariance(&by_arm[Arm::O.index()], &takeup_o) / o.n as f64;

    let ate = Quantity::Defined {
        estimate: t.mean - nt.mean,
        se: (t.var_mean + nt.var_mean).sqrt(),
    };
    let itt_est = o.mean - nt.mean;
    let itt = Quantity::Defined {
        estimate: itt_est,
        se: (o.var_mean + nt.var_mean).sqrt(),
    };
    let late_takers = if q > 0.0 {
        let late = itt_est / q;
        // gradient (1/q, -1/q, -late/q) in (m_O, m_NT, q)
        let var = (o.var_mean + nt.var_mean + late * late * var_q - 2.0 * late * cov_oq) / (q * q);
        Quantity::Defined {
            estimate: late,
            se: var.max(0.0).sqrt(),
        }
    } else {
        Quantity::Undefined
    };
    let late_nontakers = if q < 1.0 {
        let r = 1.0 - q;
        let late = (t.mean - o.mean) / r;
        // gradient (1/r, -1/r, late/r) in (m_T, m_O, q)
        let var = (t.var_mean + o.var_mean + late * late * var_q - 2.0 * late * cov_oq) / (r * r);
        Quantity::Defined {
            estimate: late,
            se: var.max(0.0).sqrt(),
        }
    } else {
        Quantity::Undefined
    };
    Ok(SubgroupEffects {
        label: label.to_string(),
        n: [nt.n, t.n, o.n],
        takeup: Quantity::Defined {
            estimate: q,
            se: var_q.sqrt(),
        },
        ate,
        itt,
        late_takers,
        late_nontakers,
    })
}

/// One column of the mechanism table: the rows a policy assigns to `arm`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismColumn {
    pub arm: Arm,
    pub n_rows: usize,
    pub share: f64,
    /// `None` when the policy assigns no rows to this arm.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effects: Option<SubgroupEffects>,
    /// Why the cell could not be estimated, if it could not.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MechanismColumn {
    pub fn is_populated(&self) -> bool {
        self.effects.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismReport {
    pub columns: Vec<MechanismColumn>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub takeup_homogeneity: Option<HomogeneityTest>,
}

/// Row labels of the mechanism table, in order.
pub const MECHANISM_ROWS: [&str; 5] = [
    "Opt-in rate",
    "LATE(Z(O)=T, X in G_j)",
    "LATE(Z(O)=NT, X in G_j)",
    "ATE",
    "ITT",
];

/// Mechanism quantities for each arm region of `policy` (columns NT, T, O).
pub fn mechanism_report(
    ds: &RctDataset,
    w: &WelfareOutcome,
    policy: &AssignmentPolicy,
) -> Result<MechanismReport> {
    let assigned = policy.assign_all(ds)?;
    let n = ds.len() as f64;
    let columns = Arm::ALL
        .iter()
        .map(|&arm| {
            let n_rows = assigned.iter().filter(|&&a| a == arm).count();
            let share = n_rows as f64 / n;
            if n_rows == 0 {
                return MechanismColumn {
                    arm,
                    n_rows,
                    share,
                    effects: None,
                    error: None,
                };
            }
            let label = format!("G_{arm}");
            let region = |x: &[f64]| policy.assign(x).map(|a| a == arm).unwrap_or(false);
            match subgroup_effects(ds, w, region, &label) {
                Ok(e) => MechanismColumn {
                    arm,
                    n_rows,
                    share,
                    effects: Some(e),
                    error: None,
                },
                Err(e) => MechanismColumn {
                    arm,
                    n_rows,
                    share,
                    effects: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(MechanismReport {
        columns,
        takeup_homogeneity: takeup_homogeneity(ds, policy)?,
    })
}

fn fmt_cell(q: &Quantity, digits: usize) -> (String, String) {
    match q {
        Quantity::Defined { estimate, se } => {
            let (lo, hi) = stats::ci95(*estimate, *se);
            (
                format!("{estimate:.digits$}"),
                format!("[{lo:.digits$}, {hi:.digits$}]"),
            )
        }
        Quantity::Undefined => ("undefined".into(), String::new()),
    }
}

impl MechanismReport {
    /// Tab-separated table: a header line, then estimate and CI lines per
    /// quantity. Money in JPY at one decimal, rates at three.
    pub fn to_tsv(&self) -> String {
        // regions the policy never assigns are left out
        let cols: Vec<_> = self.columns.iter().filter(|c| c.n_rows > 0).collect();
        let mut out = String::from("quantity");
        for c in &cols {
            let _ = write!(out, "\t{}", c.arm);
        }
        out.push('\n');
        let pick: [(fn(&SubgroupEffects) -> &Quantity, usize); 5] = [
            (|e| &e.takeup, 3),
            (|e| &e.late_takers, 1),
            (|e| &e.late_nontakers, 1),
            (|e| &e.ate, 1),
            (|e| &e.itt, 1),
        ];
        for (label, (get, digits)) in MECHANISM_ROWS.iter().zip(pick) {
            let mut est = label.to_string();
            let mut ci = String::from("  95% CI");
            for c in &cols {
                let (e, i) = match (&c.effects, &c.error) {
                    (Some(eff), _) => fmt_cell(get(eff), digits),
                    (None, Some(_)) => ("n/a".into(), String::new()),
                    (None, None) => ("-".into(), String::new()),
                };
                let _ = write!(est, "\t{e}");
                let _ = write!(ci, "\t{i}");
            }
            out.push_str(&est);
            out.push('\n');
            out.push_str(&ci);
            out.push('\n');
        }
        let mut share = String::from("Share of households");
        let mut count = String::from("Observations");
        for c in &cols {
            let _ = write!(share, "\t{:.3}", c.share);
            let _ = write!(count, "\t{}", c.n_rows);
        }
        out.push_str(&share);
        out.push('\n');
        out.push_str(&count);
        out.push('\n');
        if let Some(h) = &self.takeup_homogeneity {
            let _ = writeln!(
                out,
                "Take-up homogeneity chi2({})\t{:.3}\tp = {:.3}",
                h.df, h.statistic, h.p_value
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Pearson chi-square test that opt-in take-up is equal across policy
/// regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomogeneityTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// `None` when fewer than two regions contain opt-in rows or take-up is
/// degenerate (all or none).
pub fn takeup_homogeneity(
    ds: &RctDataset,
    policy: &AssignmentPolicy,
) -> Result<Option<HomogeneityTest>> {
    let assigned = policy.assign_all(ds)?;
    let mut counts = [[0.0f64; 2]; 3];
    for (r, a) in ds.rows().iter().zip(&assigned) {
        if r.d == Arm::O {
            counts[a.index()][r.z.is_taken() as usize] += 1.0;
        }
    }
    let groups: Vec<[f64; 2]> = counts
        .into_iter()
        .filter(|c| c[0] + c[1] > 0.0)
        .collect();
    if groups.len() < 2 {
        return Ok(None);
    }
    let total: f64 = groups.iter().map(|g| g[0] + g[1]).sum();
    let col = [
        groups.iter().map(|g| g[0]).sum::<f64>(),
        groups.iter().map(|g| g[1]).sum::<f64>(),
    ];
    if col[0] == 0.0 || col[1] == 0.0 {
        return Ok(None);
    }
    let mut stat = 0.0;
    for g in &groups {
        let row = g[0] + g[1];
        for j in 0..2 {
            let e = row * col[j] / total;
            stat += (g[j] - e).powi(2) / e;
        }
    }
    let df = groups.len() - 1;
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::Invariant(e.to_string()))?;
    Ok(Some(HomogeneityTest {
        statistic: stat,
        df,
        p_value: 1.0 - dist.cdf(stat),
    }))
}
