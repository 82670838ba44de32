//! Two-way fixed-effects ITT regression on half-hourly log consumption:
//!
//! ```text
//! log y_it = tau_T Z^T_it + tau_O Z^O_it + lambda_i + theta_t + e_it
//! ```
//!
//! with `Z^d_it = 1` when household `i` is in arm `d` and interval `t` falls in
//! the treatment period. Household and interval effects are swept out by the
//! within transformation; standard errors are clustered by household (CR1).
//!
//! Input CSV layout: `household,interval,log_y,arm,post`.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::Serialize;

use crate::data::Arm;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PanelObservation {
    pub household: String,
    pub interval: String,
    pub log_y: f64,
    /// Household's assigned arm.
    pub arm: Arm,
    /// Whether the interval lies in the treatment period.
    pub post: bool,
}

impl PanelObservation {
    pub fn z_t(&self) -> f64 {
        (self.post && self.arm == Arm::T) as u8 as f64
    }

    pub fn z_o(&self) -> f64 {
        (self.post && self.arm == Arm::O) as u8 as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PanelItt {
    pub tau_t: f64,
    pub tau_o: f64,
    pub se_t: f64,
    pub se_o: f64,
    pub n_obs: usize,
    pub n_households: usize,
    pub n_intervals: usize,
}

pub fn load_panel_csv(path: impl AsRef<Path>) -> Result<Vec<PanelObservation>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel_csv(file)
}

pub fn read_panel_csv<R: Read>(reader: R) -> Result<Vec<PanelObservation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (c_h, c_t, c_y, c_a, c_p) = (
        col("household")?,
        col("interval")?,
        col("log_y")?,
        col("arm")?,
        col("post")?,
    );
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |c: usize| rec.get(c).unwrap_or("");
        let row = format!("{}@{}", get(c_h), get(c_t));
        let parse_err = |column: &str, value: &str| Error::Parse {
            row: row.clone(),
            column: column.into(),
            value: value.into(),
        };
        let log_y: f64 = get(c_y).parse().map_err(|_| parse_err("log_y", get(c_y)))?;
        let arm: Arm = get(c_a).parse().map_err(|_| parse_err("arm", get(c_a)))?;
        let post = match get(c_p).to_ascii_lowercase().as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            v => return Err(parse_err("post", v)),
        };
        out.push(PanelObservation {
            household: get(c_h).to_string(),
            interval: get(c_t).to_string(),
            log_y,
            arm,
            post,
        });
    }
    Ok(out)
}

/// Dense index form of a validated panel.
struct Indexed {
    hh: Vec<usize>,
    t: Vec<usize>,
    n_hh: usize,
    n_t: usize,
    balanced: bool,
}

fn index_panel(panel: &[PanelObservation]) -> Result<Indexed> {
    let mut hh_ix: HashMap<&str, usize> = HashMap::new();
    let mut t_ix: HashMap<&str, usize> = HashMap::new();
    let mut hh_arm: Vec<Arm> = Vec::new();
    let mut hh = Vec::with_capacity(panel.len());
    let mut t = Vec::with_capacity(panel.len());
    for o in panel {
        if !o.log_y.is_finite() {
            return Err(Error::InvalidRow {
                row: format!("{}@{}", o.household, o.interval),
                reason: "log_y must be finite".into(),
            });
        }
        let next = hh_ix.len();
        let h = *hh_ix.entry(o.household.as_str()).or_insert(next);
        if h == hh_arm.len() {
            hh_arm.push(o.arm);
        } else if hh_arm[h] != o.arm {
            return Err(Error::InvalidRow {
                row: o.household.clone(),
                reason: "household appears in more than one arm".into(),
            });
        }
        let next = t_ix.len();
        hh.push(h);
        t.push(*t_ix.entry(o.interval.as_str()).or_insert(next));
    }
    let (n_hh, n_t) = (hh_ix.len(), t_ix.len());
    let mut seen = vec![false; n_hh * n_t];
    for (&h, &tt) in hh.iter().zip(&t) {
        let cell = &mut seen[h * n_t + tt];
        if *cell {
            return Err(Error::InvalidRow {
                row: format!("{}@{}", panel[0].household, tt),
                reason: "duplicate (household, interval) observation".into(),
            });
        }
        *cell = true;
    }
    if n_t < 2 {
        return Err(Error::InsufficientData("panel needs at least two intervals".into()));
    }
    for arm in Arm::ALL {
        let count = hh_arm.iter().filter(|&&a| a == arm).count();
        if count < 2 {
            return Err(Error::InsufficientData(format!(
                "panel needs at least two households in arm {arm}, found {count}"
            )));
        }
    }
    Ok(Indexed {
        balanced: panel.len() == n_hh * n_t,
        hh,
        t,
        n_hh,
        n_t,
    })
}

fn group_means(v: &[f64], group: &[usize], n_groups: usize) -> Vec<f64> {
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&g, &x) in group.iter().zip(v) {
        sums[g] += x;
        counts[g] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

/// Sweeps household and interval means out of `v`.
fn within(v: &[f64], ix: &Indexed) -> Vec<f64> {
    if ix.balanced {
        let mh = group_means(v, &ix.hh, ix.n_hh);
        let mt = group_means(v, &ix.t, ix.n_t);
        let grand = v.iter().sum::<f64>() / v.len() as f64;
        return v
            .iter()
            .enumerate()
            .map(|(i, x)| x - mh[ix.hh[i]] - mt[ix.t[i]] + grand)
            .collect();
    }
    // unbalanced: alternate the two one-way sweeps until they agree
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let mut r = v.to_vec();
    for _ in 0..10_000 {
        let mh = group_means(&r, &ix.hh, ix.n_hh);
        for (i, x) in r.iter_mut().enumerate() {
            *x -= mh[ix.hh[i]];
        }
        let mt = group_means(&r, &ix.t, ix.n_t);
        let mut change = 0.0f64;
        for (i, x) in r.iter_mut().enumerate() {
            *x -= mt[ix.t[i]];
            change = change.max(mt[ix.t[i]].abs());
        }
        if change < 1e-13 * scale {
            break;
        }
    }
    r
}

/// Two-way within estimator of `tau_T` and `tau_O` with household-clustered
/// standard errors.
pub fn panel_itt(panel: &[PanelObservation]) -> Result<PanelItt> {
    let ix = index_panel(panel)?;
    let y: Vec<f64> = panel.iter().map(|o| o.log_y).collect();
    let zt: Vec<f64> = panel.iter().map(PanelObservation::z_t).collect();
    let zo: Vec<f64> = panel.iter().map(PanelObservation::z_o).collect();
    let (y, zt, zo) = (within(&y, &ix), within(&zt, &ix), within(&zo, &ix));

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (a, b, d) = (dot(&zt, &zt), dot(&zt, &zo), dot(&zo, &zo));
    let det = a * d - b * b;
    if !(det > 1e-10 * (a + d).powi(2)) {
        return Err(Error::Degenerate(
            "treatment indicators are collinear after the within transformation".into(),
        ));
    }
    let inv = [[d / det, -b / det], [-b / det, a / det]];
    let (gy_t, gy_o) = (dot(&zt, &y), dot(&zo, &y));
    let tau_t = inv[0][0] * gy_t + inv[0][1] * gy_o;
    let tau_o = inv[1][0] * gy_t + inv[1][1] * gy_o;

    let mut score = vec![[0.0f64; 2]; ix.n_hh];
    let mut size = vec![0usize; ix.n_hh];
    for i in 0..y.len() {
        let u = y[i] - tau_t * zt[i] - tau_o * zo[i];
        let s = &mut score[ix.hh[i]];
        s[0] += zt[i] * u;
        s[1] += zo[i] * u;
        size[ix.hh[i]] += 1;
    }
    let singletons = size.iter().filter(|&&c| c == 1).count();
    if singletons > 0 {
        log::warn!("{singletons} singleton household clusters");
    }
    let mut meat = [[0.0f64; 2]; 2];
    for s in &score {
        for r in 0..2 {
            for c in 0..2 {
                meat[r][c] += s[r] * s[c];
            }
        }
    }
    let (g, n, k) = (ix.n_hh as f64, y.len() as f64, 2.0);
    let correction = g / (g - 1.0) * (n - 1.0) / (n - k);
    let mut v = [[0.0f64; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            v[r][c] = correction
                * (0..2)
                    .flat_map(|p| (0..2).map(move |q| (p, q)))
                    .map(|(p, q)| inv[r][p] * meat[p][q] * inv[q][c])
                    .sum::<f64>();
        }
    }
    Ok(PanelItt {
        tau_t,
        tau_o,
        se_t: v[0][0].max(0.0).sqrt(),
        se_o: v[1][1].max(0.0).sqrt(),
        n_obs: panel.len(),
        n_households: ix.n_hh,
        n_intervals: ix.n_t,
    })
}

/// Runs [`panel_itt`] separately on households at or below, and above, the
/// median of a household-level covariate.
pub fn panel_itt_median_split(
    panel: &[PanelObservation],
    covariate: &HashMap<String, f64>,
) -> Result<(PanelItt, PanelItt)> {
    let mut values: Vec<f64> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for o in panel {
        if seen.insert(o.household.as_str()) {
            let v = covariate.get(&o.household).ok_or_else(|| {
                Error::InsufficientData(format!("no covariate value for household {}", o.household))
            })?;
            values.push(*v);
        }
    }
    values.sort_by(f64::total_cmp);
    let m = values.len();
    let median = if m % 2 == 1 {
        values[m / 2]
    } else {
        (values[m / 2 - 1] + values[m / 2]) / 2.0
    };
    let (lo, hi): (Vec<PanelObservation>, Vec<PanelObservation>) = panel
        .iter()
        .cloned()
        .partition(|o| covariate[&o.household] <= median);
    Ok((panel_itt(&lo)?, panel_itt(&hi)?))
}
