//! Simulator for three-arm trials with a choice arm, with known potential
//! welfare, a configurable selection model and exact conditional effects.
//!
//! Each unit has covariates `x`, potential welfare
//! `w(T) = m_T(x) + e_T` and `w(NT) = m_NT(x) + e_NT` (independent noise), and a
//! latent choice `Z(O)` drawn from the selection model. Welfare in the opt-in
//! arm is the choice-selected potential outcome, so treatment response never
//! depends on who made the choice.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Choice, Household, RctDataset};
use crate::error::{Error, Result};
use crate::policy::AssignmentPolicy;
use crate::stats;
use crate::welfare::WelfareConfig;

/// Closed-form function of the covariate vector.
///
/// In config files a bare number is shorthand for `{ form = "constant" }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScalarFnRepr", into = "ScalarFnRepr")]
pub enum ScalarFn {
    Constant(f64),
    /// `intercept + sum_k coefs[k] * x[k]`; missing coefficients are zero.
    Linear { intercept: f64, coefs: Vec<f64> },
    /// `above` when `x[var] >= threshold`, else `below`.
    Step {
        var: usize,
        threshold: f64,
        below: Box<ScalarFn>,
        above: Box<ScalarFn>,
    },
    /// `amplitude * sin(2 pi frequency x[var]) + offset`.
    Sine {
        var: usize,
        amplitude: f64,
        frequency: f64,
        offset: f64,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ScalarFnRepr {
    Number(f64),
    Form(ScalarForm),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
enum ScalarForm {
    Constant {
        value: f64,
    },
    Linear {
        intercept: f64,
        coefs: Vec<f64>,
    },
    Step {
        var: usize,
        threshold: f64,
        below: Box<ScalarFn>,
        above: Box<ScalarFn>,
    },
    Sine {
        var: usize,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl From<ScalarFnRepr> for ScalarFn {
    fn from(r: ScalarFnRepr) -> Self {
        match r {
            ScalarFnRepr::Number(v) => ScalarFn::Constant(v),
            ScalarFnRepr::Form(ScalarForm::Constant { value }) => ScalarFn::Constant(value),
            ScalarFnRepr::Form(ScalarForm::Linear { intercept, coefs }) => {
                ScalarFn::Linear { intercept, coefs }
            }
            ScalarFnRepr::Form(ScalarForm::Step {
                var,
                threshold,
                below,
                above,
            }) => ScalarFn::Step {
                var,
                threshold,
                below,
                above,
            },
            ScalarFnRepr::Form(ScalarForm::Sine {
                var,
                amplitude,
                frequency,
                offset,
            }) => ScalarFn::Sine {
                var,
                amplitude,
                frequency,
                offset,
            },
        }
    }
}

impl From<ScalarFn> for ScalarFnRepr {
    fn from(f: ScalarFn) -> Self {
        match f {
            ScalarFn::Constant(v) => ScalarFnRepr::Number(v),
            ScalarFn::Linear { intercept, coefs } => {
                ScalarFnRepr::Form(ScalarForm::Linear { intercept, coefs })
            }
            ScalarFn::Step {
                var,
                threshold,
                below,
                above,
            } => ScalarFnRepr::Form(ScalarForm::Step {
                var,
                threshold,
                below,
                above,
            }),
            ScalarFn::Sine {
                var,
                amplitude,
                frequency,
                offset,
            } => ScalarFnRepr::Form(ScalarForm::Sine {
                var,
                amplitude,
                frequency,
                offset,
            }),
        }
    }
}

impl ScalarFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarFn::Constant(v) => *v,
            ScalarFn::Linear { intercept, coefs } => {
                intercept + coefs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
            }
            ScalarFn::Step {
                var,
                threshold,
                below,
                above,
            } => {
                if x[*var] >= *threshold {
                    above.eval(x)
                } else {
                    below.eval(x)
                }
            }
            ScalarFn::Sine {
                var,
                amplitude,
                frequency,
                offset,
            } => amplitude * (2.0 * std::f64::consts::PI * frequency * x[*var]).sin() + offset,
        }
    }

    fn validate(&self, k: usize, name: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{name}: {msg}")));
        match self {
            ScalarFn::Constant(v) if !v.is_finite() => bad(format!("non-finite constant {v}")),
            ScalarFn::Constant(_) => Ok(()),
            ScalarFn::Linear { intercept, coefs } => {
                if coefs.len() > k {
                    return bad(format!("{} coefficients for {k} covariates", coefs.len()));
                }
                if !intercept.is_finite() || coefs.iter().any(|c| !c.is_finite()) {
                    return bad("non-finite linear coefficient".into());
                }
                Ok(())
            }
            ScalarFn::Step {
                var,
                threshold,
                below,
                above,
            } => {
                if *var >= k {
                    return bad(format!("step on covariate {var} but only {k} exist"));
                }
                if !threshold.is_finite() {
                    return bad("non-finite step threshold".into());
                }
                below.validate(k, name)?;
                above.validate(k, name)
            }
            ScalarFn::Sine {
                var,
                amplitude,
                frequency,
                offset,
            } => {
                if *var >= k {
                    return bad(format!("sine on covariate {var} but only {k} exist"));
                }
                if ![amplitude, frequency, offset].iter().all(|v| v.is_finite()) {
                    return bad("non-finite sine parameter".into());
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateLaw {
    /// Independent uniform on `[0, 1]`.
    Uniform,
    /// Independent standard normal.
    Normal,
    /// Independent uniform on the cell midpoints `(i + 0.5) / levels`.
    Grid { levels: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    Gaussian,
    /// Laplace with standard deviation `sigma` (heavier tails).
    Laplace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selection {
    /// Take up iff `w(T) >= w(NT)`.
    Roy,
    /// `P(Z(O) = T | x, e) = logistic(intercept(x) + alignment(x) * (w(T) - w(NT)))`.
    Logistic {
        alignment: ScalarFn,
        #[serde(default = "zero_fn")]
        intercept: ScalarFn,
    },
}

fn zero_fn() -> ScalarFn {
    ScalarFn::Constant(0.0)
}

fn default_shares() -> [f64; 3] {
    [0.4, 0.4, 0.2]
}

fn default_baseline() -> f64 {
    300.0
}

/// Data-generating process. Welfare functions are in JPY per household.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    /// Covariate dimension.
    pub k: usize,
    pub covariates: CovariateLaw,
    pub m_nt: ScalarFn,
    pub m_t: ScalarFn,
    /// Standard deviation of each potential-welfare noise term.
    pub sigma: f64,
    #[serde(default = "default_noise")]
    pub noise: NoiseLaw,
    pub selection: Selection,
    /// Assignment probabilities in `NT, T, O` order.
    #[serde(default = "default_shares")]
    pub arm_shares: [f64; 3],
    /// Parameters used to turn welfare back into consumption columns.
    #[serde(default)]
    pub welfare: WelfareConfig,
    /// Baseline consumption (kWh) written to `y_base`.
    #[serde(default = "default_baseline")]
    pub baseline_kwh: f64,
}

fn default_noise() -> NoiseLaw {
    NoiseLaw::Gaussian
}

pub const PRESETS: [&str; 4] = ["roy", "logistic", "null", "mixed"];

impl DgpSpec {
    fn base(k: usize, covariates: CovariateLaw, m_t: ScalarFn, sigma: f64, selection: Selection) -> Self {
        DgpSpec {
            k,
            covariates,
            m_nt: ScalarFn::Constant(0.0),
            m_t,
            sigma,
            noise: NoiseLaw::Gaussian,
            selection,
            arm_shares: default_shares(),
            welfare: WelfareConfig::default(),
            baseline_kwh: default_baseline(),
        }
    }

    /// Named example processes:
    ///
    /// * `roy`: treatment effect linear in two covariates, Roy selection.
    /// * `logistic`: same effects, weakly aligned logistic selection.
    /// * `null`: no effect on consumption, so treating only costs `admin_cost`.
    /// * `mixed`: choice is well aligned for `x1 < 0.5` and adversarial above,
    ///   where the effect changes sign at `x2 = 0.5`.
    pub fn preset(name: &str) -> Result<Self> {
        let a = WelfareConfig::default().admin_cost;
        let spec = match name {
            "roy" => DgpSpec::base(
                2,
                CovariateLaw::Grid { levels: 20 },
                ScalarFn::Linear {
                    intercept: -a,
                    coefs: vec![600.0, -200.0],
                },
                500.0,
                Selection::Roy,
            ),
            "logistic" => DgpSpec::base(
                2,
                CovariateLaw::Grid { levels: 20 },
                ScalarFn::Linear {
                    intercept: -a,
                    coefs: vec![600.0, -200.0],
                },
                500.0,
                Selection::Logistic {
                    alignment: ScalarFn::Constant(0.005),
                    intercept: zero_fn(),
                },
            ),
            "null" => DgpSpec::base(
                3,
                CovariateLaw::Grid { levels: 10 },
                ScalarFn::Constant(-a),
                1500.0,
                Selection::Logistic {
                    alignment: zero_fn(),
                    intercept: zero_fn(),
                },
            ),
            "mixed" => DgpSpec::base(
                2,
                CovariateLaw::Grid { levels: 20 },
                ScalarFn::Step {
                    var: 0,
                    threshold: 0.5,
                    below: Box::new(ScalarFn::Constant(0.0)),
                    above: Box::new(ScalarFn::Linear {
                        intercept: -300.0,
                        coefs: vec![0.0, 600.0],
                    }),
                },
                500.0,
                Selection::Logistic {
                    alignment: ScalarFn::Step {
                        var: 0,
                        threshold: 0.5,
                        below: Box::new(ScalarFn::Constant(0.01)),
                        above: Box::new(ScalarFn::Constant(-0.01)),
                    },
                    intercept: zero_fn(),
                },
            ),
            other => {
                return Err(Error::Config(format!(
                    "unknown DGP preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(spec)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: DgpSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if let CovariateLaw::Grid { levels: 0 } = self.covariates {
            return Err(Error::Config("grid covariates need at least one level".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.arm_shares.iter().any(|s| !(s.is_finite() && *s >= 0.0))
            || (self.arm_shares.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "arm_shares must be non-negative and sum to 1, got {:?}",
                self.arm_shares
            )));
        }
        if !(self.baseline_kwh.is_finite() && self.baseline_kwh >= 0.0) {
            return Err(Error::Config("baseline_kwh must be >= 0".into()));
        }
        self.m_nt.validate(self.k, "m_nt")?;
        self.m_t.validate(self.k, "m_t")?;
        if let Selection::Logistic {
            alignment,
            intercept,
        } = &self.selection
        {
            alignment.validate(self.k, "alignment")?;
            intercept.validate(self.k, "intercept")?;
        }
        self.welfare.params()?;
        Ok(())
    }

    pub fn schema(&self) -> Vec<String> {
        (1..=self.k).map(|i| format!("x{i}")).collect()
    }

    /// Standard deviation of `e_T - e_NT`.
    fn diff_scale(&self) -> f64 {
        self.sigma * std::f64::consts::SQRT_2
    }

    /// One-paragraph description for logs and CLI output.
    pub fn summary(&self) -> String {
        let sel = match &self.selection {
            Selection::Roy => "roy".to_string(),
            Selection::Logistic { alignment, intercept } => {
                format!("logistic(alignment={alignment:?}, intercept={intercept:?})")
            }
        };
        format!(
            "K={} covariates={:?} sigma={} noise={:?} selection={} shares(NT,T,O)={:?}",
            self.k, self.covariates, self.sigma, self.noise, sel, self.arm_shares
        )
    }

    fn draw_noise(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.noise {
            NoiseLaw::Gaussian => {
                let e: f64 = rng.sample(StandardNormal);
                self.sigma * e
            }
            NoiseLaw::Laplace => {
                let b = self.sigma / std::f64::consts::SQRT_2;
                let u: f64 = rng.random::<f64>() - 0.5;
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }

    /// Draws one unit: covariates and potential outcomes.
    fn draw_unit(&self, rng: &mut ChaCha8Rng, x: &mut Vec<f64>) -> PotentialOutcomes {
        x.clear();
        for _ in 0..self.k {
            x.push(match self.covariates {
                CovariateLaw::Uniform => rng.random::<f64>(),
                CovariateLaw::Normal => rng.sample(StandardNormal),
                CovariateLaw::Grid { levels } => {
                    (rng.random_range(0..levels) as f64 + 0.5) / levels as f64
                }
            });
        }
        let w_t = self.m_t.eval(x) + self.draw_noise(rng);
        let w_nt = self.m_nt.eval(x) + self.draw_noise(rng);
        let take = match &self.selection {
            Selection::Roy => w_t >= w_nt,
            Selection::Logistic {
                alignment,
                intercept,
            } => {
                let p = logistic(intercept.eval(x) + alignment.eval(x) * (w_t - w_nt));
                rng.random::<f64>() < p
            }
        };
        PotentialOutcomes {
            w_t,
            w_nt,
            z_opt: if take { Choice::T } else { Choice::NT },
        }
    }

    fn draw_arm(&self, rng: &mut ChaCha8Rng) -> Arm {
        let u: f64 = rng.random();
        let [nt, t, _] = self.arm_shares;
        if u < nt {
            Arm::NT
        } else if u < nt + t {
            Arm::T
        } else {
            Arm::O
        }
    }
}

fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Hidden potential outcomes of one generated unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcomes {
    pub w_t: f64,
    pub w_nt: f64,
    /// Choice the unit would make if offered the opt-in arm.
    pub z_opt: Choice,
}

impl PotentialOutcomes {
    /// Welfare realized under `arm`.
    pub fn welfare(&self, arm: Arm) -> f64 {
        match (arm, self.z_opt) {
            (Arm::T, _) | (Arm::O, Choice::T) => self.w_t,
            (Arm::NT, _) | (Arm::O, Choice::NT) => self.w_nt,
        }
    }

    pub fn choice(&self, arm: Arm) -> Choice {
        match arm {
            Arm::T => Choice::T,
            Arm::NT => Choice::NT,
            Arm::O => self.z_opt,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub dataset: RctDataset,
    /// Row-aligned potential outcomes, for test harnesses only.
    pub truth: Vec<PotentialOutcomes>,
}

/// Draws an `n`-row trial. Consumption columns are chosen so that the
/// welfare built with baseline differencing and no demeaning reproduces the
/// realized welfare.
pub fn generate(spec: &DgpSpec, n: usize, seed: u64) -> Result<GeneratedData> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let params = spec.welfare.params()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(spec.k);
    let mut truth = Vec::with_capacity(n);
    let mut drawn = Vec::with_capacity(n);
    for _ in 0..n {
        let po = spec.draw_unit(&mut rng, &mut x);
        let d = spec.draw_arm(&mut rng);
        let z = po.choice(d);
        let y = params.consumption_for(po.welfare(d), z)?;
        drawn.push((x.clone(), d, z, y));
        truth.push(po);
    }
    let min_y = drawn.iter().map(|r| r.3).fold(f64::INFINITY, f64::min);
    let base = spec.baseline_kwh.max((-min_y).ceil() + 1.0);
    let rows = drawn
        .into_iter()
        .enumerate()
        .map(|(i, (x, d, z, y))| Household {
            id: (i + 1).to_string(),
            x,
            d,
            z,
            y_treat: base + y,
            y_base: base,
        })
        .collect();
    Ok(GeneratedData {
        dataset: RctDataset::new(spec.schema(), rows)?,
        truth,
    })
}

pub fn write_truth_csv<W: Write>(truth: &[PotentialOutcomes], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["w_T", "w_NT", "z_opt"])?;
    for t in truth {
        w.write_record([t.w_t.to_string(), t.w_nt.to_string(), t.z_opt.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<truth csv>", e))?;
    Ok(())
}

pub fn save_truth_csv(truth: &[PotentialOutcomes], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_truth_csv(truth, std::io::BufWriter::new(file))
}

pub fn read_truth_csv<R: Read>(reader: R) -> Result<Vec<PotentialOutcomes>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["w_T", "w_NT", "z_opt"] {
        return Err(Error::MissingColumn(format!(
            "truth sidecar header must be w_T,w_NT,z_opt, got {}",
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize, name: &str| {
            let v = rec.get(c).unwrap_or("");
            v.parse::<f64>().map_err(|_| Error::Parse {
                row: (i + 1).to_string(),
                column: name.into(),
                value: v.into(),
            })
        };
        let z = rec.get(2).unwrap_or("");
        out.push(PotentialOutcomes {
            w_t: field(0, "w_T")?,
            w_nt: field(1, "w_NT")?,
            z_opt: z.parse().map_err(|_| Error::Parse {
                row: (i + 1).to_string(),
                column: "z_opt".into(),
                value: z.into(),
            })?,
        });
    }
    Ok(out)
}

pub fn load_truth_csv(path: impl AsRef<Path>) -> Result<Vec<PotentialOutcomes>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_truth_csv(file)
}

/// Mean with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl McEstimate {
    fn from_values(v: &[f64]) -> Self {
        McEstimate {
            mean: stats::mean(v),
            se: stats::std_error(v),
            n: v.len(),
        }
    }
}

pub const DEFAULT_MC_DRAWS: usize = 1_000_000;
const MC_CHUNK: usize = 50_000;

/// Average welfare of `policy` over `n_mc` fresh draws from the process,
/// using potential outcomes directly.
pub fn true_policy_welfare(
    spec: &DgpSpec,
    policy: &AssignmentPolicy,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    spec.validate()?;
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    let chunks = n_mc.div_ceil(MC_CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(stats::derive_seed(seed, c as u64));
            let len = MC_CHUNK.min(n_mc - c * MC_CHUNK);
            let mut x = Vec::with_capacity(spec.k);
            (0..len)
                .map(|_| {
                    let po = spec.draw_unit(&mut rng, &mut x);
                    Ok(po.welfare(policy.assign(&x)?))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_values(&parts.concat()))
}

/// Average realized welfare of `policy` on the rows of a generated dataset,
/// read from its potential outcomes.
pub fn sidecar_welfare(
    ds: &RctDataset,
    truth: &[PotentialOutcomes],
    policy: &AssignmentPolicy,
) -> Result<McEstimate> {
    if truth.len() != ds.len() {
        return Err(Error::Dimension {
            expected: ds.len(),
            got: truth.len(),
        });
    }
    let assigned = policy.assign_all(ds)?;
    let v: Vec<f64> = truth.iter().zip(&assigned).map(|(t, &g)| t.welfare(g)).collect();
    Ok(McEstimate::from_values(&v))
}

/// Conditional effects at one covariate value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointTruth {
    pub m_t: f64,
    pub m_nt: f64,
    /// `E[w(T) - w(NT) | x]`.
    pub cate: f64,
    /// `P(Z(O) = T | x)`.
    pub q: f64,
    /// Effect among takers; `None` when nobody takes up.
    pub cate_t: Option<f64>,
    /// Effect among non-takers; `None` when everybody takes up.
    pub cate_nt: Option<f64>,
}

impl PointTruth {
    /// `E[w(arm) | x]`.
    pub fn arm_value(&self, arm: Arm) -> f64 {
        match arm {
            Arm::T => self.m_t,
            Arm::NT => self.m_nt,
            Arm::O => self.m_nt + self.q * self.cate_t.unwrap_or(0.0),
        }
    }

    /// Best achievable conditional welfare minus that of `arm`.
    pub fn loss(&self, arm: Arm) -> f64 {
        let best = Arm::ALL
            .iter()
            .map(|&a| self.arm_value(a))
            .fold(f64::NEG_INFINITY, f64::max);
        best - self.arm_value(arm)
    }
}

/// Exact conditional effects of a process. Roy selection with Gaussian noise
/// uses closed forms; everything else integrates over the noise difference.
#[derive(Debug, Clone)]
pub struct OracleTruth {
    spec: DgpSpec,
}

/// Take-up probabilities below this are treated as an empty taker group.
const MIN_MASS: f64 = 1e-12;
const QUAD_TOL: f64 = 1e-13;

impl OracleTruth {
    pub fn new(spec: &DgpSpec) -> Result<Self> {
        spec.validate()?;
        Ok(OracleTruth { spec: spec.clone() })
    }

    pub fn spec(&self) -> &DgpSpec {
        &self.spec
    }

    pub fn at(&self, x: &[f64]) -> Result<PointTruth> {
        if x.len() != self.spec.k {
            return Err(Error::Dimension {
                expected: self.spec.k,
                got: x.len(),
            });
        }
        let m_t = self.spec.m_t.eval(x);
        let m_nt = self.spec.m_nt.eval(x);
        let c = m_t - m_nt;
        let s = self.spec.diff_scale();
        let (q, cate_t, cate_nt) = if s == 0.0 {
            let q = match &self.spec.selection {
                Selection::Roy => (c >= 0.0) as u8 as f64,
                Selection::Logistic {
                    alignment,
                    intercept,
                } => logistic(intercept.eval(x) + alignment.eval(x) * c),
            };
            (q, (q > 0.0).then_some(c), (q < 1.0).then_some(c))
        } else {
            match (&self.spec.selection, self.spec.noise) {
                (Selection::Roy, NoiseLaw::Gaussian) => roy_gaussian(c, s),
                (sel, noise) => {
                    let pi = selection_curve(sel, x, c, s);
                    let (q, t, nt) = integrate_selection(c, s, noise, pi);
                    if matches!(sel, Selection::Roy) {
                        (q, t.map(|v| v.max(0.0)), nt.map(|v| v.min(0.0)))
                    } else {
                        (q, t, nt)
                    }
                }
            }
        };
        Ok(PointTruth {
            m_t,
            m_nt,
            cate: c,
            q,
            cate_t,
            cate_nt,
        })
    }
}

fn roy_gaussian(c: f64, s: f64) -> (f64, Option<f64>, Option<f64>) {
    let t = c / s;
    let q = stats::normal_cdf(t);
    let q_not = stats::normal_cdf(-t);
    let phi = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    // takers have w(T) >= w(NT), so the clamps only absorb rounding
    let cate_t = (q > MIN_MASS).then(|| (c + s * phi / q).max(0.0));
    let cate_nt = (q_not > MIN_MASS).then(|| (c - s * phi / q_not).min(0.0));
    (q, cate_t, cate_nt)
}

/// Selection probability as a function of the standardized noise
/// difference `u = (e_T - e_NT) / s`, plus the point where it jumps or turns.
struct Curve {
    pi: Box<dyn Fn(f64) -> f64>,
    pivot: Option<f64>,
}

fn selection_curve(sel: &Selection, x: &[f64], c: f64, s: f64) -> Curve {
    match sel {
        Selection::Roy => Curve {
            pi: Box::new(move |u| if c + s * u >= 0.0 { 1.0 } else { 0.0 }),
            pivot: Some(-c / s),
        },
        Selection::Logistic {
            alignment,
            intercept,
        } => {
            let (a, b) = (alignment.eval(x), intercept.eval(x));
            Curve {
                pi: Box::new(move |u| logistic(b + a * (c + s * u))),
                pivot: (a != 0.0).then(|| -(b / a + c) / s),
            }
        }
    }
}

/// Density of `u`, the noise difference in units of its standard deviation,
/// and the half-width beyond which its mass is negligible.
fn diff_density(noise: NoiseLaw) -> (fn(f64) -> f64, f64) {
    match noise {
        NoiseLaw::Gaussian => (
            |u| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            12.0,
        ),
        // difference of two iid Laplace variables, rescaled to unit variance
        NoiseLaw::Laplace => (|u| 0.5 * (1.0 + 2.0 * u.abs()) * (-2.0 * u.abs()).exp(), 30.0),
    }
}

fn integrate_selection(
    c: f64,
    s: f64,
    noise: NoiseLaw,
    curve: Curve,
) -> (f64, Option<f64>, Option<f64>) {
    let (g, half) = diff_density(noise);
    let mut cuts = vec![-half, 0.0, half];
    if let Some(p) = curve.pivot.filter(|p| p.abs() < half) {
        cuts.push(p);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let pi = &curve.pi;
    let integral = |f: &dyn Fn(f64) -> f64| -> f64 {
        cuts.windows(2)
            .map(|w| quad::adaptive(f, w[0], w[1], QUAD_TOL))
            .sum()
    };
    let q = integral(&|u| pi(u) * g(u));
    let q_not = integral(&|u| (1.0 - pi(u)) * g(u));
    let m1 = integral(&|u| u * pi(u) * g(u));
    let m1_not = integral(&|u| u * (1.0 - pi(u)) * g(u));
    let cate_t = (q > MIN_MASS).then(|| c + s * m1 / q);
    let cate_nt = (q_not > MIN_MASS).then(|| c + s * m1_not / q_not);
    (q.clamp(0.0, 1.0), cate_t, cate_nt)
}

/// Welfare-maximizing arm at `x`:
///
/// * `O` when takers gain (`cate_T >= 0`) and non-takers lose (`cate_NT <= 0`),
/// * `T` when `cate >= 0` and non-takers gain,
/// * `NT` when `cate < 0` and takers lose,
///
/// checked in that order. A condition on an empty group holds vacuously.
pub fn oracle_assignment(truth: &OracleTruth, x: &[f64]) -> Result<Arm> {
    assign_point(&truth.at(x)?)
}

pub fn assign_point(p: &PointTruth) -> Result<Arm> {
    let holds = |v: Option<f64>, f: fn(f64) -> bool| v.is_none_or(f);
    if holds(p.cate_t, |v| v >= 0.0) && holds(p.cate_nt, |v| v <= 0.0) {
        Ok(Arm::O)
    } else if p.cate >= 0.0 && holds(p.cate_nt, |v| v > 0.0) {
        Ok(Arm::T)
    } else if p.cate < 0.0 && holds(p.cate_t, |v| v < 0.0) {
        Ok(Arm::NT)
    } else {
        Err(Error::Invariant(format!(
            "conditional effects cover no arm: {p:?}"
        )))
    }
}

mod quad {
    /// Double-exponential quadrature with recursive bisection until the
    /// reported error meets `tol`.
    pub fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn go(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
            let out = quadrature::integrate(f, a, b, tol);
            if out.error_estimate <= tol || depth >= 40 {
                return out.integral;
            }
            let mid = 0.5 * (a + b);
            go(f, a, mid, tol / 2.0, depth + 1) + go(f, mid, b, tol / 2.0, depth + 1)
        }
        if a == b {
            return 0.0;
        }
        go(f, a, b, tol, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Node;
    use crate::welfare::{build_welfare, OutcomeOptions};

    fn roy_spec() -> DgpSpec {
        DgpSpec::preset("roy").unwrap()
    }

    #[test]
    fn zero_noise_equal_means_all_take_up_under_roy() {
        let mut spec = roy_spec();
        spec.sigma = 0.0;
        spec.m_t = ScalarFn::Constant(0.0);
        let g = generate(&spec, 500, 1).unwrap();
        assert!(g.truth.iter().all(|t| t.z_opt == Choice::T));
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = DgpSpec::preset("mixed").unwrap();
        let bytes = |seed| {
            let g = generate(&spec, 300, seed).unwrap();
            let mut a = Vec::new();
            g.dataset.write_csv(&mut a).unwrap();
            write_truth_csv(&g.truth, &mut a).unwrap();
            a
        };
        assert_eq!(bytes(9), bytes(9));
        assert_ne!(bytes(9), bytes(10));
    }

    #[test]
    fn arm_shares_concentrate() {
        let g = generate(&roy_spec(), 100_000, 3).unwrap();
        let n = g.dataset.len() as f64;
        for (arm, share) in [(Arm::NT, 0.4), (Arm::T, 0.4), (Arm::O, 0.2)] {
            assert!((g.dataset.arm_count(arm) as f64 / n - share).abs() < 0.01);
        }
    }

    #[test]
    fn exclusion_restriction_and_welfare_roundtrip() {
        let spec = DgpSpec::preset("logistic").unwrap();
        let g = generate(&spec, 2000, 4).unwrap();
        let params = spec.welfare.params().unwrap();
        let w = build_welfare(
            &g.dataset,
            &params,
            OutcomeOptions {
                baseline_diff: true,
                demean: false,
            },
        );
        for ((row, t), wi) in g.dataset.rows().iter().zip(&g.truth).zip(&w.w) {
            assert_eq!(row.z, t.choice(row.d));
            let expect = t.welfare(row.d);
            assert!((wi - expect).abs() < 1e-8 * expect.abs().max(1.0), "{wi} vs {expect}");
            assert!(row.y_treat >= 0.0);
        }
    }

    #[test]
    fn truth_sidecar_roundtrip() {
        let g = generate(&roy_spec(), 50, 2).unwrap();
        let mut buf = Vec::new();
        write_truth_csv(&g.truth, &mut buf).unwrap();
        assert!(buf.starts_with(b"w_T,w_NT,z_opt\n"));
        assert_eq!(read_truth_csv(&buf[..]).unwrap(), g.truth);
    }

    #[test]
    fn mixture_identity() {
        let mut specs = vec![roy_spec(), DgpSpec::preset("logistic").unwrap(), DgpSpec::preset("mixed").unwrap()];
        let mut lap = DgpSpec::preset("mixed").unwrap();
        lap.noise = NoiseLaw::Laplace;
        specs.push(lap);
        let mut roy_lap = roy_spec();
        roy_lap.noise = NoiseLaw::Laplace;
        specs.push(roy_lap);
        for spec in specs {
            let truth = OracleTruth::new(&spec).unwrap();
            for i in 0..20 {
                for j in 0..20 {
                    let x = [(i as f64 + 0.5) / 20.0, (j as f64 + 0.5) / 20.0];
                    let p = truth.at(&x).unwrap();
                    let mix = p.q * p.cate_t.unwrap_or(0.0) + (1.0 - p.q) * p.cate_nt.unwrap_or(0.0);
                    assert!((mix - p.cate).abs() < 1e-8, "{spec:?} {x:?} {p:?}");
                }
            }
        }
    }

    #[test]
    fn roy_numeric_matches_closed_form() {
        let spec = roy_spec();
        let s = spec.diff_scale();
        for c in [-900.0, -100.0, 0.0, 37.5, 400.0, 1500.0] {
            let (q, t, nt) = roy_gaussian(c, s);
            let curve = selection_curve(&Selection::Roy, &[0.0, 0.0], c, s);
            let (q2, t2, nt2) = integrate_selection(c, s, NoiseLaw::Gaussian, curve);
            assert!((q - q2).abs() < 1e-10);
            assert!((t.unwrap() - t2.unwrap()).abs() < 1e-7);
            assert!((nt.unwrap() - nt2.unwrap()).abs() < 1e-7);
        }
    }

    #[test]
    fn roy_always_opt_in() {
        let mut spec = roy_spec();
        spec.noise = NoiseLaw::Laplace;
        for s in [roy_spec(), spec] {
            let truth = OracleTruth::new(&s).unwrap();
            for i in 0..50 {
                for j in 0..50 {
                    let x = [i as f64 / 49.0, j as f64 / 49.0];
                    assert_eq!(oracle_assignment(&truth, &x).unwrap(), Arm::O);
                }
            }
        }
    }

    #[test]
    fn full_take_up_with_positive_effect_is_not_nt() {
        let mut spec = roy_spec();
        spec.sigma = 0.0;
        spec.m_t = ScalarFn::Constant(50.0);
        let truth = OracleTruth::new(&spec).unwrap();
        let p = truth.at(&[0.2, 0.3]).unwrap();
        assert_eq!(p.q, 1.0);
        assert_ne!(assign_point(&p).unwrap(), Arm::NT);
    }

    /// Brute-force conditional arm values by a fine midpoint rule.
    fn brute_values(spec: &DgpSpec, x: &[f64]) -> [f64; 3] {
        let Selection::Logistic { alignment, intercept } = &spec.selection else {
            unreachable!()
        };
        let (a, b) = (alignment.eval(x), intercept.eval(x));
        let (mt, mnt) = (spec.m_t.eval(x), spec.m_nt.eval(x));
        let s = spec.diff_scale();
        let steps = 200_000;
        let h = 24.0 / steps as f64;
        let mut gain = 0.0;
        for i in 0..steps {
            let u = -12.0 + (i as f64 + 0.5) * h;
            let d = mt - mnt + s * u;
            gain += d * logistic(b + a * d) * (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt() * h;
        }
        [mnt, mt, mnt + gain]
    }

    #[test]
    fn adversarial_oracle_matches_brute_force() {
        let mut spec = DgpSpec::preset("logistic").unwrap();
        spec.selection = Selection::Logistic {
            alignment: ScalarFn::Constant(-0.004),
            intercept: ScalarFn::Constant(0.3),
        };
        spec.m_t = ScalarFn::Linear {
            intercept: 10.0,
            coefs: vec![400.0, 0.0],
        };
        let truth = OracleTruth::new(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let p = truth.at(&x).unwrap();
            assert!(p.cate > 0.0);
            let v = brute_values(&spec, &x);
            let best = (0..3).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
            assert_eq!(assign_point(&p).unwrap(), Arm::ALL[best], "{x:?} {v:?} {p:?}");
            for arm in Arm::ALL {
                assert!((p.arm_value(arm) - v[arm.index()]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn null_policy_welfare_zero() {
        let mut spec = roy_spec();
        spec.m_nt = ScalarFn::Constant(0.0);
        let est = true_policy_welfare(&spec, &AssignmentPolicy::Uniform(Arm::NT), 200_000, 1).unwrap();
        assert!(est.mean.abs() < 3.0 * est.se);
    }

    #[test]
    fn two_cell_welfare_closed_form() {
        let mut spec = roy_spec();
        spec.covariates = CovariateLaw::Uniform;
        spec.m_t = ScalarFn::Step {
            var: 0,
            threshold: 0.3,
            below: Box::new(ScalarFn::Constant(-200.0)),
            above: Box::new(ScalarFn::Constant(150.0)),
        };
        let tree = crate::policy::DecisionTree::new(
            spec.schema(),
            Node::split(0, 0.3, Node::Leaf(Arm::T), Node::Leaf(Arm::NT)),
        )
        .unwrap();
        let policy = AssignmentPolicy::from_tree(tree);
        let est = true_policy_welfare(&spec, &policy, 400_000, 8).unwrap();
        let exact = 0.7 * 150.0 + 0.3 * 0.0;
        assert!((est.mean - exact).abs() < 3.0 * est.se, "{est:?}");
    }

    #[test]
    fn oracle_beats_uniform_policies() {
        let spec = DgpSpec::preset("mixed").unwrap();
        let truth = OracleTruth::new(&spec).unwrap();
        let n = 40;
        let mut totals = [0.0f64; 4];
        for i in 0..n {
            for j in 0..n {
                let x = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                let p = truth.at(&x).unwrap();
                let g = assign_point(&p).unwrap();
                totals[3] += p.arm_value(g);
                for arm in Arm::ALL {
                    totals[arm.index()] += p.arm_value(arm);
                    assert!(p.arm_value(g) >= p.arm_value(arm) - 1e-9);
                }
            }
        }
        assert!(totals[3] > totals[..3].iter().cloned().fold(f64::MIN, f64::max) + 1.0);
    }

    #[test]
    fn sidecar_matches_mc_truth() {
        let spec = DgpSpec::preset("logistic").unwrap();
        let g = generate(&spec, 100_000, 12).unwrap();
        let policy = AssignmentPolicy::Uniform(Arm::O);
        let side = sidecar_welfare(&g.dataset, &g.truth, &policy).unwrap();
        let mc = true_policy_welfare(&spec, &policy, 400_000, 13).unwrap();
        let se = (side.se.powi(2) + mc.se.powi(2)).sqrt();
        assert!((side.mean - mc.mean).abs() < 3.0 * se);
    }

    #[test]
    fn config_parsing() {
        let text = r#"
k = 2
sigma = 100.0
covariates = { law = "grid", levels = 5 }
m_nt = 0.0
arm_shares = [0.5, 0.25, 0.25]

[m_t]
form = "step"
var = 1
threshold = 0.5
below = -10.0
above = { form = "linear", intercept = 1.0, coefs = [2.0] }

[selection]
model = "logistic"
alignment = 0.01
"#;
        let spec = DgpSpec::from_toml(text).unwrap();
        assert_eq!(spec.covariates, CovariateLaw::Grid { levels: 5 });
        assert_eq!(spec.m_t.eval(&[0.5, 0.7]), 2.0);
        assert_eq!(spec.m_t.eval(&[0.5, 0.2]), -10.0);
        let back = toml::to_string(&spec).unwrap();
        assert_eq!(DgpSpec::from_toml(&back).unwrap(), spec);
        assert!(DgpSpec::from_toml(&text.replace("[0.5, 0.25, 0.25]", "[0.5, 0.5, 0.5]")).is_err());
        assert!(DgpSpec::from_toml(&text.replace("var = 1", "var = 2")).is_err());
        assert!(DgpSpec::preset("nope").is_err());
    }
}
