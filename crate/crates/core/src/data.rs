//! Three-arm RCT records: arm labels, household rows, CSV ingestion and
//! sample-fraction propensities.
//!
//! The CSV layout is `id,arm,choice,y_treat,y_base,<covariate...>`. Arm
//! tokens are `T`, `NT`, `O`; choice tokens are `T`, `NT` (both parsed
//! case-insensitively). Covariate columns are located by name, so their
//! order in the file does not matter. Unknown columns are ignored.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assignment arm. The derived order `NT < T < O` is the tie-breaking order
/// used everywhere a deterministic choice between arms is needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    /// Compulsory no-treatment.
    NT,
    /// Compulsory treatment.
    T,
    /// Opt-in treatment.
    O,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::NT, Arm::T, Arm::O];

    pub fn index(self) -> usize {
        match self {
            Arm::NT => 0,
            Arm::T => 1,
            Arm::O => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::NT => "NT",
            Arm::T => "T",
            Arm::O => "O",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NT" => Ok(Arm::NT),
            "T" => Ok(Arm::T),
            "O" => Ok(Arm::O),
            _ => Err(Error::InvalidArgument(format!("unknown arm token `{s}`"))),
        }
    }
}

/// Realized take-up decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Choice {
    NT,
    T,
}

impl Choice {
    pub fn as_str(self) -> &'static str {
        match self {
            Choice::NT => "NT",
            Choice::T => "T",
        }
    }

    pub fn is_taken(self) -> bool {
        self == Choice::T
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Choice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NT" => Ok(Choice::NT),
            "T" => Ok(Choice::T),
            _ => Err(Error::InvalidArgument(format!("unknown choice token `{s}`"))),
        }
    }
}

/// One experimental unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Household {
    pub id: String,
    /// Covariates ordered as the dataset schema.
    pub x: Vec<f64>,
    /// Assigned arm.
    pub d: Arm,
    /// Realized take-up.
    pub z: Choice,
    /// Mean treatment-period peak consumption (kWh).
    pub y_treat: f64,
    /// Mean baseline-period peak consumption (kWh).
    pub y_base: f64,
}

impl Household {
    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidRow {
            row: self.id.clone(),
            reason,
        };
        if self.x.len() != k {
            return Err(bad(format!("expected {k} covariates, got {}", self.x.len())));
        }
        match (self.d, self.z) {
            (Arm::T, Choice::NT) => {
                return Err(bad("arm T with choice NT (no opt-out in compulsory arm)".into()))
            }
            (Arm::NT, Choice::T) => {
                return Err(bad("arm NT with choice T (no opt-in in compulsory arm)".into()))
            }
            _ => {}
        }
        if !(self.y_treat.is_finite() && self.y_treat >= 0.0) {
            return Err(bad(format!("y_treat must be finite and >= 0, got {}", self.y_treat)));
        }
        if !(self.y_base.is_finite() && self.y_base >= 0.0) {
            return Err(bad(format!("y_base must be finite and >= 0, got {}", self.y_base)));
        }
        if let Some(v) = self.x.iter().find(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite covariate {v}")));
        }
        Ok(())
    }
}

/// Immutable, validated collection of households sharing one covariate schema.
#[derive(Debug, Clone, PartialEq)]
pub struct RctDataset {
    schema: Vec<String>,
    rows: Vec<Household>,
    arm_counts: [usize; 3],
}

impl RctDataset {
    pub fn new(schema: Vec<String>, rows: Vec<Household>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty);
        }
        let k = schema.len();
        let mut arm_counts = [0usize; 3];
        for row in &rows {
            row.validate(k)?;
            arm_counts[row.d.index()] += 1;
        }
        Ok(RctDataset {
            schema,
            rows,
            arm_counts,
        })
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn rows(&self) -> &[Household] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Covariate dimension.
    pub fn dim(&self) -> usize {
        self.schema.len()
    }

    pub fn arm_count(&self, arm: Arm) -> usize {
        self.arm_counts[arm.index()]
    }

    pub fn arm_counts(&self) -> [(Arm, usize); 3] {
        Arm::ALL.map(|a| (a, self.arm_count(a)))
    }

    pub fn arms(&self) -> Vec<Arm> {
        self.rows.iter().map(|r| r.d).collect()
    }

    pub fn choices(&self) -> Vec<Choice> {
        self.rows.iter().map(|r| r.z).collect()
    }

    pub fn covariates(&self) -> Vec<&[f64]> {
        self.rows.iter().map(|r| r.x.as_slice()).collect()
    }

    /// Values of covariate `k` in row order.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.x[k]).collect()
    }

    /// Dataset restricted to the given rows (in the given order).
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let rows = idx.iter().map(|&i| self.rows[i].clone()).collect();
        RctDataset::new(self.schema.clone(), rows)
    }

    /// Serializes to the canonical CSV layout.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id", "arm", "choice", "y_treat", "y_base"];
        header.extend(self.schema.iter().map(String::as_str));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.id.clone(),
                row.d.to_string(),
                row.z.to_string(),
                row.y_treat.to_string(),
                row.y_base.to_string(),
            ];
            rec.extend(row.x.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &[String]) -> Result<RctDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Parses the CSV layout from any reader.
pub fn read_csv<R: Read>(reader: R, schema: &[String]) -> Result<RctDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let position: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    let col = |name: &str| {
        position
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (c_id, c_arm, c_choice, c_yt, c_yb) =
        (col("id")?, col("arm")?, col("choice")?, col("y_treat")?, col("y_base")?);
    let c_x = schema.iter().map(|s| col(s)).collect::<Result<Vec<_>>>()?;

    let mut used = vec![false; header.len()];
    for &c in [c_id, c_arm, c_choice, c_yt, c_yb].iter().chain(&c_x) {
        used[c] = true;
    }
    for (h, _) in header.iter().zip(&used).filter(|(_, u)| !**u) {
        log::warn!("ignoring unknown column `{h}`");
    }

    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(c_id).unwrap_or("").to_string();
        let row_label = if id.is_empty() {
            format!("#{}", line + 1)
        } else {
            id.clone()
        };
        let field = |c: usize, name: &str| -> Result<&str> {
            match rec.get(c) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::InvalidRow {
                    row: row_label.clone(),
                    reason: format!("missing value in column `{name}`"),
                }),
            }
        };
        let num = |c: usize, name: &str| -> Result<f64> {
            let v = field(c, name)?;
            v.parse::<f64>().map_err(|_| Error::Parse {
                row: row_label.clone(),
                column: name.to_string(),
                value: v.to_string(),
            })
        };
        field(c_id, "id")?;
        let d: Arm = field(c_arm, "arm")?.parse().map_err(|_| Error::Parse {
            row: row_label.clone(),
            column: "arm".into(),
            value: rec.get(c_arm).unwrap_or("").into(),
        })?;
        let z: Choice = field(c_choice, "choice")?.parse().map_err(|_| Error::Parse {
            row: row_label.clone(),
            column: "choice".into(),
            value: rec.get(c_choice).unwrap_or("").into(),
        })?;
        let x = c_x
            .iter()
            .zip(schema)
            .map(|(&c, name)| num(c, name))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Household {
            id,
            x,
            d,
            z,
            y_treat: num(c_yt, "y_treat")?,
            y_base: num(c_yb, "y_base")?,
        });
    }
    RctDataset::new(schema.to_vec(), rows)
}

/// Assignment probabilities per arm, indexed by [`Arm::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Propensities([f64; 3]);

impl Propensities {
    pub fn new(nt: f64, t: f64, o: f64) -> Result<Self> {
        let p = [nt, t, o];
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("invalid propensities {p:?}")));
        }
        Ok(Propensities(p))
    }

    pub fn get(&self, arm: Arm) -> f64 {
        self.0[arm.index()]
    }

    /// Fails if `arm` cannot be weighted (zero propensity).
    pub fn require(&self, arm: Arm) -> Result<f64> {
        let p = self.get(arm);
        if p > 0.0 {
            Ok(p)
        } else {
            Err(Error::EmptyArm(arm))
        }
    }
}

/// `n_j / n` for each arm; every arm must be observed.
pub fn sample_propensities(ds: &RctDataset) -> Result<Propensities> {
    let n = ds.len();
    if n == 0 {
        return Err(Error::Empty);
    }
    for arm in Arm::ALL {
        if ds.arm_count(arm) == 0 {
            return Err(Error::EmptyArm(arm));
        }
    }
    Ok(Propensities(
        Arm::ALL.map(|a| ds.arm_count(a) as f64 / n as f64),
    ))
}
