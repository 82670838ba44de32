//! Welfare-gain tables in the layout of the published results.

use serde::Serialize;
use triarm::stats;
use triarm::welfare::WelfareGain;

#[derive(Debug, Clone, Serialize)]
pub struct GainRow {
    pub policy: String,
    /// Bias-corrected estimate; `None` for the reference row itself.
    pub corrected: Option<WelfareGain>,
    pub naive: Option<WelfareGain>,
}

impl GainRow {
    pub fn reference(label: &str) -> Self {
        GainRow {
            policy: label.to_string(),
            corrected: None,
            naive: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GainTable {
    pub title: String,
    pub rows: Vec<GainRow>,
    /// Index of the first comparison row (rows before it are relative to
    /// uniform no-treatment).
    pub comparisons_from: usize,
    pub shares: Vec<(String, String)>,
}

const HEADER: [&str; 5] = ["Policy", "Est. Welfare Gain", "95 % CI", "Naive Gain", "Naive 95 % CI"];

fn cells(g: &Option<WelfareGain>) -> (String, String) {
    match g {
        None => ("0.0".into(), "---".into()),
        Some(g) => {
            let (lo, hi) = stats::ci95(g.gain, g.se);
            (format!("{:.1}", g.gain), format!("( {lo:.1} , {hi:.1} )"))
        }
    }
}

impl GainTable {
    fn grid(&self) -> Vec<[String; 5]> {
        self.rows
            .iter()
            .map(|r| {
                let (c, cci) = cells(&r.corrected);
                let (n, nci) = cells(&r.naive);
                [r.policy.clone(), c, cci, n, nci]
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = HEADER.join("\t");
        out.push('\n');
        for row in self.grid() {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let grid = self.grid();
        let mut width = HEADER.map(str::len);
        for row in &grid {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cols: &[String]| {
            let mut s = format!("{:<w$}", cols[0], w = width[0]);
            for (c, w) in cols.iter().zip(width).skip(1) {
                s.push_str(&format!("  {c:>w$}"));
            }
            s.trim_end().to_string()
        };
        let rule = "-".repeat(width.iter().sum::<usize>() + 2 * (width.len() - 1));
        let mut out = format!("{}\n{rule}\n", self.title);
        out.push_str(&line(&HEADER.map(String::from)));
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        for (i, row) in grid.iter().enumerate() {
            if i == self.comparisons_from && i > 0 {
                out.push_str(&rule);
                out.push('\n');
            }
            out.push_str(&line(row));
            out.push('\n');
        }
        out.push_str(&rule);
        out.push('\n');
        for (name, share) in &self.shares {
            out.push_str(&format!("{name}: {share}\n"));
        }
        out
    }
}
