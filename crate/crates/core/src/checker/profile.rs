use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsRow;

/// One cell of the empirical complexity table.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub passages: usize,
    pub max_rmr: u64,
    pub max_level: u32,
}

/// Maximum passage RMR per `(n, failure-density)` cell.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub cells: BTreeMap<(usize, usize), Cell>,
}

impl Profile {
    pub fn add(&mut self, rows: &[MetricsRow]) {
        for r in rows {
            let c = self.cells.entry((r.n, r.failure_density)).or_default();
            c.passages += 1;
            c.max_rmr = c.max_rmr.max(r.rmr);
            c.max_level = c.max_level.max(r.level);
        }
    }

    pub fn ns(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.cells.keys().map(|&(n, _)| n).collect();
        v.dedup();
        v
    }

    /// The F = 0 column, per n.
    pub fn failure_free_column(&self) -> Vec<(usize, u64)> {
        self.cells.iter().filter(|((_, f), _)| *f == 0).map(|(&(n, _), c)| (n, c.max_rmr)).collect()
    }

    /// Whether the F = 0 column has one value for every n.
    pub fn constant_when_failure_free(&self) -> bool {
        let col = self.failure_free_column();
        col.windows(2).all(|w| w[0].1 == w[1].1)
    }

    /// Cells whose maximum is smaller than that of a cell with smaller F at the same n.
    pub fn non_monotone(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for n in self.ns() {
            let mut best = 0;
            for (&(m, f), c) in self.cells.range((n, 0)..=(n, usize::MAX)) {
                debug_assert_eq!(m, n);
                if c.max_rmr < best {
                    out.push((n, f));
                }
                best = best.max(c.max_rmr);
            }
        }
        out
    }

    /// Rendered as CSV with columns `n,failure_density,passages,max_rmr,max_level`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,failure_density,passages,max_rmr,max_level\n");
        for (&(n, f), c) in &self.cells {
            s.push_str(&format!("{n},{f},{},{},{}\n", c.passages, c.max_rmr, c.max_level));
        }
        s
    }
}

/// `min(c̈, sqrt(F + 1), log2(n) + 1)` for one passage.
pub fn adaptive_envelope(row: &MetricsRow) -> f64 {
    let c = row.point_contention as f64;
    let f = ((row.failure_density + 1) as f64).sqrt();
    let r = (row.n as f64).log2() + 1.0;
    c.min(f).min(r)
}

/// Rows whose RMR exceeds `c * adaptive_envelope(row)`.
pub fn envelope_violations<'a>(rows: &'a [MetricsRow], c: f64) -> Vec<&'a MetricsRow> {
    rows.iter().filter(|r| r.rmr as f64 > c * adaptive_envelope(r) + 1e-9).collect()
}
