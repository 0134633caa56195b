use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::lowering::Provenance;
use crate::model_ir::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageReport {
    pub label: String,
    pub cycles: u64,
    /// Makespan of the stage's compute schedule.
    pub compute_span: u64,
    /// Cycles during which at least one PE was busy.
    pub busy: u64,
    pub busy_by_provenance: BTreeMap<Provenance, u64>,
    pub dm_cycles: u64,
    /// DM cycles not hidden behind compute.
    pub dm_extra: u64,
    pub memory_exposed: u64,
    pub tasks: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Breakdown {
    pub cnn: u64,
    pub gnn: u64,
    pub dm: u64,
    pub other: u64,
    pub memory_exposed: u64,
}

impl Breakdown {
    pub fn total(&self) -> u64 {
        self.cnn + self.gnn + self.dm + self.other + self.memory_exposed
    }

    pub fn rows(&self) -> Vec<BreakdownRow> {
        let total = self.total();
        let pct = |c: u64| if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 };
        [
            ("CNN", self.cnn),
            ("GNN", self.gnn),
            ("DM", self.dm),
            ("Other", self.other),
            ("Memory-exposed", self.memory_exposed),
            ("Total", total),
        ]
        .into_iter()
        .map(|(category, cycles)| BreakdownRow {
            category,
            cycles,
            percent: pct(cycles),
        })
        .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BreakdownRow {
    pub category: &'static str,
    pub cycles: u64,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub total_cycles: u64,
    pub breakdown: Breakdown,
    pub stages: Vec<StageReport>,
    pub pe_busy: Vec<u64>,
    pub instructions: usize,
    #[serde(skip)]
    pub outputs: BTreeMap<String, Tensor>,
}

impl SimReport {
    pub(super) fn empty(n_pe: usize) -> Self {
        Self {
            total_cycles: 0,
            breakdown: Breakdown::default(),
            stages: Vec::new(),
            pe_busy: vec![0; n_pe],
            instructions: 0,
            outputs: BTreeMap::new(),
        }
    }

    pub(super) fn finalize(&mut self) {
        let mut b = Breakdown::default();
        for s in &self.stages {
            for (p, c) in &s.busy_by_provenance {
                match p {
                    Provenance::Cnn => b.cnn += c,
                    Provenance::Gnn => b.gnn += c,
                    Provenance::Dm => b.dm += c,
                    Provenance::Other => b.other += c,
                }
            }
            b.dm += s.dm_extra;
            b.memory_exposed += s.memory_exposed;
        }
        self.breakdown = b;
    }

    /// Fraction of PE-cycles spent computing.
    pub fn utilization(&self) -> f64 {
        let cap = self.total_cycles * self.pe_busy.len() as u64;
        if cap == 0 {
            0.0
        } else {
            self.pe_busy.iter().sum::<u64>() as f64 / cap as f64
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Splits `total` in proportion to `weights`, assigning leftover units to
/// the largest remainders (earlier keys on ties).
pub(super) fn largest_remainder(total: u64, weights: &BTreeMap<Provenance, u64>) -> BTreeMap<Provenance, u64> {
    let sum: u64 = weights.values().sum();
    if sum == 0 {
        return BTreeMap::new();
    }
    let mut out = BTreeMap::new();
    let mut rems = Vec::new();
    let mut given = 0u64;
    for (p, w) in weights {
        let num = total as u128 * *w as u128;
        let q = (num / sum as u128) as u64;
        rems.push((num % sum as u128, *p));
        out.insert(*p, q);
        given += q;
    }
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, p) in rems.into_iter().take((total - given) as usize) {
        *out.get_mut(&p).expect("present") += 1;
    }
    out
}

/// Cycle breakdown as `text`, `csv` or `json`.
pub fn report_breakdown(r: &SimReport, format: &str) -> Option<String> {
    let rows = r.breakdown.rows();
    match format {
        "text" => {
            let mut s = format!("{:<16} {:>14} {:>8}\n", "category", "cycles", "%");
            for row in &rows {
                let _ = writeln!(s, "{:<16} {:>14} {:>7.2}%", row.category, row.cycles, row.percent);
            }
            Some(s)
        }
        "csv" => {
            let mut s = String::from("category,cycles,percent\n");
            for row in &rows {
                let _ = writeln!(s, "{},{},{:.4}", row.category, row.cycles, row.percent);
            }
            Some(s)
        }
        "json" => Some(serde_json::to_string_pretty(&rows).expect("rows serialize")),
        _ => None,
    }
}
