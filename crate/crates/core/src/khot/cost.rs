use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::code::KHotCode;

/// Operation counts for one forward pass of one input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub multiplies: u64,
    pub shifts: u64,
    pub adds: u64,
}

impl OpCounts {
    fn accumulate(&mut self, o: &OpCounts) {
        self.multiplies += o.multiplies;
        self.shifts += o.shifts;
        self.adds += o.adds;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SiteKind {
    /// `y = a * x + b` per channel with real multipliers.
    Affine { channels: usize, spatial: usize },
    /// `y = a * x + b` per channel with K-hot multipliers.
    KHotAffine {
        codes: Vec<KHotCode>,
        spatial: usize,
    },
    /// Element-wise addition such as a residual.
    Add { elements: usize },
    /// Dense `[m, k] x [k, n]` product.
    MatMul { m: usize, k: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSite {
    pub name: String,
    #[serde(flatten)]
    pub kind: SiteKind,
}

impl CostSite {
    pub fn new(name: impl Into<String>, kind: SiteKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn counts(&self) -> OpCounts {
        let n = |v: usize| v as u64;
        match &self.kind {
            SiteKind::Affine { channels, spatial } => OpCounts {
                multiplies: n(channels * spatial),
                shifts: 0,
                adds: n(channels * spatial),
            },
            SiteKind::KHotAffine { codes, spatial } => {
                let mut per = OpCounts::default();
                for c in codes {
                    let terms = n(c.positions.len());
                    per.shifts += terms;
                    // combining the terms, then the bias
                    per.adds += terms.saturating_sub(1) + 1;
                }
                OpCounts {
                    multiplies: 0,
                    shifts: per.shifts * n(*spatial),
                    adds: per.adds * n(*spatial),
                }
            }
            SiteKind::Add { elements } => OpCounts {
                adds: n(*elements),
                ..OpCounts::default()
            },
            SiteKind::MatMul { m, k, n: cols } => OpCounts {
                multiplies: n(m * k * cols),
                shifts: 0,
                adds: n(m * k.saturating_sub(1) * cols),
            },
        }
    }

    /// Scalar products performed at this site, if it is an affine site.
    pub fn products(&self) -> Option<u64> {
        match &self.kind {
            SiteKind::Affine { channels, spatial } => Some((channels * spatial) as u64),
            SiteKind::KHotAffine { codes, spatial } => Some((codes.len() * spatial) as u64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub multiplies: u64,
    pub shifts: u64,
    pub adds: u64,
    pub per_site: BTreeMap<String, OpCounts>,
}

impl CostReport {
    pub fn totals(&self) -> OpCounts {
        OpCounts {
            multiplies: self.multiplies,
            shifts: self.shifts,
            adds: self.adds,
        }
    }
}

/// Static counts of a model described by its sites.
pub fn cost_report(sites: &[CostSite]) -> CostReport {
    let mut per_site: BTreeMap<String, OpCounts> = BTreeMap::new();
    let mut total = OpCounts::default();
    for s in sites {
        let c = s.counts();
        per_site.entry(s.name.clone()).or_default().accumulate(&c);
        total.accumulate(&c);
    }
    CostReport {
        multiplies: total.multiplies,
        shifts: total.shifts,
        adds: total.adds,
        per_site,
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self
            .per_site
            .keys()
            .map(String::len)
            .chain(["site".len(), "total".len()])
            .max()
            .unwrap_or(5);
        writeln!(
            f,
            "{:<w$}  {:>12}  {:>12}  {:>12}",
            "site", "multiplies", "shifts", "adds"
        )?;
        for (name, c) in &self.per_site {
            writeln!(
                f,
                "{name:<w$}  {:>12}  {:>12}  {:>12}",
                c.multiplies, c.shifts, c.adds
            )?;
        }
        write!(
            f,
            "{:<w$}  {:>12}  {:>12}  {:>12}",
            "total", self.multiplies, self.shifts, self.adds
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::khot::khot_encode;

    fn two_hot(c: usize) -> Vec<KHotCode> {
        (0..c)
            .map(|j| khot_encode(0.37 + 0.91 * j as f64, 8, 4.0, 2).unwrap())
            .collect()
    }

    #[test]
    fn examples() {
        let r = cost_report(&[CostSite::new(
            "bn",
            SiteKind::KHotAffine {
                codes: two_hot(64),
                spatial: 1,
            },
        )]);
        assert_eq!(r.multiplies, 0);
        assert!(r.shifts <= 128);
        assert!(r.adds <= 128);

        let dense = cost_report(&[CostSite::new(
            "bn",
            SiteKind::Affine {
                channels: 64,
                spatial: 3,
            },
        )]);
        assert_eq!(dense.multiplies, 64 * 3);

        let empty = cost_report(&[]);
        assert_eq!(empty, CostReport::default());
        assert_eq!(empty.totals(), OpCounts::default());
    }

    #[test]
    fn json_and_table() {
        let r = cost_report(&[
            CostSite::new("fc", SiteKind::MatMul { m: 1, k: 2, n: 3 }),
            CostSite::new("res", SiteKind::Add { elements: 3 }),
        ]);
        assert_eq!(r.multiplies, 6);
        assert_eq!(r.adds, 3 + 3);
        let back: CostReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let table = r.to_string();
        assert_eq!(table.lines().count(), 4);
        assert!(table.lines().last().unwrap().starts_with("total"));
    }
}
