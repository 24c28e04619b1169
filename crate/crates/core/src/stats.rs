//! Descriptive aggregation over decision records.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use core::fmt;

use serde::Serialize;

use crate::record::DecisionRecord;
use crate::scenario::Scenario;
use crate::sim::Outcome;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AggregateStats {
    pub total: usize,
    /// Keyed by the outcome's log form (`group:<id>`, `timeout`).
    pub by_outcome: BTreeMap<String, usize>,
    /// Group outcomes in scenarios whose groups differ in size.
    pub unequal_group_decisions: usize,
    /// Of those, how many hit a group strictly smaller than the largest
    /// other group of the scenario.
    pub spared_larger_group: usize,
    /// `spared_larger_group / unequal_group_decisions`; absent when there
    /// were no such decisions.
    pub spared_larger_group_rate: Option<f64>,
    /// Each trait counted once per hit member carrying it.
    pub by_trait: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StatsError {
    UnknownTestNum(u32),
    UnknownGroup { test_num: u32, group_id: u32 },
}

impl fmt::Display for StatsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatsError::UnknownTestNum(n) => write!(f, "UNKNOWN_TEST_NUM: no scenario with test_num {n}"),
            StatsError::UnknownGroup { test_num, group_id } => {
                write!(f, "UNKNOWN_GROUP: scenario {test_num} has no group {group_id}")
            }
        }
    }
}

pub fn aggregate_stats<'a>(
    records: impl IntoIterator<Item = &'a DecisionRecord>,
    scenarios: &[Scenario],
) -> Result<AggregateStats, StatsError> {
    let mut stats = AggregateStats::default();
    for r in records {
        let scenario = scenarios
            .iter()
            .find(|s| s.test_num == r.test_num)
            .ok_or(StatsError::UnknownTestNum(r.test_num))?;
        stats.total += 1;
        *stats.by_outcome.entry(r.outcome.to_string()).or_default() += 1;

        let Outcome::Group(hit) = r.outcome else {
            continue;
        };
        if !scenario.groups.contains_key(&hit) {
            return Err(StatsError::UnknownGroup {
                test_num: r.test_num,
                group_id: hit,
            });
        }
        let sizes: BTreeMap<u32, usize> = scenario
            .groups
            .keys()
            .map(|&g| (g, scenario.group_size(g)))
            .collect();
        let unequal = sizes.values().min() != sizes.values().max();
        if unequal {
            stats.unequal_group_decisions += 1;
            let largest_other = sizes
                .iter()
                .filter(|(&g, _)| g != hit)
                .map(|(_, &n)| n)
                .max()
                .unwrap_or(0);
            if sizes[&hit] < largest_other {
                stats.spared_larger_group += 1;
            }
        }
        for member in scenario.group_members(hit) {
            for t in member.attributes.iter().flat_map(|a| a.traits.iter()) {
                *stats.by_trait.entry(t.clone()).or_default() += 1;
            }
        }
    }
    if stats.unequal_group_decisions > 0 {
        stats.spared_larger_group_rate =
            Some(stats.spared_larger_group as f64 / stats.unequal_group_decisions as f64);
    }
    Ok(stats)
}
