//! Rater-to-item assignment for the evaluation study.
//!
//! Every item is dealt to `coverage` distinct raters. Raters sit on a ring
//! shuffled by the seed; each item goes to the raters with the most open
//! capacity, ties broken by ring distance from the dealing cursor, which
//! reduces to plain round-robin while loads stay level.
//!
//! Target loads come from the [`BalancePolicy`]. Under `Quota` every rater
//! but the last on the ring carries `ceil(slots / raters)` items and the last
//! one absorbs the remainder, so 49 items x 2 over 10 raters gives nine
//! raters 10 sets and one rater 8.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalancePolicy {
    /// Equal quota for all raters but the last, which takes the remainder.
    /// Falls back to `Even` when the quota would leave the last rater empty.
    #[default]
    Quota,
    /// Loads differ by at most one; lighter raters at the end of the ring.
    Even,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub item_ids: Vec<String>,
    pub rater_ids: Vec<String>,
    #[serde(default = "default_coverage")]
    pub coverage: usize,
    #[serde(default)]
    pub shuffle_seed: u64,
    #[serde(default)]
    pub balance: BalancePolicy,
}

fn default_coverage() -> usize {
    2
}

impl StudyConfig {
    pub fn new(item_ids: Vec<String>, rater_ids: Vec<String>, coverage: usize, shuffle_seed: u64) -> Self {
        Self {
            item_ids,
            rater_ids,
            coverage,
            shuffle_seed,
            balance: BalancePolicy::default(),
        }
    }

    pub fn total_slots(&self) -> usize {
        self.coverage * self.item_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StudyError {
    #[error("coverage {coverage} exceeds the {raters} available raters")]
    Infeasible { coverage: usize, raters: usize },
    #[error("coverage must be at least 1")]
    ZeroCoverage,
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    /// Rater id to the items they evaluate, in presentation order.
    pub per_rater: BTreeMap<String, Vec<String>>,
    /// Seed-shuffled rater order used for dealing.
    pub ring: Vec<String>,
    pub coverage: usize,
    pub seed: u64,
    pub balance: BalancePolicy,
}

impl AssignmentPlan {
    pub fn items_for(&self, rater_id: &str) -> Option<&[String]> {
        self.per_rater.get(rater_id).map(Vec::as_slice)
    }

    pub fn total_slots(&self) -> usize {
        self.per_rater.values().map(Vec::len).sum()
    }

    /// Sorted descending.
    pub fn load_multiset(&self) -> Vec<usize> {
        let mut loads: Vec<usize> = self.per_rater.values().map(Vec::len).collect();
        loads.sort_unstable_by(|a, b| b.cmp(a));
        loads
    }

    pub fn raters_for(&self, item_id: &str) -> Vec<&str> {
        self.ring
            .iter()
            .filter(|r| {
                self.per_rater
                    .get(r.as_str())
                    .is_some_and(|items| items.iter().any(|i| i == item_id))
            })
            .map(String::as_str)
            .collect()
    }
}

/// Per-ring-position loads for `slots` slots over `raters` raters.
pub fn target_loads(slots: usize, raters: usize, policy: BalancePolicy) -> Vec<usize> {
    if raters == 0 {
        return Vec::new();
    }
    if policy == BalancePolicy::Quota {
        let quota = slots.div_ceil(raters);
        let others = quota * (raters - 1);
        if slots > others {
            let mut loads = vec![quota; raters];
            loads[raters - 1] = slots - others;
            return loads;
        }
    }
    let base = slots / raters;
    let extra = slots % raters;
    (0..raters).map(|i| base + usize::from(i < extra)).collect()
}

fn check_unique(ids: &[String], kind: &'static str) -> Result<(), StudyError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(StudyError::DuplicateId {
                kind,
                id: id.clone(),
            });
        }
    }
    Ok(())
}

pub fn make_assignment(config: &StudyConfig) -> Result<AssignmentPlan, StudyError> {
    if config.coverage == 0 {
        return Err(StudyError::ZeroCoverage);
    }
    if config.coverage > config.rater_ids.len() {
        return Err(StudyError::Infeasible {
            coverage: config.coverage,
            raters: config.rater_ids.len(),
        });
    }
    check_unique(&config.item_ids, "item")?;
    check_unique(&config.rater_ids, "rater")?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut ring = config.rater_ids.clone();
    ring.shuffle(&mut rng);
    let n = ring.len();

    let mut remaining = target_loads(config.total_slots(), n, config.balance);
    let mut dealt: Vec<Vec<String>> = vec![Vec::new(); n];
    let mut cursor = 0usize;
    for item in &config.item_ids {
        let mut order: Vec<usize> = (0..n).filter(|&p| remaining[p] > 0).collect();
        order.sort_by_key(|&p| (core::cmp::Reverse(remaining[p]), (p + n - cursor) % n));
        // Capacities never exceed the item count, so this always has
        // `coverage` candidates.
        let chosen = &order[..config.coverage];
        for &p in chosen {
            remaining[p] -= 1;
            dealt[p].push(item.clone());
        }
        let last = chosen
            .iter()
            .copied()
            .max_by_key(|&p| (p + n - cursor) % n)
            .unwrap_or(cursor);
        cursor = (last + 1) % n;
    }

    let mut per_rater = BTreeMap::new();
    for (p, mut items) in dealt.into_iter().enumerate() {
        items.shuffle(&mut rng);
        per_rater.insert(ring[p].clone(), items);
    }
    Ok(AssignmentPlan {
        per_rater,
        ring,
        coverage: config.coverage,
        seed: config.shuffle_seed,
        balance: config.balance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Coverage,
    Duplicate,
    Balance,
    UnknownRater,
    UnknownItem,
    Config,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Coverage => "coverage",
            Rule::Duplicate => "duplicate",
            Rule::Balance => "balance",
            Rule::UnknownRater => "unknown-rater",
            Rule::UnknownItem => "unknown-item",
            Rule::Config => "config",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub ids: Vec<String>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.rule.as_str(), self.ids.join(", "), self.detail)
    }
}

impl Violation {
    fn new(rule: Rule, ids: Vec<String>, detail: String) -> Self {
        Self { rule, ids, detail }
    }
}

/// Empty iff the plan satisfies coverage, per-rater uniqueness, and the
/// balance policy's load multiset for `config`.
pub fn validate_assignment(plan: &AssignmentPlan, config: &StudyConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    if plan.coverage != config.coverage {
        out.push(Violation::new(
            Rule::Config,
            Vec::new(),
            format!("plan coverage {} != configured {}", plan.coverage, config.coverage),
        ));
    }
    let known_raters: BTreeSet<&str> = config.rater_ids.iter().map(String::as_str).collect();
    let known_items: BTreeSet<&str> = config.item_ids.iter().map(String::as_str).collect();
    let mut counts: BTreeMap<&str, usize> = config.item_ids.iter().map(|i| (i.as_str(), 0)).collect();

    for (rater, items) in &plan.per_rater {
        if !known_raters.contains(rater.as_str()) {
            out.push(Violation::new(
                Rule::UnknownRater,
                vec![rater.clone()],
                format!("rater `{rater}` is not in the study"),
            ));
        }
        let mut seen = BTreeSet::new();
        for item in items {
            if !seen.insert(item.as_str()) {
                out.push(Violation::new(
                    Rule::Duplicate,
                    vec![rater.clone(), item.clone()],
                    format!("rater `{rater}` holds `{item}` more than once"),
                ));
                continue;
            }
            match counts.get_mut(item.as_str()) {
                Some(c) => *c += 1,
                None if !known_items.contains(item.as_str()) => out.push(Violation::new(
                    Rule::UnknownItem,
                    vec![item.clone()],
                    format!("item `{item}` assigned to `{rater}` is not in the study"),
                )),
                None => {}
            }
        }
    }
    for (item, count) in &counts {
        if *count != config.coverage {
            out.push(Violation::new(
                Rule::Coverage,
                vec![(*item).to_owned()],
                format!("item `{item}` covered by {count} raters, expected {}", config.coverage),
            ));
        }
    }

    let mut loads: Vec<(usize, &str)> = config
        .rater_ids
        .iter()
        .map(|r| (plan.per_rater.get(r).map_or(0, Vec::len), r.as_str()))
        .collect();
    loads.sort_unstable_by(|a, b| b.cmp(a));
    let mut expected = target_loads(config.total_slots(), config.rater_ids.len(), config.balance);
    expected.sort_unstable_by(|a, b| b.cmp(a));
    let actual: Vec<usize> = loads.iter().map(|(l, _)| *l).collect();
    if actual != expected {
        out.push(Violation::new(
            Rule::Balance,
            loads.iter().map(|(_, r)| (*r).to_owned()).collect(),
            format!("loads {actual:?}, expected {expected:?}"),
        ));
    }
    out
}
