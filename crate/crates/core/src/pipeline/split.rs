//! Per-class test hold-out and train balancing.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::HeteroGraph;
use crate::temporal::FeaturizedFlow;
use crate::{Error, Result, TrafficClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub test_fraction: f64,
    pub test_cap: usize,
    pub train_target: usize,
    pub seed: u64,
    pub subclass_proportional: bool,
    /// Classes that must be present; empty means whatever the data holds.
    pub required_classes: Vec<TrafficClass>,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            test_cap: 4000,
            train_target: 20_000,
            seed: 7,
            subclass_proportional: true,
            required_classes: Vec::new(),
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if self.test_cap == 0 || self.train_target == 0 {
            return Err(Error::Config("split caps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test fraction {} outside [0, 1)", self.test_fraction)));
        }
        Ok(())
    }

    /// `min(round(fraction * n), cap)`
    pub fn test_size(&self, n: usize) -> usize {
        ((self.test_fraction * n as f64).round() as usize).min(self.test_cap).min(n)
    }
}

pub trait DatasetItem: Clone {
    fn item_id(&self) -> &str;
    fn class(&self) -> Option<TrafficClass>;
    fn subclass(&self) -> Option<&str>;
    fn mark_duplicate(&mut self);
}

impl DatasetItem for FeaturizedFlow {
    fn item_id(&self) -> &str {
        &self.flow.id
    }
    fn class(&self) -> Option<TrafficClass> {
        self.flow.label
    }
    fn subclass(&self) -> Option<&str> {
        self.flow.subclass.as_deref()
    }
    fn mark_duplicate(&mut self) {
        self.duplicate = true;
    }
}

impl DatasetItem for HeteroGraph {
    fn item_id(&self) -> &str {
        &self.id
    }
    fn class(&self) -> Option<TrafficClass> {
        self.label
    }
    fn subclass(&self) -> Option<&str> {
        None
    }
    fn mark_duplicate(&mut self) {
        self.duplicate = true;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub class: TrafficClass,
    pub available: usize,
    pub test: usize,
    pub train: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone)]
pub struct SplitOutcome<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub summary: Vec<ClassSplit>,
}

/// Largest-remainder apportionment of `total` over `weights`; ties go to
/// the lower index.
pub fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut out: Vec<usize> = weights.iter().map(|w| total * w / sum).collect();
    let mut rem: Vec<(usize, usize)> = weights.iter().enumerate().map(|(i, w)| (total * w % sum, i)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - out.iter().sum::<usize>();
    for (_, i) in rem.into_iter().take(short) {
        out[i] += 1;
    }
    out
}

/// Holds out `min(round(0.2 n), cap)` items per class for test and
/// resamples the rest to exactly `train_target`: undersampling without
/// replacement, or keeping every item and adding seeded duplicates
/// (flagged) when the class is smaller. With `subclass_proportional` both
/// draws are apportioned over subclasses by their share of the class.
pub fn split_and_balance<T: DatasetItem>(items: Vec<T>, plan: &SplitPlan) -> Result<SplitOutcome<T>> {
    plan.validate()?;
    let mut by_class: BTreeMap<TrafficClass, Vec<T>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for it in items {
        let Some(c) = it.class() else {
            return Err(Error::InvalidArgument(format!("item {} has no label", it.item_id())));
        };
        if !seen.insert(it.item_id().to_string()) {
            return Err(Error::InvalidArgument(format!("duplicate item id {}", it.item_id())));
        }
        by_class.entry(c).or_default().push(it);
    }
    for c in &plan.required_classes {
        if by_class.get(c).map_or(true, |v| v.is_empty()) {
            return Err(Error::EmptyClass(c.name().into()));
        }
    }
    let mut out = SplitOutcome {
        train: Vec::new(),
        test: Vec::new(),
        summary: Vec::new(),
    };
    for (class, mut members) in by_class {
        members.sort_by(|a, b| a.item_id().cmp(b.item_id()));
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ (0x5eed_0000 + class.index() as u64));
        let mut groups: BTreeMap<String, Vec<T>> = BTreeMap::new();
        for m in members {
            let key = if plan.subclass_proportional {
                m.subclass().unwrap_or("").to_string()
            } else {
                String::new()
            };
            groups.entry(key).or_default().push(m);
        }
        let mut groups: Vec<Vec<T>> = groups.into_values().collect();
        for g in &mut groups {
            g.shuffle(&mut rng);
        }
        let available: usize = groups.iter().map(Vec::len).sum();
        let n_test = plan.test_size(available);
        let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        let test_alloc = apportion(n_test, &sizes);
        let mut pools: Vec<Vec<T>> = Vec::with_capacity(groups.len());
        for (g, k) in groups.into_iter().zip(&test_alloc) {
            let mut g = g;
            let rest = g.split_off(*k);
            out.test.extend(g);
            pools.push(rest);
        }
        let pool_sizes: Vec<usize> = pools.iter().map(Vec::len).collect();
        let pool_total: usize = pool_sizes.iter().sum();
        let target = plan.train_target;
        let mut duplicates = 0;
        if pool_total == 0 {
            return Err(Error::EmptyClass(format!("{} (nothing left for training)", class.name())));
        }
        if pool_total >= target {
            for (p, k) in pools.into_iter().zip(apportion(target, &pool_sizes)) {
                out.train.extend(p.into_iter().take(k));
            }
        } else {
            let extra = apportion(target - pool_total, &pool_sizes);
            for (p, k) in pools.into_iter().zip(extra) {
                for _ in 0..k {
                    let mut d = p[rng.gen_range(0..p.len())].clone();
                    d.mark_duplicate();
                    out.train.push(d);
                    duplicates += 1;
                }
                out.train.extend(p);
            }
        }
        out.summary.push(ClassSplit {
            class,
            available,
            test: n_test,
            train: target,
            duplicates,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(10, &[1, 1, 1]), vec![4, 3, 3]);
        assert_eq!(apportion(0, &[5, 5]), vec![0, 0]);
        assert_eq!(apportion(7, &[0, 7]), vec![0, 7]);
        assert_eq!(apportion(3, &[]), Vec::<usize>::new());
    }

    #[test]
    fn table_sizes() {
        let plan = SplitPlan::default();
        assert_eq!(plan.test_size(1_000_000), 4000);
        assert_eq!(plan.test_size(2336), 467);
        assert_eq!(plan.test_size(5449), 1090);
    }
}
