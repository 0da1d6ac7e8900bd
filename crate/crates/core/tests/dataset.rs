mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use common::{ip, packet};
use hetnid::flow::{MacAddr, Protocol};
use hetnid::pipeline::labeling::{decide, LabelDecision, DEFAULT_ATTACKER_MACS};
use hetnid::pipeline::split::DatasetItem;
use hetnid::pipeline::{filter_and_label, split_and_balance, LabelingConfig, SplitPlan};
use hetnid::{FlowKey, FlowRecord, TrafficClass};

#[derive(Debug, Clone)]
struct Item {
    id: String,
    class: TrafficClass,
    subclass: String,
    dup: bool,
}

impl DatasetItem for Item {
    fn item_id(&self) -> &str {
        &self.id
    }
    fn class(&self) -> Option<TrafficClass> {
        Some(self.class)
    }
    fn subclass(&self) -> Option<&str> {
        Some(&self.subclass)
    }
    fn mark_duplicate(&mut self) {
        self.dup = true;
    }
}

/// Items for classes 0..sizes.len(), each split over the given subclass sizes.
fn items(sizes: &[Vec<usize>]) -> Vec<Item> {
    let mut out = Vec::new();
    for (c, subs) in sizes.iter().enumerate() {
        for (s, n) in subs.iter().enumerate() {
            for i in 0..*n {
                out.push(Item {
                    id: format!("c{c}-s{s}-{i}"),
                    class: TrafficClass::from_index(c).unwrap(),
                    subclass: format!("sub{s}"),
                    dup: false,
                });
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_counts_and_disjointness(
        sizes in prop::collection::vec(prop::collection::vec(1usize..120, 1..4), 1..5),
        cap in 1usize..30,
        target in 1usize..150,
        seed in any::<u64>(),
    ) {
        prop_assume!(sizes.iter().all(|s| {
            let n: usize = s.iter().sum();
            n > (((n as f64) * 0.2).round() as usize).min(cap)
        }));
        let plan = SplitPlan { test_cap: cap, train_target: target, seed, ..SplitPlan::default() };
        let out = split_and_balance(items(&sizes), &plan).unwrap();
        let test_ids: BTreeSet<&str> = out.test.iter().map(|i| i.id.as_str()).collect();
        prop_assert_eq!(test_ids.len(), out.test.len());
        prop_assert!(out.train.iter().all(|i| !test_ids.contains(i.id.as_str())));
        for (c, subs) in sizes.iter().enumerate() {
            let class = TrafficClass::from_index(c).unwrap();
            let n: usize = subs.iter().sum();
            let want_test = (((n as f64) * 0.2).round() as usize).min(cap);
            let test: Vec<&Item> = out.test.iter().filter(|i| i.class == class).collect();
            let train: Vec<&Item> = out.train.iter().filter(|i| i.class == class).collect();
            prop_assert_eq!(test.len(), want_test);
            prop_assert_eq!(train.len(), target);
            let originals = train.iter().filter(|i| !i.dup).count();
            prop_assert_eq!(originals, target.min(n - want_test));
            // Each subclass gets its proportional share of the test set,
            // rounded one way or the other.
            for (s, k) in subs.iter().enumerate() {
                let got = test.iter().filter(|i| i.subclass == format!("sub{s}")).count() as f64;
                let exact = want_test as f64 * *k as f64 / n as f64;
                prop_assert!((got - exact).abs() < 1.0, "sub{} got {} exact {}", s, got, exact);
            }
        }
    }

    #[test]
    fn split_is_deterministic_per_seed(seed in any::<u64>()) {
        let sizes = vec![vec![30, 10], vec![50]];
        let plan = SplitPlan { test_cap: 5, train_target: 40, seed, ..SplitPlan::default() };
        let a = split_and_balance(items(&sizes), &plan).unwrap();
        let b = split_and_balance(items(&sizes), &plan).unwrap();
        let ids = |v: &[Item]| v.iter().map(|i| (i.id.clone(), i.dup)).collect::<Vec<_>>();
        prop_assert_eq!(ids(&a.train), ids(&b.train));
        prop_assert_eq!(ids(&a.test), ids(&b.test));
    }
}

#[test]
fn missing_required_class_is_an_error() {
    let plan = SplitPlan {
        required_classes: vec![TrafficClass::Mirai],
        ..SplitPlan::default()
    };
    let err = split_and_balance(items(&[vec![10]]), &plan).unwrap_err();
    assert!(matches!(err, hetnid::Error::EmptyClass(_)));
}

const CAPTURES: [(&str, Option<TrafficClass>); 5] = [
    ("BenignTraffic3.pcap", Some(TrafficClass::Benign)),
    ("DDoS-SYN_Flood2.pcap", Some(TrafficClass::DDoS)),
    ("DictionaryBruteForce.pcap", Some(TrafficClass::Bruteforce)),
    ("VulnerabilityScan1.pcap", Some(TrafficClass::Recon)),
    ("holiday-photos.pcap", None),
];

proptest! {
    #[test]
    fn mac_filter_partitions_flows(picks in prop::collection::vec((0usize..5, 0usize..12, 0usize..12, any::<bool>()), 1..200)) {
        let attackers: Vec<MacAddr> = DEFAULT_ATTACKER_MACS.iter().map(|m| m.parse().unwrap()).collect();
        let mac = |k: usize| if k < 9 { attackers[k] } else { MacAddr([2, 0, 0, 0, 0, k as u8]) };
        let mut flows = Vec::new();
        let mut expected = BTreeMap::new();
        for (i, (cap, src, dst, has_mac)) in picks.iter().enumerate() {
            let p = packet(i as u64, (ip(1), 1000), (ip(2), 80), Protocol::Tcp, 0x02, Vec::new());
            let mut f = FlowRecord::from_packets(FlowKey::from_packet(&p), vec![p]);
            f.id = format!("f{i}");
            f.capture = Some(CAPTURES[*cap].0.into());
            f.src_mac = has_mac.then(|| mac(*src));
            f.dst_mac = Some(mac(*dst));
            let want = match (CAPTURES[*cap].1, has_mac) {
                (None, _) | (_, false) => LabelDecision::Quarantined,
                (Some(c), true) => {
                    let hit = *src < 9 || *dst < 9;
                    match (c.is_attack(), hit) {
                        (true, true) => LabelDecision::RetainedAttack,
                        (false, false) => LabelDecision::RetainedBenign,
                        _ => LabelDecision::Dropped,
                    }
                }
            };
            prop_assert_eq!(decide(&f, &LabelingConfig::default()).0, want);
            expected.insert(f.id.clone(), (want, CAPTURES[*cap].1));
            flows.push(f);
        }
        let n = flows.len();
        let out = filter_and_label(flows, &LabelingConfig::default());
        let c = &out.counts;
        prop_assert_eq!(c.retained_attack + c.retained_benign + c.dropped + c.quarantined, n);
        prop_assert_eq!(out.retained.len() + out.dropped.len() + out.quarantined.len(), n);
        for f in &out.retained {
            let (want, class) = expected[&f.id];
            prop_assert!(matches!(want, LabelDecision::RetainedAttack | LabelDecision::RetainedBenign));
            prop_assert_eq!(f.label, class);
        }
        for f in &out.dropped {
            prop_assert_eq!(expected[&f.id].0, LabelDecision::Dropped);
            prop_assert_eq!(f.label, None);
        }
        for f in &out.quarantined {
            prop_assert_eq!(expected[&f.id].0, LabelDecision::Quarantined);
        }
    }
}
