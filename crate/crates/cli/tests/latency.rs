mod common;

use std::collections::BTreeMap;

use common::*;

type Rows = BTreeMap<(usize, String), (f64, u64)>;

fn rows(dir: &std::path::Path) -> Rows {
    csv::Reader::from_path(dir.join("latency.csv"))
        .unwrap()
        .records()
        .map(|r| {
            let r = r.unwrap();
            ((r[1].parse().unwrap(), r[2].to_string()), (r[6].parse().unwrap(), r[7].parse().unwrap()))
        })
        .collect()
}

fn run(cfg: &std::path::Path) -> Rows {
    let dir = tempfile::tempdir().unwrap();
    ok(&["latency", "--config", s(cfg), "--out", s(dir.path())]);
    rows(dir.path())
}

const ARCHS: [&str; 3] = ["user_edge_cloud", "user_edge", "user_cloud"];

#[test]
fn hierarchy_wins_at_the_largest_size() {
    let r = run(&repo_config("three_tier.toml"));
    let largest = r.keys().map(|k| k.0).max().unwrap();
    let t = |a: &str| r[&(largest, a.to_string())].0;
    assert!(t("user_edge_cloud") <= t("user_edge"));
    assert!(t("user_edge_cloud") <= t("user_cloud"));
}

#[test]
fn doubling_the_dataset_doubles_smashed_bytes() {
    let r = run(&repo_config("three_tier.toml"));
    let sizes: Vec<usize> = r.keys().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    for w in sizes.windows(2) {
        assert_eq!(w[1], 2 * w[0]);
        for a in ARCHS {
            assert_eq!(r[&(w[1], a.to_string())].1, 2 * r[&(w[0], a.to_string())].1, "{a} at {}", w[1]);
        }
    }
}

#[test]
fn free_links_leave_only_compute() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(repo_config("three_tier.toml"))
        .unwrap()
        .replace("total_hz = 70e6", "link_rate = inf")
        .replace("edge_cloud_fraction = 0.05", "edge_cloud_rate = inf");
    let cfg = write(dir.path(), "free.toml", &text);
    let r = run(&cfg);
    for ((size, arch), (total, _)) in &r {
        assert!(total.is_finite() && *total > 0.0);
        // With nothing to transmit, the cloud is the fastest processor and
        // every plan runs all layers off the weak clients.
        if arch != "user_edge" {
            assert!(*total <= r[&(*size, "user_edge".to_string())].0, "{arch} at {size}");
        }
    }
    // Payload size no longer matters: 8-bit smashed data changes bytes only.
    let small = write(dir.path(), "free8.toml", &format!("{text}\n[compression]\nactivation_bits = 8\n"));
    let q = run(&small);
    for (k, (total, bytes)) in &r {
        assert_eq!(q[k].0, *total, "{k:?}");
        assert!(q[k].1 < *bytes, "{k:?}");
    }
    // With real links the same change moves the two-tier user-cloud plan.
    let finite = std::fs::read_to_string(repo_config("three_tier.toml")).unwrap();
    let base = run(&repo_config("three_tier.toml"));
    let q8 = run(&write(dir.path(), "three_tier8.toml", &format!("{finite}\n[compression]\nactivation_bits = 8\n")));
    let key = (1600, "user_cloud".to_string());
    assert!(q8[&key].0 < base[&key].0);
}

#[test]
fn two_tier_topology_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(repo_config("three_tier.toml")).unwrap().replace("cloud_rate = 20e9\n", "");
    let cfg = write(dir.path(), "two.toml", &text);
    let out = dir.path().join("out");
    let res = bin().args(["latency", "--config", s(&cfg), "--out", s(&out)]).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}
