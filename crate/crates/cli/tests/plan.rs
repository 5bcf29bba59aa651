mod common;

use std::fs;
use std::path::Path;

use common::*;
use splitedge::planner::select_split_layer;
use splitedge_cli::config::LoadedConfig;
use splitedge_cli::plan::PlanFile;
use splitedge_cli::runner::{Overrides, Setup, Summary};

fn summary(dir: &Path) -> Summary {
    serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn predicted_bytes_match_trained_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_config("plan.toml");
    let plan_dir = dir.path().join("plan");
    ok(&["plan", "--config", s(&cfg), "--out", s(&plan_dir)]);
    let plan = PlanFile::load(&plan_dir.join("plan.json")).unwrap();
    let train_dir = dir.path().join("train");
    ok(&["train", "--config", s(&cfg), "--plan", s(&plan_dir.join("plan.json")), "--out", s(&train_dir)]);
    let sum = summary(&train_dir);
    assert_eq!(sum.cut, plan.cut);
    assert_eq!(plan.predicted_total_bytes, Some(sum.total_bytes));

    let links: Vec<(String, String, u64)> = csv::Reader::from_path(train_dir.join("links.csv"))
        .unwrap()
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[2].to_string(), r[3].to_string(), r[6].parse().unwrap())
        })
        .collect();
    for p in &plan.predicted_links {
        let trained: u64 = links.iter().filter(|l| l.0 == p.src && l.1 == p.dst).map(|l| l.2).sum();
        assert_eq!(trained, p.bytes, "{} -> {}", p.src, p.dst);
    }
}

#[test]
fn plan_for_another_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_config("plan.toml");
    let plan_dir = dir.path().join("plan");
    ok(&["plan", "--config", s(&cfg), "--out", s(&plan_dir)]);
    let out = dir.path().join("train");
    let res = bin()
        .args(["train", "--config", s(&cfg), "--seed", "99", "--plan", s(&plan_dir.join("plan.json")), "--out", s(&out)])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

const TWO_NODE: &str = r#"
seed = 2
rounds = 1

[protocol]
kind = "psl"
batch_size = 8

[model]
layers = [
  { kind = "dense", inputs = 16, outputs = 64 },
  { kind = "relu" },
  { kind = "dense", inputs = 64, outputs = 2 },
  { kind = "dense", inputs = 2, outputs = 64 },
  { kind = "relu" },
  { kind = "softmax-head", inputs = 64, classes = 3 },
]

[data]
kind = "blobs"
clients = 1
samples = 64
dim = 16

[topology]
nodes = [
  { id = "server", tier = "edge", compute_rate = 5e9 },
  { id = "client0", tier = "client", compute_rate = 2e8 },
]
links = [
  { src = "client0", dst = "server", rate = 1e6 },
  { src = "server", dst = "client0", rate = 1e6 },
]
"#;

#[test]
fn two_node_plan_is_select_split_layer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "two.toml", TWO_NODE);
    let out = dir.path().join("plan");
    ok(&["plan", "--config", s(&cfg), "--out", s(&out)]);
    let plan = PlanFile::load(&out.join("plan.json")).unwrap();

    let loaded = LoadedConfig::from_file(&cfg).unwrap();
    let setup = Setup::new(&loaded, Overrides::default()).unwrap();
    let choice = select_split_layer(&setup.split_problem()).unwrap();
    assert_eq!(plan.cut, choice.cut);
    assert_eq!(plan.candidates, choice.candidates);
    assert_eq!(plan.allocation.as_ref(), Some(&choice.allocation.allocation));
    // The bottleneck after layer 3 is the cheapest place to cut.
    assert_eq!(plan.cut, 3);
}

#[test]
fn planner_infeasibility_surfaces_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let text = TWO_NODE
        .replace("compute_rate = 5e9 }", "compute_rate = 5e9, memory_bytes = 1 }")
        .replace("compute_rate = 2e8 }", "compute_rate = 2e8, memory_bytes = 1 }");
    let cfg = write(dir.path(), "tight.toml", &text);
    let loaded = LoadedConfig::from_file(&cfg).unwrap();
    let setup = Setup::new(&loaded, Overrides::default()).unwrap();
    let core_err = select_split_layer(&setup.split_problem()).unwrap_err().to_string();
    let out = dir.path().join("plan");
    let res = bin().args(["plan", "--config", s(&cfg), "--out", s(&out)]).output().unwrap();
    assert_ne!(res.status.code(), Some(0));
    assert!(String::from_utf8(res.stderr).unwrap().contains(&core_err));
    assert!(!out.exists());
}
