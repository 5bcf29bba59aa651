//! The `plan` command and the plan file it writes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use splitedge::network::{round_latency, Allocation};
use splitedge::planner::{
    plan_hierarchical, route_multihop, select_split_layer, HierarchyProblem, RouteProblem, SplitPlan,
};
use splitedge::protocols::ProtocolKind;

use crate::config::{LoadedConfig, PlannerKind};
use crate::error::{CliError, CliResult};
use crate::runner::{predicted_bytes, write_csv, write_json, Overrides, Setup, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictedLink {
    pub src: String,
    pub dst: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchySummary {
    pub cut1: usize,
    pub cut2: usize,
    pub round_latency_s: f64,
    pub user_edge_cut: usize,
    pub user_edge_s: f64,
    pub user_cloud_cut: usize,
    pub user_cloud_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSummary {
    /// `(node id, layers completed)` per hop.
    pub hops: Vec<(String, usize)>,
    pub batch_cost_s: f64,
}

/// Written by `plan`; `train --plan` accepts files from the split planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub schema_version: u32,
    pub planner: PlannerKind,
    pub protocol: ProtocolKind,
    pub clients: usize,
    pub seed: u64,
    pub rounds: usize,
    pub cut: usize,
    pub plan: SplitPlan,
    pub allocation: Option<Allocation>,
    pub predicted_round_latency_s: Option<f64>,
    /// Wire bytes over all rounds, when traffic does not depend on timing.
    pub predicted_total_bytes: Option<u64>,
    pub predicted_links: Vec<PredictedLink>,
    /// Per-step latency at every cut; `None` where infeasible.
    pub candidates: Vec<Option<f64>>,
    pub hierarchical: Option<HierarchySummary>,
    pub route: Option<RouteSummary>,
}

impl PlanFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
        })
    }

    /// Pins `setup` to this plan and returns its allocation.
    pub(crate) fn apply(&self, setup: &mut Setup) -> CliResult<Allocation> {
        let mismatch = |what: &str, plan: String, run: String| {
            CliError::config(format!("plan was made for {what} {plan}, but the run uses {run}"))
        };
        if self.planner != PlannerKind::Split {
            return Err(CliError::config(format!("only split plans can be trained, got a {:?} plan", self.planner)));
        }
        if self.protocol != setup.protocol.kind {
            return Err(mismatch("protocol", self.protocol.as_str().into(), setup.protocol.kind.as_str().into()));
        }
        if self.clients != setup.clients {
            return Err(mismatch("clients", self.clients.to_string(), setup.clients.to_string()));
        }
        if self.seed != setup.seed {
            return Err(mismatch("seed", self.seed.to_string(), setup.seed.to_string()));
        }
        self.plan.validate(setup.profile.len())?;
        setup.protocol.cut = self.cut;
        setup.protocol.validate(setup.profile.len(), setup.clients)?;
        let alloc = self
            .allocation
            .clone()
            .ok_or_else(|| CliError::config("split plan carries no allocation"))?;
        alloc.validate(&setup.topology, setup.clients).map_err(|e| CliError::config(e.to_string()))?;
        Ok(alloc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub schema_version: u32,
    pub candidate: String,
    pub cut1: usize,
    pub cut2: usize,
    /// Planner objective: step latency for `split`, round latency otherwise.
    pub objective_s: Option<f64>,
}

const REPORT_HEADER: [&str; 5] = ["schema_version", "candidate", "cut1", "cut2", "objective_s"];

fn row(candidate: impl Into<String>, cut1: usize, cut2: usize, objective_s: Option<f64>) -> ReportRow {
    ReportRow {
        schema_version: SCHEMA_VERSION,
        candidate: candidate.into(),
        cut1,
        cut2,
        objective_s,
    }
}

/// Runs the configured planner.
pub fn plan(loaded: &LoadedConfig, ov: Overrides) -> CliResult<(PlanFile, Vec<ReportRow>)> {
    let mut setup = Setup::new(loaded, ov)?;
    let section = loaded.config.plan.clone().unwrap_or_default();
    let l = setup.profile.len();
    let mut file = PlanFile {
        schema_version: SCHEMA_VERSION,
        planner: section.planner,
        protocol: setup.protocol.kind,
        clients: setup.clients,
        seed: setup.seed,
        rounds: loaded.config.rounds,
        cut: setup.protocol.cut,
        plan: SplitPlan::two_tier(setup.protocol.cut, l)?,
        allocation: None,
        predicted_round_latency_s: None,
        predicted_total_bytes: None,
        predicted_links: Vec::new(),
        candidates: Vec::new(),
        hierarchical: None,
        route: None,
    };
    let mut report = Vec::new();
    match section.planner {
        PlannerKind::Split => {
            if matches!(setup.protocol.kind, ProtocolKind::Fedavg | ProtocolKind::Ushaped) {
                return Err(loaded.error_at(
                    "plan",
                    "planner",
                    format!("the split planner needs a single-cut protocol, not {}", setup.protocol.kind.as_str()),
                ));
            }
            let choice = select_split_layer(&setup.split_problem())?;
            setup.protocol.cut = choice.cut;
            let alloc = choice.allocation.allocation.clone();
            let samples = setup.samples();
            file.predicted_round_latency_s = match round_latency(&setup.spec(&samples, 0), &setup.topology, &alloc) {
                Ok(b) => Some(b.total),
                Err(splitedge::Error::Unsupported(_)) => None,
                Err(e) => return Err(e.into()),
            };
            if let Some(links) = predicted_bytes(&setup, loaded.config.rounds)? {
                file.predicted_total_bytes = Some(links.values().sum());
                file.predicted_links = links
                    .into_iter()
                    .map(|((s, d), bytes)| PredictedLink {
                        src: s.to_string(),
                        dst: d.to_string(),
                        bytes,
                    })
                    .collect();
            }
            file.cut = choice.cut;
            file.plan = SplitPlan::two_tier(choice.cut, l)?;
            file.allocation = Some(alloc);
            for (cut, t) in choice.candidates.iter().enumerate() {
                report.push(row("split", cut, l, *t));
            }
            file.candidates = choice.candidates;
        }
        PlannerKind::Hierarchical => {
            let samples = setup.samples();
            let h = plan_hierarchical(&HierarchyProblem {
                profile: &setup.profile,
                topology: &setup.topology,
                samples: &samples,
                batch_size: setup.protocol.batch_size,
                compression: setup.protocol.compression,
            })?;
            report.push(row("user_edge_cloud", h.cut1, h.cut2, Some(h.latency)));
            report.push(row("user_edge", h.user_edge.0, l, Some(h.user_edge.1)));
            report.push(row("user_cloud", h.user_cloud.0, h.user_cloud.0, Some(h.user_cloud.1)));
            file.cut = h.cut1;
            file.plan = h.plan.clone();
            file.hierarchical = Some(HierarchySummary {
                cut1: h.cut1,
                cut2: h.cut2,
                round_latency_s: h.latency,
                user_edge_cut: h.user_edge.0,
                user_edge_s: h.user_edge.1,
                user_cloud_cut: h.user_cloud.0,
                user_cloud_s: h.user_cloud.1,
            });
        }
        PlannerKind::Multihop => {
            let source = section
                .source
                .clone()
                .ok_or_else(|| loaded.error_at("plan", "planner", "the multihop planner needs source"))?;
            let destinations = section
                .destinations
                .clone()
                .ok_or_else(|| loaded.error_at("plan", "planner", "the multihop planner needs destinations"))?;
            let r = route_multihop(&RouteProblem {
                profile: &setup.profile,
                topology: &setup.topology,
                source,
                destinations,
                batch_size: setup.protocol.batch_size,
            })?;
            let mut start = 0;
            for s in &r.plan.segments {
                report.push(row(format!("hop:{}", s.node), start, s.end, None));
                start = s.end;
            }
            file.cut = r.plan.cuts().first().copied().unwrap_or(l);
            file.route = Some(RouteSummary {
                hops: r
                    .hops
                    .iter()
                    .map(|&(v, end)| (setup.topology.nodes[v].id.clone(), end))
                    .collect(),
                batch_cost_s: r.cost,
            });
            file.plan = r.plan;
        }
    }
    Ok((file, report))
}

pub fn write_plan(dir: &Path, file: &PlanFile, report: &[ReportRow]) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_json(&dir.join("plan.json"), file)?;
    write_csv(&dir.join("plan_report.csv"), &REPORT_HEADER, report)
}
