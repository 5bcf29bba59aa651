//! Resource allocation and placement planning.
//!
//! Every planner here has a brute-force counterpart in [`oracle`] that the
//! tests compare against on small instances.

mod allocate;
mod hierarchical;
mod multihop;
pub mod oracle;
mod plan;
mod select;
mod split;

pub use allocate::{allocate_minmax, client_demands, minmax_link_phase, ClientDemand, MinMaxAllocation, SplitProblem};
pub use hierarchical::{hierarchical_latency, plan_hierarchical, HierarchicalPlan, HierarchyProblem};
pub use multihop::{multihop_table, route_multihop, MultihopTable, Route, RouteProblem};
pub use plan::{PlanSegment, SplitPlan};
pub use select::{js_divergence, select_clients, selection_score, Candidate, SelectionConfig};
pub use split::{select_split_layer, SplitChoice};
