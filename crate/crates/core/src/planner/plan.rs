use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Layers `start..end` placed on `node`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSegment {
    pub node: String,
    pub start: usize,
    pub end: usize,
}

/// Contiguous layer ranges covering `0..L` in order. Ranges may be empty,
/// which keeps the cut position of a node that computes nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub segments: Vec<PlanSegment>,
}

impl SplitPlan {
    pub fn new(segments: Vec<PlanSegment>, layers: usize) -> Result<Self> {
        let plan = Self { segments };
        plan.validate(layers)?;
        Ok(plan)
    }

    /// Client keeps `0..cut`, the server the rest.
    pub fn two_tier(cut: usize, layers: usize) -> Result<Self> {
        Self::new(
            vec![
                PlanSegment {
                    node: "client".into(),
                    start: 0,
                    end: cut,
                },
                PlanSegment {
                    node: "server".into(),
                    start: cut,
                    end: layers,
                },
            ],
            layers,
        )
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        let mut at = 0;
        for s in &self.segments {
            if s.start != at || s.end < s.start {
                return Err(Error::config(format!(
                    "plan segment {}..{} on {:?} does not continue at layer {at}",
                    s.start, s.end, s.node
                )));
            }
            at = s.end;
        }
        if at != layers || self.segments.is_empty() {
            return Err(Error::config(format!("plan covers layers 0..{at}, expected 0..{layers}")));
        }
        Ok(())
    }

    /// Boundaries between consecutive segments.
    pub fn cuts(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans_must_partition_layers() {
        assert_eq!(SplitPlan::two_tier(2, 5).unwrap().cuts(), vec![2]);
        assert!(SplitPlan::two_tier(6, 5).is_err());
        let gap = vec![
            PlanSegment {
                node: "a".into(),
                start: 0,
                end: 2,
            },
            PlanSegment {
                node: "b".into(),
                start: 3,
                end: 5,
            },
        ];
        assert!(SplitPlan::new(gap, 5).is_err());
    }
}
