//! The run report: one row per epoch plus a final verdict on the run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hierarchy::{NodeRef, UserId};
use crate::proactive::{ClaimRecord, Verdict};

use super::network::MessageKind;
use super::MembershipEvent;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewalRow {
    /// Nodes taking part, the server included.
    pub nodes: u64,
    pub sealed_deltas: u64,
    pub commitment_multicasts: u64,
    pub claims: u64,
    /// `n(n − 1)`: the all-pairs message count of renewal without the
    /// hierarchy, for comparison.
    pub all_pairs_baseline: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRow {
    pub epoch: u64,
    pub round_id: u64,
    pub membership: Vec<MembershipEvent>,
    pub messages: BTreeMap<MessageKind, u64>,
    pub total_messages: u64,
    pub renewal: Option<RenewalRow>,
    pub compromised: Vec<UserId>,
    pub claims: Vec<ClaimRecord>,
    pub verdicts: Vec<Verdict>,
    pub cleansed: Vec<UserId>,
    pub discarded_groups: Vec<NodeRef>,
    pub adversary_can_reconstruct: bool,
    pub secret_intact: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantViolation {
    pub epoch: u64,
    pub invariant: String,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalRow {
    pub reconstruction_correct: bool,
    pub secret_recovered_by_adversary: bool,
    pub invariant_violations: Vec<InvariantViolation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimReport {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub users: u64,
    pub epochs: Vec<EpochRow>,
    #[serde(rename = "final")]
    pub summary: Option<FinalRow>,
}

impl SimReport {
    pub fn new(scenario: String, seed: u64, users: u64) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            scenario,
            seed,
            users,
            epochs: Vec::new(),
            summary: None,
        }
    }

    /// Whether the run reconstructed the secret without violating anything.
    pub fn succeeded(&self) -> bool {
        self.summary
            .as_ref()
            .is_some_and(|f| f.reconstruction_correct && f.invariant_violations.is_empty())
    }

    /// Fixed-width summary, one line per epoch.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:>5} | {:>8} | {:>11} | {:>6} | {:>8} | {}\n",
            "epoch", "messages", "compromises", "claims", "verdicts", "secret-intact"
        );
        out.push_str(&format!("{}\n", "-".repeat(63)));
        for row in &self.epochs {
            out.push_str(&format!(
                "{:>5} | {:>8} | {:>11} | {:>6} | {:>8} | {}\n",
                row.epoch,
                row.total_messages,
                row.compromised.len(),
                row.claims.len(),
                row.verdicts.len(),
                if row.secret_intact { "yes" } else { "no" }
            ));
        }
        if let Some(summary) = &self.summary {
            out.push_str(&format!(
                "\nreconstruction correct: {}\nsecret recovered by adversary: {}\ninvariant violations: {}\n",
                yes_no(summary.reconstruction_correct),
                yes_no(summary.secret_recovered_by_adversary),
                summary.invariant_violations.len()
            ));
            for v in &summary.invariant_violations {
                out.push_str(&format!(
                    "  epoch {}: {}: {}\n",
                    v.epoch, v.invariant, v.detail
                ));
            }
        }
        out
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}
