//! The mobile adversary: hops between nodes at epoch boundaries, copies what
//! the compromised nodes hold, and perturbs their protocol messages.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::algebra::FieldElement;
use crate::curve::CurvePoint;
use crate::hierarchy::{HierarchyTree, NodeRef, UserId};
use crate::proactive::{Interference, TamperKind};
use crate::sharing::{closure_over_versions, ShareRecord};

use super::network::{Address, Envelope, Payload};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    PassiveStealer,
    ActiveCorruptor,
    FalseClaimer,
    Scripted,
}

/// Compromises allowed per sibling group per epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Budget {
    Fixed(u64),
    /// One less than the group's threshold.
    GroupK,
}

impl Default for Budget {
    fn default() -> Self {
        Budget::Fixed(0)
    }
}

impl Budget {
    pub fn resolve(self, threshold: usize) -> usize {
        match self {
            Budget::Fixed(n) => n as usize,
            Budget::GroupK => threshold - 1,
        }
    }
}

impl Serialize for Budget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Budget::Fixed(n) => s.serialize_u64(*n),
            Budget::GroupK => s.serialize_str("k"),
        }
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Fixed(u64),
            Named(String),
        }
        match Raw::deserialize(d)? {
            Raw::Fixed(n) => Ok(Budget::Fixed(n)),
            Raw::Named(s) if s == "k" => Ok(Budget::GroupK),
            Raw::Named(s) => Err(de::Error::custom(format!(
                "budget must be a nonnegative integer or \"k\", got {s:?}"
            ))),
        }
    }
}

/// Scripted behavior for one epoch.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub epoch: u64,
    #[serde(default)]
    pub compromise: Vec<UserId>,
    /// Compromised subtree roots that corrupt their renewal bundles.
    #[serde(default)]
    pub tamper: Vec<UserId>,
    /// Compromised children that accuse their parent.
    #[serde(default)]
    pub false_claims: Vec<UserId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AdversaryConfig {
    pub strategy: Strategy,
    pub budget: Budget,
    /// Sibling groups, named by their parent, the adversary may enter. `None`
    /// means every group.
    pub targets: Option<BTreeSet<NodeRef>>,
    /// How an active corruptor damages bundles.
    pub tamper: TamperKind,
    pub script: Vec<ScriptStep>,
}

/// Version of a share: shares combine only within one version of a group.
pub type ShareVersion = (u64, NodeRef, u64, UserId);

pub fn share_version(share: &ShareRecord) -> ShareVersion {
    (share.round_id, share.group, share.epoch, share.owner)
}

#[derive(Clone, Debug)]
pub struct AdversaryState {
    pub config: AdversaryConfig,
    /// Nodes held this epoch.
    pub compromised: BTreeSet<UserId>,
    /// Whether the held nodes' incoming traffic is still being copied.
    pub reading: bool,
    pub ever_compromised: BTreeSet<UserId>,
    /// Every share version copied, with the epoch it was taken in.
    pub stolen: BTreeMap<ShareVersion, (u64, ShareRecord)>,
    pub stolen_rtoks: BTreeMap<UserId, FieldElement>,
    pub stolen_round_keys: BTreeMap<(u64, UserId), CurvePoint>,
    pub public_keys: BTreeMap<u64, CurvePoint>,
    pub commitments_seen: u64,
    pub rng: ChaCha20Rng,
}

impl AdversaryState {
    pub fn new(config: AdversaryConfig, rng: ChaCha20Rng) -> Self {
        Self {
            config,
            compromised: BTreeSet::new(),
            reading: false,
            ever_compromised: BTreeSet::new(),
            stolen: BTreeMap::new(),
            stolen_rtoks: BTreeMap::new(),
            stolen_round_keys: BTreeMap::new(),
            public_keys: BTreeMap::new(),
            commitments_seen: 0,
            rng,
        }
    }

    fn targets(&self, group: NodeRef) -> bool {
        self.config
            .targets
            .as_ref()
            .is_none_or(|targets| targets.contains(&group))
    }

    /// Releases last epoch's nodes and picks this epoch's.
    pub fn hop(
        &mut self,
        epoch: u64,
        tree: &HierarchyTree,
        shares: &BTreeMap<UserId, ShareRecord>,
    ) {
        self.compromised.clear();
        if self.config.strategy == Strategy::Scripted {
            let step = self.config.script.iter().find(|s| s.epoch == epoch);
            if let Some(step) = step {
                self.compromised
                    .extend(step.compromise.iter().filter(|id| tree.is_active(**id)));
            }
        } else {
            for (group, members) in groups(tree, shares) {
                if !self.targets(group) {
                    continue;
                }
                let budget = self.config.budget.resolve(shares[&members[0]].threshold);
                let (mut fresh, mut seen): (Vec<UserId>, Vec<UserId>) = members
                    .into_iter()
                    .partition(|id| !self.stolen.contains_key(&share_version(&shares[id])));
                fresh.shuffle(&mut self.rng);
                seen.shuffle(&mut self.rng);
                fresh.extend(seen);
                self.compromised.extend(fresh.into_iter().take(budget));
            }
        }
        self.ever_compromised
            .extend(self.compromised.iter().copied());
        self.reading = true;
    }

    /// Copies the full state of every compromised node.
    pub fn read_nodes(
        &mut self,
        epoch: u64,
        tree: &HierarchyTree,
        shares: &BTreeMap<UserId, ShareRecord>,
        round_id: u64,
    ) {
        if !self.reading {
            return;
        }
        for id in &self.compromised {
            if let Some(share) = shares.get(id) {
                self.stolen
                    .entry(share_version(share))
                    .or_insert_with(|| (epoch, share.clone()));
            }
            if let Some(node) = tree.node(*id) {
                if let Some(rtok) = &node.rtok {
                    self.stolen_rtoks.insert(*id, rtok.clone());
                }
                if let Some(key) = &node.round_key {
                    self.stolen_round_keys.insert((round_id, *id), key.clone());
                }
            }
        }
    }

    /// Stops copying incoming traffic; planted behavior stays in force.
    pub fn close_reading(&mut self) {
        self.reading = false;
    }

    /// Restores cleansed nodes to honest behavior. What was copied stays.
    pub fn cleanse(&mut self, nodes: &BTreeSet<UserId>) {
        self.compromised.retain(|id| !nodes.contains(id));
    }

    /// Whether the copied shares determine the secret.
    pub fn can_reconstruct(&self) -> bool {
        let shares: Vec<ShareRecord> = self.stolen.values().map(|(_, s)| s.clone()).collect();
        closure_over_versions(&shares)
    }
}

/// Active share holders of every sibling group, keyed by parent.
pub fn groups(
    tree: &HierarchyTree,
    shares: &BTreeMap<UserId, ShareRecord>,
) -> BTreeMap<NodeRef, Vec<UserId>> {
    let mut out: BTreeMap<NodeRef, Vec<UserId>> = BTreeMap::new();
    for share in shares.values().filter(|s| tree.is_active(s.owner)) {
        out.entry(share.group).or_default().push(share.owner);
    }
    out
}

/// Records what a delivered envelope shows the adversary.
pub fn adversary_observe(adv: &mut AdversaryState, envelope: &Envelope, epoch: u64) {
    if envelope.sealed {
        let Address::Node(NodeRef::User(to)) = envelope.to else {
            return;
        };
        if !(adv.reading && adv.compromised.contains(&to)) {
            return;
        }
        if let Payload::ShareDelivery(share) = &envelope.payload {
            adv.stolen
                .entry(share_version(share))
                .or_insert_with(|| (epoch, share.clone()));
        }
        return;
    }
    match &envelope.payload {
        Payload::RoundKeyBroadcast {
            round_id,
            public_key,
        } => {
            adv.public_keys.insert(*round_id, public_key.clone());
        }
        Payload::Commitments { points, .. } => adv.commitments_seen += points.len() as u64,
        _ => {}
    }
}

/// The deviations the compromised nodes will make this epoch.
pub fn adversary_act(adv: &AdversaryState, epoch: u64, tree: &HierarchyTree) -> Interference {
    let held = &adv.compromised;
    let is_root = |id: &UserId| !tree.active_children(NodeRef::User(*id)).is_empty();
    match adv.config.strategy {
        Strategy::PassiveStealer => Interference::default(),
        Strategy::ActiveCorruptor => Interference {
            tamper: held
                .iter()
                .filter(|id| is_root(id))
                .map(|id| (NodeRef::User(*id), adv.config.tamper))
                .collect(),
            false_claimers: BTreeSet::new(),
            silenced: held.clone(),
        },
        Strategy::FalseClaimer => Interference {
            tamper: BTreeMap::new(),
            false_claimers: held.clone(),
            silenced: BTreeSet::new(),
        },
        Strategy::Scripted => {
            let Some(step) = adv.config.script.iter().find(|s| s.epoch == epoch) else {
                return Interference::default();
            };
            let false_claimers: BTreeSet<UserId> = step
                .false_claims
                .iter()
                .filter(|id| held.contains(id))
                .copied()
                .collect();
            Interference {
                tamper: step
                    .tamper
                    .iter()
                    .filter(|id| held.contains(id) && is_root(id))
                    .map(|id| (NodeRef::User(*id), adv.config.tamper))
                    .collect(),
                silenced: held.difference(&false_claimers).copied().collect(),
                false_claimers,
            }
        }
    }
}
