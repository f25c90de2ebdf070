//! Deterministic simulation of dealing and renewal over a message network,
//! against a mobile adversary.
//!
//! A run is a sequence of epochs. Each epoch has four phases, one tick each
//! by default:
//!
//! 1. request: membership changes, a fresh dealing when one is due, and the
//!    adversary's hop to a new set of nodes;
//! 2. deliver: envelopes arrive and the adversary copies everything its
//!    nodes hold;
//! 3. renew: every sibling group renews its shares. The adversary no longer
//!    copies traffic but the behavior it planted plays out;
//! 4. resolve: claims are judged and found nodes are cleansed.
//!
//! The adversary therefore sees exactly one version of each share it takes.

pub mod adversary;
pub mod network;
pub mod report;
pub mod state;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{Field, FieldElement};
use crate::curve::{Curve, CurveParams};
use crate::hierarchy::{derive_round_key_server, HierarchyTree, NodeRef, RoundState, UserId};
use crate::proactive::{renewal_round, EpochClock};
use crate::sharing::{
    compute_threshold, distribute, prepare_round, reconstruct, DealerState, EvalPointMode,
    ShareRecord, ThresholdFactor,
};

use adversary::{
    adversary_act, adversary_observe, groups, AdversaryConfig, AdversaryState, Strategy,
};
use network::{Address, Network, Payload};
use report::{EpochRow, FinalRow, InvariantViolation, RenewalRow, SimReport};

/// Attempts at finding a server secret that gives usable evaluation points.
const ROUND_ATTEMPTS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("all {0} epochs have already run")]
    Finished(u64),
    #[error("invalid world state: {0}")]
    State(String),
}

/// Shape of one node slot and everything below it.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    #[serde(default)]
    pub children: Vec<NodeSpec>,
}

impl NodeSpec {
    pub fn count(&self) -> usize {
        1 + self.children.iter().map(NodeSpec::count).sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FieldMode {
    /// Shares live modulo the order of the curve's base point.
    CurveOrder(CurveParams),
    /// A standalone prime field; no keys, no commitments.
    NoCurve(BigUint),
}

/// What happens to a dealt round when a member leaves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoundPolicy {
    /// Deal a fresh round to the remaining members.
    #[default]
    Abort,
    /// Keep the round; the departed subtree's shares are frozen.
    Finish,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum MembershipChange {
    Leave {
        user: UserId,
    },
    /// A newcomer takes the vacated position of `position`.
    Rejoin {
        position: UserId,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipEvent {
    pub epoch: u64,
    #[serde(flatten)]
    pub change: MembershipChange,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub name: String,
    pub field: FieldMode,
    pub threshold_factor: ThresholdFactor,
    /// Level-1 slots; users are numbered in level order from 1.
    pub tree: Vec<NodeSpec>,
    pub secret: BigUint,
    pub eval_points: EvalPointMode,
    pub epochs: u64,
    pub ticks_per_epoch: u64,
    pub renewal: bool,
    pub round_policy: RoundPolicy,
    pub adversary: AdversaryConfig,
    pub events: Vec<MembershipEvent>,
    pub seed: u64,
}

pub struct World {
    config: SimConfig,
    field: Field,
    tree: HierarchyTree,
    secret: FieldElement,
    round: Option<RoundState>,
    eval_points: BTreeMap<UserId, FieldElement>,
    dealer: Option<DealerState>,
    shares: BTreeMap<UserId, ShareRecord>,
    clock: EpochClock,
    network: Network,
    adversary: AdversaryState,
    rng: ChaCha20Rng,
    report: SimReport,
    next_epoch: u64,
    renewal_discarded: bool,
    violations: Vec<InvariantViolation>,
}

fn config_err(e: impl ToString) -> SimError {
    SimError::Config(e.to_string())
}

/// The tree, curve and field a configuration describes, with users
/// registered in level order.
pub fn build_tree<R: rand::RngCore + ?Sized>(
    config: &SimConfig,
    rng: &mut R,
) -> Result<HierarchyTree, SimError> {
    let mut tree = match &config.field {
        FieldMode::CurveOrder(params) => {
            HierarchyTree::with_curve(Curve::new(params.clone()).map_err(config_err)?)
        }
        FieldMode::NoCurve(prime) => {
            HierarchyTree::without_curve(Field::new(prime.clone()).map_err(config_err)?)
        }
    };
    let mut queue: VecDeque<(NodeRef, &NodeSpec)> =
        config.tree.iter().map(|s| (NodeRef::Server, s)).collect();
    while let Some((parent, spec)) = queue.pop_front() {
        let registration = tree.register(parent, rng).map_err(config_err)?;
        queue.extend(
            spec.children
                .iter()
                .map(|c| (NodeRef::User(registration.id), c)),
        );
    }
    Ok(tree)
}

fn validate(config: &SimConfig, tree: &HierarchyTree) -> Result<(), SimError> {
    if config.tree.is_empty() {
        return Err(config_err("the tree has no users"));
    }
    if config.ticks_per_epoch == 0 {
        return Err(config_err("ticks_per_epoch must be at least 1"));
    }
    if &config.secret >= tree.field().modulus() {
        return Err(config_err(format!(
            "secret must be below the field modulus {}",
            tree.field().modulus()
        )));
    }
    if config.eval_points == EvalPointMode::RoundKey && tree.curve().is_none() {
        return Err(config_err(
            "round-key evaluation points need a curve; use user-id",
        ));
    }
    for event in &config.events {
        if event.epoch >= config.epochs {
            return Err(config_err(format!(
                "membership event at epoch {} is past the last epoch {}",
                event.epoch,
                config.epochs.saturating_sub(1)
            )));
        }
    }
    let adversary = &config.adversary;
    if adversary.strategy == Strategy::Scripted {
        let threshold_of = |group: NodeRef| {
            compute_threshold(config.threshold_factor, tree.active_children(group).len())
        };
        for step in &adversary.script {
            let mut per_group: BTreeMap<NodeRef, usize> = BTreeMap::new();
            for id in &step.compromise {
                let node = tree
                    .node(*id)
                    .ok_or_else(|| config_err(format!("script names unknown user {id}")))?;
                *per_group.entry(node.parent).or_default() += 1;
            }
            for (group, count) in per_group {
                let budget = adversary.budget.resolve(threshold_of(group));
                if count > budget {
                    return Err(config_err(format!(
                        "script step at epoch {} compromises {count} children of {group}, over the budget of {budget}",
                        step.epoch
                    )));
                }
            }
            for id in step.tamper.iter().chain(&step.false_claims) {
                if !step.compromise.contains(id) {
                    return Err(config_err(format!(
                        "script step at epoch {} directs {id}, which it does not compromise",
                        step.epoch
                    )));
                }
            }
        }
    }
    Ok(())
}

impl World {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let tree = build_tree(&config, &mut rng)?;
        validate(&config, &tree)?;
        let mut adversary_rng = ChaCha20Rng::seed_from_u64(config.seed);
        adversary_rng.set_stream(1);
        let field = tree.field().clone();
        let secret = field.element(config.secret.clone());
        let report = SimReport::new(config.name.clone(), config.seed, tree.len() as u64);
        Ok(Self {
            clock: EpochClock::new(config.ticks_per_epoch),
            adversary: AdversaryState::new(config.adversary.clone(), adversary_rng),
            config,
            field,
            tree,
            secret,
            round: None,
            eval_points: BTreeMap::new(),
            dealer: None,
            shares: BTreeMap::new(),
            network: Network::default(),
            rng,
            report,
            next_epoch: 0,
            renewal_discarded: false,
            violations: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn tree(&self) -> &HierarchyTree {
        &self.tree
    }

    pub fn shares(&self) -> &BTreeMap<UserId, ShareRecord> {
        &self.shares
    }

    pub fn dealer(&self) -> Option<&DealerState> {
        self.dealer.as_ref()
    }

    pub fn round(&self) -> Option<&RoundState> {
        self.round.as_ref()
    }

    pub fn adversary(&self) -> &AdversaryState {
        &self.adversary
    }

    pub fn clock(&self) -> &EpochClock {
        &self.clock
    }

    pub fn report(&self) -> &SimReport {
        &self.report
    }

    /// Epoch the next call to [`World::step_epoch`] runs.
    pub fn next_epoch(&self) -> u64 {
        self.next_epoch
    }

    pub fn epochs_done(&self) -> bool {
        self.next_epoch >= self.config.epochs
    }

    fn violation(&mut self, epoch: u64, invariant: &str, detail: impl ToString) {
        self.violations.push(InvariantViolation {
            epoch,
            invariant: invariant.to_string(),
            detail: detail.to_string(),
        });
    }

    fn deal(&mut self, epoch: u64) {
        let prepared = prepare_round(
            &mut self.tree,
            self.config.eval_points,
            ROUND_ATTEMPTS,
            &mut self.rng,
        )
        .and_then(|(round, points)| {
            let dealing = distribute(
                &self.tree,
                &self.secret,
                &round,
                &points,
                self.config.threshold_factor,
                &mut self.rng,
            )?;
            Ok((round, points, dealing))
        });
        let (round, points, dealing) = match prepared {
            Ok(ok) => ok,
            Err(e) => {
                self.violation(epoch, "dealing", e);
                return;
            }
        };
        for id in &dealing.order {
            self.network.send(
                &self.clock,
                NodeRef::User(*id),
                Address::Node(NodeRef::Server),
                Payload::ReqM {
                    round_id: round.round_id,
                },
                false,
            );
        }
        if let Some(public_key) = &round.public_key {
            self.network.send(
                &self.clock,
                NodeRef::Server,
                Address::Broadcast,
                Payload::RoundKeyBroadcast {
                    round_id: round.round_id,
                    public_key: public_key.clone(),
                },
                false,
            );
        }
        for id in &dealing.order {
            self.network.send(
                &self.clock,
                NodeRef::Server,
                Address::Node(NodeRef::User(*id)),
                Payload::ShareDelivery(dealing.shares[id].clone()),
                true,
            );
        }
        self.shares = dealing.shares;
        self.dealer = Some(dealing.dealer);
        self.round = Some(round);
        self.eval_points = points;
        self.clock.reset_groups();
    }

    fn deliver(&mut self, epoch: u64) {
        for envelope in self.network.deliver(&self.clock) {
            let (start, end) = (self.clock.epoch_start(), self.clock.epoch_end());
            if envelope.delivered_tick < start.max(envelope.sent_tick)
                || envelope.delivered_tick > end
            {
                self.violation(
                    epoch,
                    "within-epoch-delivery",
                    format!(
                        "{:?} sent at tick {} delivered at tick {}",
                        envelope.payload.kind(),
                        envelope.sent_tick,
                        envelope.delivered_tick
                    ),
                );
            }
            adversary_observe(&mut self.adversary, &envelope, epoch);
        }
    }

    fn apply_membership(&mut self, epoch: u64, row: &mut EpochRow) -> bool {
        let mut redeal = false;
        let events: Vec<MembershipEvent> = self
            .config
            .events
            .iter()
            .filter(|e| e.epoch == epoch)
            .cloned()
            .collect();
        for event in events {
            match event.change {
                MembershipChange::Leave { user } => match self.tree.leave(user) {
                    Ok(_) => {
                        self.network.send(
                            &self.clock,
                            NodeRef::User(user),
                            Address::Node(NodeRef::Server),
                            Payload::Leave(user),
                            false,
                        );
                        redeal |= self.config.round_policy == RoundPolicy::Abort;
                        row.membership.push(event);
                    }
                    Err(e) => self.violation(epoch, "membership", e),
                },
                MembershipChange::Rejoin { position } => {
                    match self.tree.rejoin(position, &mut self.rng) {
                        Ok(id) => {
                            self.network.send(
                                &self.clock,
                                NodeRef::User(id),
                                Address::Node(NodeRef::Server),
                                Payload::Join(id),
                                false,
                            );
                            redeal = true;
                            row.membership.push(event);
                        }
                        Err(e) => self.violation(epoch, "membership", e),
                    }
                }
            }
        }
        redeal
    }

    fn renew(&mut self, epoch: u64, row: &mut EpochRow) {
        let interference = adversary_act(&self.adversary, epoch, &self.tree);
        self.clock.advance_tick();
        self.adversary.close_reading();
        if !self.config.renewal || self.shares.is_empty() {
            return;
        }
        let outcome = match renewal_round(
            &self.tree,
            &self.shares,
            &mut self.clock,
            &interference,
            &mut self.rng,
        ) {
            Ok(outcome) => outcome,
            Err(e) => {
                self.violation(epoch, "renewal", e);
                return;
            }
        };
        let mut multicast_sent = BTreeSet::new();
        for bundle in &outcome.bundles {
            if multicast_sent.insert(bundle.from) {
                self.network.send(
                    &self.clock,
                    bundle.from,
                    Address::Multicast(bundle.from),
                    Payload::Commitments {
                        group: bundle.from,
                        epoch: bundle.epoch,
                        points: bundle.commitments.clone(),
                    },
                    false,
                );
            }
            self.network.send(
                &self.clock,
                bundle.from,
                Address::Node(NodeRef::User(bundle.to)),
                Payload::RenewalDelta {
                    group: bundle.from,
                    epoch: bundle.epoch,
                    delta_eval: bundle.delta_eval.clone(),
                },
                true,
            );
        }
        for claim in &outcome.claims {
            self.network.send(
                &self.clock,
                NodeRef::User(claim.claimer),
                Address::Node(NodeRef::Server),
                Payload::Claim(claim.clone()),
                true,
            );
        }
        let nodes = self.tree.active_users().len() as u64 + 1;
        row.renewal = Some(RenewalRow {
            nodes,
            sealed_deltas: outcome.messages.sealed_deltas,
            commitment_multicasts: outcome.messages.commitment_multicasts,
            claims: outcome.messages.claims,
            all_pairs_baseline: nodes * (nodes - 1),
        });
        row.claims = outcome.claims;
        row.verdicts = outcome.verdicts;
        row.cleansed = outcome.cleansed.iter().copied().collect();
        row.discarded_groups = outcome.discarded.iter().copied().collect();
        self.renewal_discarded |= !outcome.discarded.is_empty();
        self.adversary.cleanse(&outcome.cleansed);
        self.shares = outcome.shares;
    }

    /// Runs the next epoch and appends its report row.
    pub fn step_epoch(&mut self) -> Result<&EpochRow, SimError> {
        if self.epochs_done() {
            return Err(SimError::Finished(self.config.epochs));
        }
        let epoch = self.next_epoch;
        if epoch > 0 {
            self.clock.next_epoch();
        }
        let mut row = EpochRow {
            epoch,
            round_id: 0,
            membership: Vec::new(),
            messages: BTreeMap::new(),
            total_messages: 0,
            renewal: None,
            compromised: Vec::new(),
            claims: Vec::new(),
            verdicts: Vec::new(),
            cleansed: Vec::new(),
            discarded_groups: Vec::new(),
            adversary_can_reconstruct: false,
            secret_intact: false,
        };

        let redeal = self.apply_membership(epoch, &mut row) || self.dealer.is_none();
        if redeal {
            self.deal(epoch);
        }
        self.adversary.hop(epoch, &self.tree, &self.shares);
        row.compromised = self.adversary.compromised.iter().copied().collect();
        self.check_budget(epoch);

        self.clock.advance_tick();
        self.deliver(epoch);
        let round_id = self.round.as_ref().map_or(0, |r| r.round_id);
        self.adversary
            .read_nodes(epoch, &self.tree, &self.shares, round_id);

        self.renew(epoch, &mut row);
        self.clock.advance_tick();
        self.deliver(epoch);
        // Anything still queued is due at the last tick of the epoch.
        while self.clock.tick() < self.clock.epoch_end() {
            self.clock.advance_tick();
        }
        self.deliver(epoch);
        if self.network.in_flight() > 0 {
            self.violation(
                epoch,
                "within-epoch-delivery",
                "envelopes outlived their epoch",
            );
        }

        row.round_id = round_id;
        row.messages = self.network.take_counts();
        row.total_messages = row.messages.values().sum();
        row.adversary_can_reconstruct = self.adversary.can_reconstruct();
        row.secret_intact = self.reconstructs();
        self.check_invariants(epoch, row.adversary_can_reconstruct);
        self.report.epochs.push(row);
        self.next_epoch += 1;
        Ok(self.report.epochs.last().expect("row just pushed"))
    }

    /// Whether all active members together still recover the secret.
    pub fn reconstructs(&self) -> bool {
        if self.shares.is_empty() {
            return false;
        }
        let participants: BTreeSet<UserId> = self
            .tree
            .active_users()
            .into_iter()
            .filter(|id| self.shares.contains_key(id))
            .collect();
        reconstruct(&self.tree, &self.shares, &participants).is_ok_and(|d| d == self.secret)
    }

    fn budget_ok_for_secrecy(&self) -> bool {
        groups(&self.tree, &self.shares).values().all(|members| {
            let threshold = self.shares[&members[0]].threshold;
            self.config.adversary.budget.resolve(threshold) < threshold
        })
    }

    fn check_budget(&mut self, epoch: u64) {
        let mut over = Vec::new();
        for (group, members) in groups(&self.tree, &self.shares) {
            let threshold = self.shares[&members[0]].threshold;
            let budget = self.config.adversary.budget.resolve(threshold);
            let held = members
                .iter()
                .filter(|m| self.adversary.compromised.contains(m))
                .count();
            if held > budget {
                over.push(format!(
                    "{held} of {group}'s children held, budget {budget}"
                ));
            }
        }
        for detail in over {
            self.violation(epoch, "compromise-budget", detail);
        }
    }

    fn check_invariants(&mut self, epoch: u64, adversary_can_reconstruct: bool) {
        let mut found: Vec<(&str, String)> = Vec::new();

        let leaked: Vec<UserId> = self
            .adversary
            .stolen_rtoks
            .keys()
            .filter(|id| !self.adversary.ever_compromised.contains(id))
            .copied()
            .collect();
        if !leaked.is_empty() {
            found.push((
                "no-oracle-leakage",
                format!("tokens of never-compromised {leaked:?}"),
            ));
        }

        if let (Some(curve), Some(round)) = (self.tree.curve(), &self.round) {
            for node in self.tree.nodes().filter(|n| n.active) {
                let (Some(user_side), Some(group_key)) = (&node.round_key, &node.group_key) else {
                    continue;
                };
                match derive_round_key_server(curve, round, group_key) {
                    Ok(server_side) if &server_side == user_side => {}
                    _ => found.push(("key-agreement", format!("round keys of {} differ", node.id))),
                }
            }
        }

        for (group, members) in groups(&self.tree, &self.shares) {
            let mut seen = BTreeSet::new();
            for m in &members {
                let x = &self.shares[m].eval_point;
                if x.is_zero() || !seen.insert(x.value().clone()) {
                    found.push(("eval-point-distinctness", format!("children of {group}")));
                    break;
                }
            }
        }

        if self.dealer.is_some() {
            let missing: Vec<UserId> = self
                .tree
                .active_users()
                .into_iter()
                .filter(|id| !self.shares.contains_key(id))
                .collect();
            if !missing.is_empty() {
                found.push((
                    "single-share",
                    format!("active users without a share: {missing:?}"),
                ));
            }
        }

        if adversary_can_reconstruct
            && self.config.renewal
            && !self.renewal_discarded
            && self.budget_ok_for_secrecy()
        {
            found.push((
                "proactive-secrecy",
                "adversary holds enough same-epoch shares with a budget below every threshold"
                    .into(),
            ));
        }

        for (invariant, detail) in found {
            self.violation(epoch, invariant, detail);
        }
    }

    /// Runs every remaining epoch and the final reconstruction.
    pub fn run(&mut self) -> &SimReport {
        while !self.epochs_done() {
            self.step_epoch().expect("epochs remain");
        }
        self.finish()
    }

    /// Final reconstruction and summary. Safe to call more than once.
    pub fn finish(&mut self) -> &SimReport {
        let reconstruction_correct = self.reconstructs();
        let secret_recovered_by_adversary = self.adversary.can_reconstruct()
            || self
                .report
                .epochs
                .iter()
                .any(|r| r.adversary_can_reconstruct);
        self.report.summary = Some(FinalRow {
            reconstruction_correct,
            secret_recovered_by_adversary,
            invariant_violations: self.violations.clone(),
        });
        &self.report
    }
}
