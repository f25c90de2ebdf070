//! Share renewal inside 2-leveled subtrees, commitment checks on renewal
//! values, and claim resolution.
//!
//! Every internal position `i` (the server included) renews its children's
//! shares once per epoch. It samples `Δ_i` with `Δ_i(0) = 0` and degree
//! `threshold_i − 1`, sends `Δ_i(x_j)` sealed to each child `U_j`, and
//! multicasts `Θ_h = Δ_h·G`. A child accepts iff
//! `Δ_i(x_j)·G = Σ_h x_j^h·Θ_h`; otherwise it claims its parent is
//! compromised.

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{AlgebraError, FieldElement, Polynomial};
use crate::curve::{Curve, CurveError, CurvePoint};
use crate::hierarchy::{HierarchyTree, NodeRef, UserId};
use crate::sharing::ShareRecord;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProactiveError {
    #[error("{0} has no children to renew")]
    NoChildren(NodeRef),
    #[error("bundle for epoch {bundle} cannot renew a share at epoch {share}")]
    EpochSkew { share: u64, bundle: u64 },
    #[error("bundle for {0} failed verification")]
    UnverifiedBundle(UserId),
    #[error("bundle addressed to {to} applied to the share of {owner}")]
    WrongRecipient { to: UserId, owner: UserId },
    #[error("{0} verified its bundle and may not claim")]
    ClaimNotPermitted(UserId),
    #[error("claims name different accused nodes or epochs")]
    MixedAccused,
    #[error("shares under {0} disagree on round, epoch or threshold")]
    InconsistentGroup(NodeRef),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// Global epoch and tick, plus the renewal epoch of every sibling group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochClock {
    global: u64,
    tick: u64,
    ticks_per_epoch: u64,
    groups: BTreeMap<NodeRef, u64>,
}

impl EpochClock {
    pub fn new(ticks_per_epoch: u64) -> Self {
        Self {
            global: 0,
            tick: 0,
            ticks_per_epoch: ticks_per_epoch.max(1),
            groups: BTreeMap::new(),
        }
    }

    pub(crate) fn restore(
        global: u64,
        tick: u64,
        ticks_per_epoch: u64,
        groups: BTreeMap<NodeRef, u64>,
    ) -> Self {
        Self {
            global,
            tick,
            ticks_per_epoch: ticks_per_epoch.max(1),
            groups,
        }
    }

    pub fn global_epoch(&self) -> u64 {
        self.global
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn ticks_per_epoch(&self) -> u64 {
        self.ticks_per_epoch
    }

    pub fn epoch_start(&self) -> u64 {
        self.global * self.ticks_per_epoch
    }

    /// Last tick that still belongs to the current epoch.
    pub fn epoch_end(&self) -> u64 {
        self.epoch_start() + self.ticks_per_epoch - 1
    }

    /// Moves to the next tick of the current epoch, saturating at its end.
    pub fn advance_tick(&mut self) {
        self.tick = (self.tick + 1).min(self.epoch_end());
    }

    pub fn next_epoch(&mut self) {
        self.global += 1;
        self.tick = self.epoch_start();
    }

    pub fn group_epoch(&self, group: NodeRef) -> u64 {
        self.groups.get(&group).copied().unwrap_or(0)
    }

    pub fn groups(&self) -> &BTreeMap<NodeRef, u64> {
        &self.groups
    }

    pub fn advance_group(&mut self, group: NodeRef) {
        *self.groups.entry(group).or_default() += 1;
    }

    /// Forgets group epochs after a fresh dealing.
    pub fn reset_groups(&mut self) {
        self.groups.clear();
    }
}

/// One child's renewal value plus the group's commitments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenewalBundle {
    pub from: NodeRef,
    pub to: UserId,
    /// Group epoch the renewed share will have.
    pub epoch: u64,
    pub delta_eval: FieldElement,
    pub commitments: Vec<CurvePoint>,
}

/// A group's renewal polynomial and the bundles derived from it. The
/// polynomial never leaves the subtree root.
#[derive(Clone, Debug)]
pub struct RenewalPlan {
    pub group: NodeRef,
    pub delta: Polynomial,
    pub bundles: Vec<RenewalBundle>,
}

fn group_members(
    group: NodeRef,
    shares: &BTreeMap<UserId, ShareRecord>,
) -> Result<Vec<&ShareRecord>, ProactiveError> {
    let members: Vec<_> = shares.values().filter(|s| s.group == group).collect();
    let first = members.first().ok_or(ProactiveError::NoChildren(group))?;
    let consistent = members.iter().all(|s| {
        s.round_id == first.round_id && s.epoch == first.epoch && s.threshold == first.threshold
    });
    if !consistent {
        return Err(ProactiveError::InconsistentGroup(group));
    }
    Ok(members)
}

/// Samples `Δ` for the children of `group` found in `shares`.
pub fn generate_renewal<R: RngCore + ?Sized>(
    group: NodeRef,
    shares: &BTreeMap<UserId, ShareRecord>,
    curve: Option<&Curve>,
    rng: &mut R,
) -> Result<RenewalPlan, ProactiveError> {
    let members = group_members(group, shares)?;
    let field = members[0].value.field();
    let degree = members[0].threshold - 1;
    let delta = Polynomial::sample(rng, degree, field.zero());
    let commitments = match curve {
        Some(curve) => delta.coefficients()[1..]
            .iter()
            .map(|c| curve.mul_generator(c))
            .collect::<Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };
    let bundles = members
        .iter()
        .map(|share| {
            Ok(RenewalBundle {
                from: group,
                to: share.owner,
                epoch: share.epoch + 1,
                delta_eval: delta.eval(&share.eval_point)?,
                commitments: commitments.clone(),
            })
        })
        .collect::<Result<Vec<_>, ProactiveError>>()?;
    Ok(RenewalPlan {
        group,
        delta,
        bundles,
    })
}

/// Checks `delta_eval·G = Σ_h x^h·Θ_h`. Without a curve there is nothing to
/// check against and every bundle is accepted.
pub fn verify_renewal(
    bundle: &RenewalBundle,
    eval_point: &FieldElement,
    curve: Option<&Curve>,
) -> bool {
    let Some(curve) = curve else {
        return true;
    };
    let check = || -> Result<bool, CurveError> {
        let lhs = curve.mul_generator(&bundle.delta_eval)?;
        let mut rhs = CurvePoint::Identity;
        let mut power = eval_point.clone();
        for theta in &bundle.commitments {
            rhs = curve.add(&rhs, &curve.mul(&power, theta)?)?;
            power = &power * eval_point;
        }
        Ok(lhs == rhs)
    };
    check().unwrap_or(false)
}

/// Adds the bundle's value to the share after verifying it.
pub fn apply_renewal(
    share: &ShareRecord,
    bundle: &RenewalBundle,
    curve: Option<&Curve>,
) -> Result<ShareRecord, ProactiveError> {
    if bundle.to != share.owner {
        return Err(ProactiveError::WrongRecipient {
            to: bundle.to,
            owner: share.owner,
        });
    }
    if bundle.epoch != share.epoch + 1 {
        return Err(ProactiveError::EpochSkew {
            share: share.epoch,
            bundle: bundle.epoch,
        });
    }
    if !verify_renewal(bundle, &share.eval_point, curve) {
        return Err(ProactiveError::UnverifiedBundle(share.owner));
    }
    Ok(ShareRecord {
        value: &share.value + &bundle.delta_eval,
        epoch: bundle.epoch,
        ..share.clone()
    })
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claimer: UserId,
    pub accused: NodeRef,
    pub epoch: u64,
}

/// An honest child's claim; only permitted after a failed verification.
pub fn file_claim(
    claimer: UserId,
    accused: NodeRef,
    epoch: u64,
    verified: bool,
) -> Result<ClaimRecord, ProactiveError> {
    if verified {
        return Err(ProactiveError::ClaimNotPermitted(claimer));
    }
    Ok(ClaimRecord {
        claimer,
        accused,
        epoch,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictOutcome {
    AccusedCompromised,
    ClaimersCompromised,
    NoAction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub epoch: u64,
    pub accused: NodeRef,
    pub outcome: VerdictOutcome,
    pub supporting_claims: usize,
    pub claimers: BTreeSet<UserId>,
}

/// Applies the `(n − k)` rule to the claims against one node in one epoch.
/// Repeated claims from one child count once.
pub fn resolve_claims(
    accused: NodeRef,
    epoch: u64,
    claims: &[ClaimRecord],
    n: usize,
    k: usize,
) -> Result<Verdict, ProactiveError> {
    if claims
        .iter()
        .any(|c| c.accused != accused || c.epoch != epoch)
    {
        return Err(ProactiveError::MixedAccused);
    }
    let claimers: BTreeSet<UserId> = claims.iter().map(|c| c.claimer).collect();
    let outcome = if claimers.is_empty() {
        VerdictOutcome::NoAction
    } else if claimers.len() >= n.saturating_sub(k) {
        VerdictOutcome::AccusedCompromised
    } else {
        VerdictOutcome::ClaimersCompromised
    };
    Ok(Verdict {
        epoch,
        accused,
        outcome,
        supporting_claims: claimers.len(),
        claimers,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TamperKind {
    /// Every child receives `Δ(x_j) + 1`.
    #[default]
    DeltaEval,
    /// `Θ_1` is replaced by `Θ_1 + G`. With no commitments (threshold 1) the
    /// delta values are tampered instead.
    Commitment,
}

/// Deviations the adversary forces on one renewal round.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interference {
    /// Compromised subtree roots and how they corrupt their bundles.
    pub tamper: BTreeMap<NodeRef, TamperKind>,
    /// Compromised children that accuse their parent regardless of
    /// verification.
    pub false_claimers: BTreeSet<UserId>,
    /// Compromised children that file no claim even when verification fails.
    pub silenced: BTreeSet<UserId>,
}

impl Interference {
    pub fn is_empty(&self) -> bool {
        self.tamper.is_empty() && self.false_claimers.is_empty() && self.silenced.is_empty()
    }
}

pub fn tamper_bundles(bundles: &mut [RenewalBundle], kind: TamperKind, curve: Option<&Curve>) {
    let commitment_target = match (kind, curve) {
        (TamperKind::Commitment, Some(curve))
            if bundles.iter().all(|b| !b.commitments.is_empty()) =>
        {
            Some(curve)
        }
        _ => None,
    };
    for bundle in bundles {
        match commitment_target {
            Some(curve) => {
                let shifted = curve
                    .add(&bundle.commitments[0], curve.generator())
                    .expect("commitments are curve points");
                bundle.commitments[0] = shifted;
            }
            None => {
                bundle.delta_eval = &bundle.delta_eval + &bundle.delta_eval.field().one();
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenewalMessages {
    pub sealed_deltas: u64,
    pub commitment_multicasts: u64,
    pub claims: u64,
}

impl RenewalMessages {
    pub fn total(&self) -> u64 {
        self.sealed_deltas + self.commitment_multicasts + self.claims
    }
}

#[derive(Clone, Debug)]
pub struct RenewalOutcome {
    /// Every input share, renewed where its group's renewal went through.
    pub shares: BTreeMap<UserId, ShareRecord>,
    pub bundles: Vec<RenewalBundle>,
    pub claims: Vec<ClaimRecord>,
    pub verdicts: Vec<Verdict>,
    pub messages: RenewalMessages,
    /// Nodes found compromised and restored to honest behavior.
    pub cleansed: BTreeSet<UserId>,
    /// Groups whose renewal was dropped and retried next epoch.
    pub discarded: BTreeSet<NodeRef>,
}

/// Groups that renew: every parent of an active share.
pub fn renewal_groups(
    tree: &HierarchyTree,
    shares: &BTreeMap<UserId, ShareRecord>,
) -> Vec<NodeRef> {
    let groups: BTreeSet<NodeRef> = shares
        .values()
        .filter(|s| tree.is_active(s.owner))
        .map(|s| s.group)
        .collect();
    groups.into_iter().collect()
}

/// One epoch of renewal across the tree. Shares of inactive users are
/// carried over untouched.
pub fn renewal_round<R: RngCore + ?Sized>(
    tree: &HierarchyTree,
    shares: &BTreeMap<UserId, ShareRecord>,
    clock: &mut EpochClock,
    interference: &Interference,
    rng: &mut R,
) -> Result<RenewalOutcome, ProactiveError> {
    let order = renewal_groups(tree, shares);
    renewal_round_in_order(tree, shares, clock, interference, &order, rng)
}

/// [`renewal_round`] processing the groups in `order`. Each group draws from
/// its own stream of one round seed, so the order does not change the result.
pub fn renewal_round_in_order<R: RngCore + ?Sized>(
    tree: &HierarchyTree,
    shares: &BTreeMap<UserId, ShareRecord>,
    clock: &mut EpochClock,
    interference: &Interference,
    order: &[NodeRef],
    rng: &mut R,
) -> Result<RenewalOutcome, ProactiveError> {
    let curve = tree.curve();
    let epoch = clock.global_epoch();
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);

    let active: BTreeMap<UserId, ShareRecord> = shares
        .iter()
        .filter(|(id, _)| tree.is_active(**id))
        .map(|(id, s)| (*id, s.clone()))
        .collect();

    let mut outcome = RenewalOutcome {
        shares: shares.clone(),
        bundles: Vec::new(),
        claims: Vec::new(),
        verdicts: Vec::new(),
        messages: RenewalMessages::default(),
        cleansed: BTreeSet::new(),
        discarded: BTreeSet::new(),
    };
    let mut advanced = Vec::new();

    for &group in order {
        let members = group_members(group, &active)?;
        if members[0].epoch != clock.group_epoch(group) {
            return Err(ProactiveError::EpochSkew {
                share: members[0].epoch,
                bundle: clock.group_epoch(group) + 1,
            });
        }
        let n = members.len();
        let k = members[0].threshold - 1;

        let mut group_rng = ChaCha20Rng::from_seed(seed);
        group_rng.set_stream(group.index());
        let mut plan = generate_renewal(group, &active, curve, &mut group_rng)?;
        if let Some(kind) = interference.tamper.get(&group) {
            tamper_bundles(&mut plan.bundles, *kind, curve);
        }
        outcome.messages.sealed_deltas += plan.bundles.len() as u64;
        outcome.messages.commitment_multicasts += 1;

        let mut claims = Vec::new();
        let mut renewed = Vec::with_capacity(n);
        let mut all_verified = true;
        for bundle in &plan.bundles {
            let share = &active[&bundle.to];
            let verified = verify_renewal(bundle, &share.eval_point, curve);
            all_verified &= verified;
            if interference.false_claimers.contains(&bundle.to) {
                claims.push(ClaimRecord {
                    claimer: bundle.to,
                    accused: group,
                    epoch,
                });
            } else if !verified && !interference.silenced.contains(&bundle.to) {
                claims.push(file_claim(bundle.to, group, epoch, verified)?);
            }
            if verified {
                renewed.push(apply_renewal(share, bundle, curve)?);
            }
        }
        outcome.messages.claims += claims.len() as u64;

        let verdict = resolve_claims(group, epoch, &claims, n, k)?;
        match verdict.outcome {
            VerdictOutcome::AccusedCompromised => {
                if let NodeRef::User(id) = group {
                    outcome.cleansed.insert(id);
                }
            }
            VerdictOutcome::ClaimersCompromised => {
                outcome.cleansed.extend(verdict.claimers.iter().copied());
            }
            VerdictOutcome::NoAction => {}
        }
        if all_verified && verdict.outcome != VerdictOutcome::AccusedCompromised {
            for share in renewed {
                outcome.shares.insert(share.owner, share);
            }
            advanced.push(group);
        } else {
            outcome.discarded.insert(group);
        }
        if verdict.outcome != VerdictOutcome::NoAction {
            outcome.verdicts.push(verdict);
        }
        outcome.claims.extend(claims);
        outcome.bundles.extend(plan.bundles);
    }

    for group in advanced {
        clock.advance_group(group);
    }
    outcome.verdicts.sort_by_key(|v| v.accused);
    outcome.claims.sort();
    outcome.bundles.sort_by_key(|a| (a.from, a.to));
    Ok(outcome)
}
