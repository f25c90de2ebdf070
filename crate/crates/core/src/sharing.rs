//! Threshold factors, the split operation, hierarchical dealing and
//! bottom-up reconstruction.
//!
//! The server holds a secret `D` as the free coefficient of a root
//! polynomial. Working down the tree in level order, every user `U_i` gets the
//! evaluation of its parent's polynomial at its evaluation point. A leaf keeps
//! that evaluation as its share. An internal user splits it into `D_i` (its
//! share) and `D'_i` (retained by the server), and `D'_i` becomes the free
//! coefficient of a fresh polynomial for `U_i`'s children.
//!
//! Reconstruction runs the other way: a sibling group interpolates its
//! parent's `D'`, the parent adds its own `D_i`, and so on up to the root.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use num_bigint::BigUint;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{lagrange_at_zero, AlgebraError, Field, FieldElement, Polynomial};
use crate::hierarchy::{
    derive_round_key_server, HierarchyError, HierarchyTree, NodeRef, RoundState, UserId,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SharingError {
    #[error("TF must be in (0,1], got {0}/{1}")]
    InvalidThresholdFactor(u32, u32),
    #[error("round {round} began with {user} active, but a leave has since blocked its subtree")]
    InactiveSubtree { round: u64, user: UserId },
    #[error("evaluation points of siblings collide or vanish under group {0}")]
    EvalPointCollision(NodeRef),
    #[error("no evaluation point for {0}")]
    MissingEvalPoint(UserId),
    #[error("the hierarchy has no active level-1 users")]
    EmptyHierarchy,
    #[error("group {group} has {available} usable shares but needs {required}")]
    InsufficientShares {
        group: NodeRef,
        available: usize,
        required: usize,
    },
    #[error("shares used for group {0} come from different rounds or epochs")]
    StaleEpoch(NodeRef),
    #[error("coalition shares mix epochs within group {0}")]
    MixedEpochs(NodeRef),
    #[error("no share for participant {0}")]
    MissingShare(UserId),
    #[error("participant {0} is not an active member")]
    InactiveParticipant(UserId),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// Exact rational in (0, 1]; the quorum of a group of `n` is `ceil(TF * n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholdFactor", into = "RawThresholdFactor")]
pub struct ThresholdFactor {
    numerator: u32,
    denominator: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThresholdFactor {
    num: u32,
    den: u32,
}

impl TryFrom<RawThresholdFactor> for ThresholdFactor {
    type Error = SharingError;

    fn try_from(raw: RawThresholdFactor) -> Result<Self, Self::Error> {
        ThresholdFactor::new(raw.num, raw.den)
    }
}

impl From<ThresholdFactor> for RawThresholdFactor {
    fn from(tf: ThresholdFactor) -> Self {
        RawThresholdFactor {
            num: tf.numerator,
            den: tf.denominator,
        }
    }
}

impl ThresholdFactor {
    pub fn new(numerator: u32, denominator: u32) -> Result<Self, SharingError> {
        if numerator == 0 || denominator == 0 || numerator > denominator {
            return Err(SharingError::InvalidThresholdFactor(numerator, denominator));
        }
        Ok(Self {
            numerator,
            denominator,
        })
    }

    pub fn numerator(self) -> u32 {
        self.numerator
    }

    pub fn denominator(self) -> u32 {
        self.denominator
    }
}

impl fmt::Display for ThresholdFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

/// `ceil(TF * n)` in integer arithmetic. For `n >= 1` the result is in `[1, n]`.
pub fn compute_threshold(tf: ThresholdFactor, n: usize) -> usize {
    let num = tf.numerator as u128 * n as u128;
    num.div_ceil(tf.denominator as u128) as usize
}

/// Splits `value` into two nonzero parts that sum to it.
pub fn split<R: RngCore + ?Sized>(
    value: &FieldElement,
    rng: &mut R,
) -> (FieldElement, FieldElement) {
    let field = value.field();
    loop {
        let first = field.random_nonzero(rng);
        let second = value - &first;
        if !second.is_zero() {
            return (first, second);
        }
    }
}

/// How a user's evaluation point is chosen for a round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalPointMode {
    /// x-coordinate of the user's round key, reduced mod ord(G).
    #[default]
    RoundKey,
    /// The user id itself, reduced into the field.
    UserId,
}

/// Evaluation point of every active user for `round`, as the server computes
/// them. Siblings must get pairwise distinct, nonzero points.
pub fn assign_eval_points(
    tree: &HierarchyTree,
    round: &RoundState,
    mode: EvalPointMode,
) -> Result<BTreeMap<UserId, FieldElement>, SharingError> {
    let field = tree.field();
    let mut points = BTreeMap::new();
    for id in tree.active_users() {
        let point = match mode {
            EvalPointMode::UserId => field.element(id.get()),
            EvalPointMode::RoundKey => {
                let curve = tree.curve().ok_or(HierarchyError::NoCurve)?;
                let node = tree.node(id).expect("active user exists");
                let group_key = node.group_key.as_ref().ok_or(HierarchyError::NoKeys(id))?;
                let round_key = derive_round_key_server(curve, round, group_key)?;
                curve.x_scalar(&round_key).unwrap_or_else(|| field.zero())
            }
        };
        points.insert(id, point);
    }
    for group in tree.active_internal() {
        let mut seen = BTreeSet::new();
        for child in tree.active_children(group) {
            let x = &points[&child];
            if x.is_zero() || !seen.insert(x.value().clone()) {
                return Err(SharingError::EvalPointCollision(group));
            }
        }
    }
    Ok(points)
}

/// Begins rounds until the evaluation points are usable, giving up after
/// `max_attempts`. Only round-key points can be fixed by a fresh server
/// secret; user-id collisions fail immediately.
pub fn prepare_round<R: RngCore + ?Sized>(
    tree: &mut HierarchyTree,
    mode: EvalPointMode,
    max_attempts: usize,
    rng: &mut R,
) -> Result<(RoundState, BTreeMap<UserId, FieldElement>), SharingError> {
    let mut last = SharingError::EmptyHierarchy;
    for _ in 0..max_attempts.max(1) {
        let round = tree.begin_round(rng)?;
        match assign_eval_points(tree, &round, mode) {
            Ok(points) => return Ok((round, points)),
            Err(err @ SharingError::EvalPointCollision(_)) if mode == EvalPointMode::RoundKey => {
                last = err;
            }
            Err(err) => return Err(err),
        }
    }
    Err(last)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShareKind {
    /// The full evaluation of the parent's polynomial.
    Leaf,
    /// One part of a split evaluation; the server keeps the other.
    Split,
}

/// The single share a user stores.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareRecord {
    pub owner: UserId,
    /// Parent position; the owner's sibling group.
    pub group: NodeRef,
    pub eval_point: FieldElement,
    /// `D_i`.
    pub value: FieldElement,
    pub kind: ShareKind,
    /// Quorum of the owner's sibling group.
    pub threshold: usize,
    pub round_id: u64,
    /// Renewal epoch of the owner's sibling group.
    pub epoch: u64,
}

/// What the server keeps after dealing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DealerState {
    pub secret: FieldElement,
    pub round_id: u64,
    /// `D'_i` for every internal user.
    pub retained: BTreeMap<UserId, FieldElement>,
    /// `q_root` under [`NodeRef::Server`] and `q_i` for every internal user.
    pub polynomials: BTreeMap<NodeRef, Polynomial>,
    /// Quorum of the children of each internal position.
    pub thresholds: BTreeMap<NodeRef, usize>,
}

impl DealerState {
    pub fn threshold_root(&self) -> usize {
        self.thresholds[&NodeRef::Server]
    }
}

/// Result of one distribution round.
#[derive(Clone, Debug)]
pub struct Dealing {
    pub dealer: DealerState,
    pub shares: BTreeMap<UserId, ShareRecord>,
    /// Order in which the server served the users' requests.
    pub order: Vec<UserId>,
}

/// Deals `secret` over the active part of `tree` for `round`.
pub fn distribute<R: RngCore + ?Sized>(
    tree: &HierarchyTree,
    secret: &FieldElement,
    round: &RoundState,
    eval_points: &BTreeMap<UserId, FieldElement>,
    tf: ThresholdFactor,
    rng: &mut R,
) -> Result<Dealing, SharingError> {
    let field = tree.field();
    if secret.field() != field {
        return Err(AlgebraError::FieldMismatch.into());
    }
    let active = tree.active_users();
    if let Some(user) = round.participants.iter().find(|u| !active.contains(u)) {
        return Err(SharingError::InactiveSubtree {
            round: round.round_id,
            user: *user,
        });
    }

    let level_one = tree.active_children(NodeRef::Server);
    if level_one.is_empty() {
        return Err(SharingError::EmptyHierarchy);
    }
    let threshold_root = compute_threshold(tf, level_one.len());
    let mut polynomials = BTreeMap::new();
    let mut thresholds = BTreeMap::new();
    polynomials.insert(
        NodeRef::Server,
        Polynomial::sample(rng, threshold_root - 1, secret.clone()),
    );
    thresholds.insert(NodeRef::Server, threshold_root);

    let mut retained = BTreeMap::new();
    let mut shares = BTreeMap::new();
    let mut order = Vec::new();
    let mut queue: VecDeque<UserId> = level_one.into_iter().collect();
    while let Some(id) = queue.pop_front() {
        order.push(id);
        let node = tree.node(id).expect("active user exists");
        let x = eval_points
            .get(&id)
            .ok_or(SharingError::MissingEvalPoint(id))?
            .clone();
        let evaluation = polynomials[&node.parent].eval(&x)?;
        let children = tree.active_children(NodeRef::User(id));
        let (value, kind) = if children.is_empty() {
            (evaluation, ShareKind::Leaf)
        } else {
            let (mine, kept) = split(&evaluation, rng);
            let threshold = compute_threshold(tf, children.len());
            polynomials.insert(
                NodeRef::User(id),
                Polynomial::sample(rng, threshold - 1, kept.clone()),
            );
            thresholds.insert(NodeRef::User(id), threshold);
            retained.insert(id, kept);
            queue.extend(children);
            (mine, ShareKind::Split)
        };
        shares.insert(
            id,
            ShareRecord {
                owner: id,
                group: node.parent,
                eval_point: x,
                value,
                kind,
                threshold: thresholds[&node.parent],
                round_id: round.round_id,
                epoch: 0,
            },
        );
    }

    Ok(Dealing {
        dealer: DealerState {
            secret: secret.clone(),
            round_id: round.round_id,
            retained,
            polynomials,
            thresholds,
        },
        shares,
        order,
    })
}

fn members_by_group(shares: &BTreeMap<UserId, ShareRecord>) -> BTreeMap<NodeRef, Vec<UserId>> {
    let mut groups: BTreeMap<NodeRef, Vec<UserId>> = BTreeMap::new();
    for share in shares.values() {
        groups.entry(share.group).or_default().push(share.owner);
    }
    groups
}

struct Reconstruction<'a> {
    shares: &'a BTreeMap<UserId, ShareRecord>,
    participating: &'a BTreeSet<UserId>,
    groups: BTreeMap<NodeRef, Vec<UserId>>,
}

impl Reconstruction<'_> {
    /// Value at zero of `group`'s polynomial: `D` for the server, `D'_i` for a
    /// user.
    fn group_value(&self, group: NodeRef) -> Result<FieldElement, SharingError> {
        let members = self.groups.get(&group).map(Vec::as_slice).unwrap_or(&[]);
        let required = members
            .first()
            .map(|m| self.shares[m].threshold)
            .unwrap_or(1);
        let mut points = Vec::with_capacity(required);
        let mut version = None;
        let mut deeper = None;
        for member in members.iter().filter(|m| self.participating.contains(m)) {
            let share = &self.shares[member];
            let this_version = (share.round_id, share.epoch);
            if *version.get_or_insert(this_version) != this_version {
                return Err(SharingError::StaleEpoch(group));
            }
            match self.member_value(share) {
                Ok(v) => points.push((share.eval_point.clone(), v)),
                Err(e) => {
                    deeper.get_or_insert(e);
                }
            }
            if points.len() == required {
                return Ok(lagrange_at_zero(&points)?);
            }
        }
        Err(deeper.unwrap_or(SharingError::InsufficientShares {
            group,
            available: points.len(),
            required,
        }))
    }

    /// The parent's polynomial evaluated at this member's point.
    fn member_value(&self, share: &ShareRecord) -> Result<FieldElement, SharingError> {
        match share.kind {
            ShareKind::Leaf => Ok(share.value.clone()),
            ShareKind::Split => {
                let retained = self.group_value(NodeRef::User(share.owner))?;
                Ok(&share.value + &retained)
            }
        }
    }
}

/// Recovers the value at zero of `group`'s polynomial from the shares of the
/// participating users: `D` for the server, `D'_i` for an internal user.
pub fn recover_group_value(
    tree: &HierarchyTree,
    shares: &BTreeMap<UserId, ShareRecord>,
    participating: &BTreeSet<UserId>,
    group: NodeRef,
) -> Result<FieldElement, SharingError> {
    for id in participating {
        if !shares.contains_key(id) {
            return Err(SharingError::MissingShare(*id));
        }
        if !tree.is_active(*id) {
            return Err(SharingError::InactiveParticipant(*id));
        }
    }
    Reconstruction {
        shares,
        participating,
        groups: members_by_group(shares),
    }
    .group_value(group)
}

/// Reconstructs the secret bottom-up from the participants' shares.
pub fn reconstruct(
    tree: &HierarchyTree,
    shares: &BTreeMap<UserId, ShareRecord>,
    participating: &BTreeSet<UserId>,
) -> Result<FieldElement, SharingError> {
    recover_group_value(tree, shares, participating, NodeRef::Server)
}

/// Whether a coalition can derive the secret from the shares it holds, with no
/// server-retained values.
///
/// The coalition learns `D'_i` once it knows the evaluations of at least
/// `threshold_i` children of `i`, knows an internal child's evaluation once it
/// knows both its share and its `D'`, and knows `D` once it knows enough
/// level-1 evaluations. All shares must come from one epoch per sibling group.
pub fn knowledge_closure(coalition: &[ShareRecord]) -> Result<bool, SharingError> {
    let mut versions: BTreeMap<NodeRef, (u64, u64)> = BTreeMap::new();
    let mut owners = BTreeSet::new();
    for share in coalition {
        let version = (share.round_id, share.epoch);
        if *versions.entry(share.group).or_insert(version) != version || !owners.insert(share.owner)
        {
            return Err(SharingError::MixedEpochs(share.group));
        }
    }
    Ok(closure_over_versions(coalition))
}

/// [`knowledge_closure`] for an adversary that may hold several versions of
/// the same shares. Evaluations are only combined within one version of a
/// sibling group; a group's `D'` is the same in every epoch of a round, so
/// what is learned about it carries across epochs.
pub fn closure_over_versions(shares: &[ShareRecord]) -> bool {
    // Known evaluation: (round, group, epoch, member).
    let mut known_eval: BTreeSet<(u64, NodeRef, u64, UserId)> = BTreeSet::new();
    // Known group value at zero: (round, group).
    let mut known_zero: BTreeSet<(u64, NodeRef)> = BTreeSet::new();
    let mut thresholds: BTreeMap<(u64, NodeRef), usize> = BTreeMap::new();
    for share in shares {
        thresholds.insert((share.round_id, share.group), share.threshold);
    }
    loop {
        let mut changed = false;
        for share in shares {
            let learned = match share.kind {
                ShareKind::Leaf => true,
                ShareKind::Split => {
                    known_zero.contains(&(share.round_id, NodeRef::User(share.owner)))
                }
            };
            if learned {
                changed |=
                    known_eval.insert((share.round_id, share.group, share.epoch, share.owner));
            }
        }
        let mut counts: BTreeMap<(u64, NodeRef, u64), usize> = BTreeMap::new();
        for (round, group, epoch, _) in &known_eval {
            *counts.entry((*round, *group, *epoch)).or_default() += 1;
        }
        for ((round, group, _), count) in counts {
            if count >= thresholds[&(round, group)] {
                changed |= known_zero.insert((round, group));
            }
        }
        if !changed {
            break;
        }
    }
    known_zero
        .iter()
        .any(|(_, group)| *group == NodeRef::Server)
}

/// A field element from a small integer, for tests and examples.
pub fn scalar(field: &Field, value: u64) -> FieldElement {
    field.element(BigUint::from(value))
}
