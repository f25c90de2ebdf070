//! The user tree: registration, group keys, per-round keys, leave and rejoin.
//!
//! The root of the tree is the trusted server ([`NodeRef::Server`]); every
//! user hangs below it. Registration tokens travel out of band, so they are
//! written straight into the tree and never appear on the simulated network.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use num_bigint::BigUint;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{Field, FieldElement};
use crate::curve::{Curve, CurveError, CurvePoint};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HierarchyError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("parent {0} is not active")]
    ParentInactive(NodeRef),
    #[error("user {0} is already inactive")]
    AlreadyInactive(UserId),
    #[error("user {0} is not active")]
    Inactive(UserId),
    #[error("position {0} is occupied")]
    PositionOccupied(UserId),
    #[error("no free identities or group-key x-coordinates left")]
    TreeFull,
    #[error("hierarchy has no active users")]
    EmptyHierarchy,
    #[error("user {0} has no key material (tree runs without a curve)")]
    NoKeys(UserId),
    #[error("round keys need a curve")]
    NoCurve,
    #[error(transparent)]
    Curve(#[from] CurveError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(u64);

impl UserId {
    pub fn new(id: u64) -> Option<Self> {
        (id != 0).then_some(Self(id))
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "U{}", self.0)
    }
}

/// A position in the tree that can own children: the root server or a user.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRef {
    Server,
    User(UserId),
}

impl NodeRef {
    pub fn user(self) -> Option<UserId> {
        match self {
            NodeRef::Server => None,
            NodeRef::User(id) => Some(id),
        }
    }

    /// Small integer naming this position; the server is 0.
    pub fn index(self) -> u64 {
        match self {
            NodeRef::Server => 0,
            NodeRef::User(id) => id.get(),
        }
    }
}

impl From<UserId> for NodeRef {
    fn from(id: UserId) -> Self {
        NodeRef::User(id)
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Server => f.write_str("server"),
            NodeRef::User(id) => id.fmt(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HierarchyNode {
    pub id: UserId,
    pub parent: NodeRef,
    pub children: Vec<UserId>,
    /// Registration token; known to the node and the server only.
    pub rtok: Option<FieldElement>,
    pub group_key: Option<CurvePoint>,
    pub round_key: Option<CurvePoint>,
    /// The member in this position left and nobody has taken its place.
    pub vacated: bool,
    /// Neither this node nor any ancestor is vacated.
    pub active: bool,
}

/// Key material handed out at registration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Registration {
    pub id: UserId,
    pub rtok: Option<FieldElement>,
    pub group_key: Option<CurvePoint>,
}

/// One round of distribution: the server's secret scalar and public round key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundState {
    pub round_id: u64,
    /// `s_s`; stays with the server.
    pub server_secret: Option<FieldElement>,
    /// `P_s = s_s * G`.
    pub public_key: Option<CurvePoint>,
    /// Active users at the time the round began.
    pub participants: BTreeSet<UserId>,
}

#[derive(Clone, Debug)]
pub struct HierarchyTree {
    curve: Option<Curve>,
    field: Field,
    nodes: BTreeMap<UserId, HierarchyNode>,
    root_children: Vec<UserId>,
    /// The server's registry of group keys of current members.
    server_keys: BTreeMap<UserId, CurvePoint>,
    next_id: u64,
    id_limit: Option<u64>,
    rounds_started: u64,
}

impl HierarchyTree {
    /// Tree whose users get registration tokens and group keys on `curve`.
    pub fn with_curve(curve: Curve) -> Self {
        let field = curve.scalar_field().clone();
        Self::build(Some(curve), field)
    }

    /// Tree without key material; shares live in `field`.
    pub fn without_curve(field: Field) -> Self {
        Self::build(None, field)
    }

    fn build(curve: Option<Curve>, field: Field) -> Self {
        Self {
            curve,
            field,
            nodes: BTreeMap::new(),
            root_children: Vec::new(),
            server_keys: BTreeMap::new(),
            next_id: 1,
            id_limit: None,
            rounds_started: 0,
        }
    }

    /// Caps user identities at `limit` (inclusive).
    pub fn with_id_limit(mut self, limit: u64) -> Self {
        self.id_limit = Some(limit);
        self
    }

    pub fn curve(&self) -> Option<&Curve> {
        self.curve.as_ref()
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn node(&self, id: UserId) -> Option<&HierarchyNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &HierarchyNode> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn server_keys(&self) -> &BTreeMap<UserId, CurvePoint> {
        &self.server_keys
    }

    pub fn rounds_started(&self) -> u64 {
        self.rounds_started
    }

    pub fn is_active(&self, id: UserId) -> bool {
        self.nodes.get(&id).is_some_and(|n| n.active)
    }

    fn parent_active(&self, parent: NodeRef) -> bool {
        match parent {
            NodeRef::Server => true,
            NodeRef::User(id) => self.is_active(id),
        }
    }

    /// All children of a position, active or not, in registration order.
    pub fn children(&self, of: NodeRef) -> &[UserId] {
        match of {
            NodeRef::Server => &self.root_children,
            NodeRef::User(id) => self.nodes.get(&id).map_or(&[], |n| &n.children),
        }
    }

    pub fn active_children(&self, of: NodeRef) -> Vec<UserId> {
        self.children(of)
            .iter()
            .copied()
            .filter(|c| self.is_active(*c))
            .collect()
    }

    /// Level of a user; users directly below the server are level 1.
    pub fn level(&self, id: UserId) -> Option<usize> {
        let mut level = 1;
        let mut node = self.nodes.get(&id)?;
        while let NodeRef::User(parent) = node.parent {
            node = self.nodes.get(&parent)?;
            level += 1;
        }
        Some(level)
    }

    /// Users in breadth-first order (level 1 first, siblings in
    /// registration order).
    pub fn level_order(&self) -> Vec<UserId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut queue: VecDeque<UserId> = self.root_children.iter().copied().collect();
        while let Some(id) = queue.pop_front() {
            out.push(id);
            queue.extend(self.children(NodeRef::User(id)).iter().copied());
        }
        out
    }

    pub fn active_users(&self) -> BTreeSet<UserId> {
        self.nodes
            .values()
            .filter(|n| n.active)
            .map(|n| n.id)
            .collect()
    }

    /// Every position that currently has at least one active child.
    pub fn active_internal(&self) -> Vec<NodeRef> {
        std::iter::once(NodeRef::Server)
            .chain(self.level_order().into_iter().map(NodeRef::User))
            .filter(|n| self.parent_active(*n) && !self.active_children(*n).is_empty())
            .collect()
    }

    fn fresh_id(&mut self) -> Result<UserId, HierarchyError> {
        let id = self.next_id;
        if self.id_limit.is_some_and(|limit| id > limit) || id == u64::MAX {
            return Err(HierarchyError::TreeFull);
        }
        self.next_id += 1;
        Ok(UserId(id))
    }

    /// Draws a registration token whose group key has an x-coordinate no
    /// current member uses.
    fn issue_keys<R: RngCore + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<(Option<FieldElement>, Option<CurvePoint>), HierarchyError> {
        let Some(curve) = &self.curve else {
            return Ok((None, None));
        };
        let used: BTreeSet<&BigUint> = self.server_keys.values().filter_map(|k| k.x()).collect();
        if BigUint::from(used.len()) >= curve.distinct_x_capacity() {
            return Err(HierarchyError::TreeFull);
        }
        loop {
            let rtok = curve.scalar_field().random_nonzero(rng);
            let key = curve.mul_generator(&rtok)?;
            let x = key
                .x()
                .expect("nonzero multiple of a prime-order generator");
            if !used.contains(x) {
                return Ok((Some(rtok), Some(key)));
            }
        }
    }

    /// Registers a new user under `parent`.
    pub fn register<R: RngCore + ?Sized>(
        &mut self,
        parent: NodeRef,
        rng: &mut R,
    ) -> Result<Registration, HierarchyError> {
        if let NodeRef::User(p) = parent {
            if !self.nodes.contains_key(&p) {
                return Err(HierarchyError::UnknownUser(p));
            }
        }
        if !self.parent_active(parent) {
            return Err(HierarchyError::ParentInactive(parent));
        }
        let (rtok, group_key) = self.issue_keys(rng)?;
        let id = self.fresh_id()?;
        if let Some(key) = &group_key {
            self.server_keys.insert(id, key.clone());
        }
        self.nodes.insert(
            id,
            HierarchyNode {
                id,
                parent,
                children: Vec::new(),
                rtok: rtok.clone(),
                group_key: group_key.clone(),
                round_key: None,
                vacated: false,
                active: true,
            },
        );
        match parent {
            NodeRef::Server => self.root_children.push(id),
            NodeRef::User(p) => self.nodes.get_mut(&p).expect("checked").children.push(id),
        }
        Ok(Registration {
            id,
            rtok,
            group_key,
        })
    }

    /// Starts a new distribution round with a fresh server secret.
    pub fn begin_round<R: RngCore + ?Sized>(
        &mut self,
        rng: &mut R,
    ) -> Result<RoundState, HierarchyError> {
        let secret = self
            .curve
            .as_ref()
            .map(|c| c.scalar_field().random_nonzero(rng));
        self.begin_round_inner(secret)
    }

    /// Starts a round with a chosen server secret.
    pub fn begin_round_with(
        &mut self,
        server_secret: FieldElement,
    ) -> Result<RoundState, HierarchyError> {
        if self.curve.is_none() {
            return Err(HierarchyError::NoCurve);
        }
        self.begin_round_inner(Some(server_secret))
    }

    fn begin_round_inner(
        &mut self,
        server_secret: Option<FieldElement>,
    ) -> Result<RoundState, HierarchyError> {
        let participants = self.active_users();
        if participants.is_empty() {
            return Err(HierarchyError::EmptyHierarchy);
        }
        let public_key = match (&self.curve, &server_secret) {
            (Some(curve), Some(s)) => Some(curve.mul_generator(s)?),
            _ => None,
        };
        // Each active user derives its round key from the broadcast.
        if let (Some(curve), Some(ps)) = (&self.curve, &public_key) {
            for node in self.nodes.values_mut() {
                node.round_key = if node.active {
                    Some(derive_round_key_user(curve, node, ps)?)
                } else {
                    None
                };
            }
        }
        self.rounds_started += 1;
        Ok(RoundState {
            round_id: self.rounds_started,
            server_secret,
            public_key,
            participants,
        })
    }

    /// Marks `id` as departed and deactivates its whole subtree. Returns the
    /// users that were active before and are inactive now.
    pub fn leave(&mut self, id: UserId) -> Result<BTreeSet<UserId>, HierarchyError> {
        let node = self
            .nodes
            .get_mut(&id)
            .ok_or(HierarchyError::UnknownUser(id))?;
        if !node.active {
            return Err(HierarchyError::AlreadyInactive(id));
        }
        node.vacated = true;
        self.server_keys.remove(&id);
        let before = self.active_users();
        self.refresh_activity();
        Ok(before.difference(&self.active_users()).copied().collect())
    }

    /// Registers a fresh user into a vacated position; the orphaned subtree
    /// becomes active again (except below other vacated positions).
    pub fn rejoin<R: RngCore + ?Sized>(
        &mut self,
        position: UserId,
        rng: &mut R,
    ) -> Result<UserId, HierarchyError> {
        let old = self
            .nodes
            .get(&position)
            .ok_or(HierarchyError::UnknownUser(position))?;
        if !old.vacated {
            return Err(HierarchyError::PositionOccupied(position));
        }
        let parent = old.parent;
        let children = old.children.clone();
        let (rtok, group_key) = self.issue_keys(rng)?;
        let id = self.fresh_id()?;

        self.nodes.remove(&position);
        let siblings = match parent {
            NodeRef::Server => &mut self.root_children,
            NodeRef::User(p) => &mut self.nodes.get_mut(&p).expect("parent exists").children,
        };
        for slot in siblings.iter_mut().filter(|s| **s == position) {
            *slot = id;
        }
        for child in &children {
            if let Some(c) = self.nodes.get_mut(child) {
                c.parent = NodeRef::User(id);
            }
        }
        if let Some(key) = &group_key {
            self.server_keys.insert(id, key.clone());
        }
        self.nodes.insert(
            id,
            HierarchyNode {
                id,
                parent,
                children,
                rtok,
                group_key,
                round_key: None,
                vacated: false,
                active: true,
            },
        );
        self.refresh_activity();
        Ok(id)
    }

    fn refresh_activity(&mut self) {
        let mut queue: VecDeque<(UserId, bool)> =
            self.root_children.iter().map(|c| (*c, true)).collect();
        while let Some((id, parent_active)) = queue.pop_front() {
            let node = self.nodes.get_mut(&id).expect("tree links are consistent");
            node.active = parent_active && !node.vacated;
            if !node.active {
                node.round_key = None;
            }
            let active = node.active;
            queue.extend(node.children.iter().map(|c| (*c, active)));
        }
    }

    /// Replaces the whole node map; used when restoring saved state.
    pub(crate) fn restore(
        curve: Option<Curve>,
        field: Field,
        nodes: Vec<HierarchyNode>,
        root_children: Vec<UserId>,
        next_id: u64,
        id_limit: Option<u64>,
        rounds_started: u64,
    ) -> Self {
        let server_keys = nodes
            .iter()
            .filter(|n| !n.vacated)
            .filter_map(|n| n.group_key.clone().map(|k| (n.id, k)))
            .collect();
        Self {
            curve,
            field,
            nodes: nodes.into_iter().map(|n| (n.id, n)).collect(),
            root_children,
            server_keys,
            next_id,
            id_limit,
            rounds_started,
        }
    }

    pub(crate) fn next_id(&self) -> u64 {
        self.next_id
    }

    pub(crate) fn id_limit(&self) -> Option<u64> {
        self.id_limit
    }

    pub(crate) fn root_children(&self) -> &[UserId] {
        &self.root_children
    }
}

/// `K^r = rtok * P_s`, computed by the user.
pub fn derive_round_key_user(
    curve: &Curve,
    node: &HierarchyNode,
    public_round_key: &CurvePoint,
) -> Result<CurvePoint, HierarchyError> {
    if !node.active {
        return Err(HierarchyError::Inactive(node.id));
    }
    let rtok = node.rtok.as_ref().ok_or(HierarchyError::NoKeys(node.id))?;
    Ok(curve.mul(rtok, public_round_key)?)
}

/// `K^r = s_s * K^g`, computed by the server.
pub fn derive_round_key_server(
    curve: &Curve,
    round: &RoundState,
    group_key: &CurvePoint,
) -> Result<CurvePoint, HierarchyError> {
    let s = round
        .server_secret
        .as_ref()
        .ok_or(HierarchyError::NoCurve)?;
    Ok(curve.mul(s, group_key)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(7)
    }

    #[test]
    fn register_under_root() {
        let mut tree = HierarchyTree::with_curve(Curve::toy());
        let reg = tree.register(NodeRef::Server, &mut rng()).unwrap();
        assert_eq!(tree.level(reg.id), Some(1));
        let node = tree.node(reg.id).unwrap();
        let curve = tree.curve().unwrap();
        assert_eq!(
            curve.mul_generator(node.rtok.as_ref().unwrap()).unwrap(),
            *node.group_key.as_ref().unwrap()
        );
        assert_eq!(tree.server_keys()[&reg.id], reg.group_key.unwrap());
    }

    #[test]
    fn toy_tree_fills_after_nine_members() {
        let mut tree = HierarchyTree::with_curve(Curve::toy());
        let mut r = rng();
        for _ in 0..9 {
            tree.register(NodeRef::Server, &mut r).unwrap();
        }
        let xs: BTreeSet<_> = tree
            .server_keys()
            .values()
            .map(|k| k.x().cloned())
            .collect();
        assert_eq!(xs.len(), 9);
        assert_eq!(
            tree.register(NodeRef::Server, &mut r),
            Err(HierarchyError::TreeFull)
        );
    }

    #[test]
    fn id_limit_is_enforced() {
        let field = Field::new(31u8.into()).unwrap();
        let mut tree = HierarchyTree::without_curve(field).with_id_limit(2);
        let mut r = rng();
        tree.register(NodeRef::Server, &mut r).unwrap();
        tree.register(NodeRef::Server, &mut r).unwrap();
        assert_eq!(
            tree.register(NodeRef::Server, &mut r),
            Err(HierarchyError::TreeFull)
        );
    }

    #[test]
    fn register_under_inactive_parent_fails() {
        let mut tree = HierarchyTree::with_curve(Curve::small());
        let mut r = rng();
        let a = tree.register(NodeRef::Server, &mut r).unwrap().id;
        tree.leave(a).unwrap();
        assert_eq!(
            tree.register(NodeRef::User(a), &mut r),
            Err(HierarchyError::ParentInactive(NodeRef::User(a)))
        );
        let ghost = UserId::new(999).unwrap();
        assert_eq!(
            tree.register(NodeRef::User(ghost), &mut r),
            Err(HierarchyError::UnknownUser(ghost))
        );
    }

    #[test]
    fn begin_round_requires_members() {
        let mut tree = HierarchyTree::with_curve(Curve::toy());
        assert_eq!(
            tree.begin_round(&mut rng()),
            Err(HierarchyError::EmptyHierarchy)
        );
    }

    #[test]
    fn unit_server_secret_gives_generator() {
        let curve = Curve::toy();
        let mut tree = HierarchyTree::with_curve(curve.clone());
        let mut r = rng();
        let id = tree.register(NodeRef::Server, &mut r).unwrap().id;
        let round = tree.begin_round_with(curve.scalar_field().one()).unwrap();
        assert_eq!(round.public_key.as_ref(), Some(curve.generator()));
        let node = tree.node(id).unwrap();
        // s_s = 1 makes the round key equal the group key on both sides.
        assert_eq!(node.round_key, node.group_key);
        assert_eq!(
            derive_round_key_server(&curve, &round, node.group_key.as_ref().unwrap()).unwrap(),
            *node.group_key.as_ref().unwrap()
        );
        assert_eq!(
            derive_round_key_server(&curve, &round, &CurvePoint::Identity).unwrap(),
            CurvePoint::Identity
        );
    }

    #[test]
    fn round_key_of_unit_token_is_public_key() {
        let curve = Curve::toy();
        let mut node = HierarchyNode {
            id: UserId::new(1).unwrap(),
            parent: NodeRef::Server,
            children: vec![],
            rtok: Some(curve.scalar_field().one()),
            group_key: Some(curve.generator().clone()),
            round_key: None,
            vacated: false,
            active: true,
        };
        let ps = curve.mul_int(&5u8.into(), curve.generator()).unwrap();
        assert_eq!(derive_round_key_user(&curve, &node, &ps).unwrap(), ps);
        node.active = false;
        assert_eq!(
            derive_round_key_user(&curve, &node, &ps),
            Err(HierarchyError::Inactive(node.id))
        );
    }

    #[test]
    fn leave_and_rejoin() {
        let mut tree = HierarchyTree::with_curve(Curve::small());
        let mut r = rng();
        let a = tree.register(NodeRef::Server, &mut r).unwrap().id;
        let b = tree.register(NodeRef::User(a), &mut r).unwrap().id;
        let c = tree.register(NodeRef::User(b), &mut r).unwrap().id;
        let d = tree.register(NodeRef::User(b), &mut r).unwrap().id;
        let leaf = tree.register(NodeRef::Server, &mut r).unwrap().id;

        assert_eq!(tree.leave(leaf).unwrap(), BTreeSet::from([leaf]));
        assert_eq!(tree.leave(leaf), Err(HierarchyError::AlreadyInactive(leaf)));

        let gone = tree.leave(a).unwrap();
        assert_eq!(gone, BTreeSet::from([a, b, c, d]));
        assert!(!tree.server_keys().contains_key(&a));
        assert!(tree.server_keys().contains_key(&b));
        assert_eq!(tree.leave(c), Err(HierarchyError::AlreadyInactive(c)));
        assert_eq!(
            tree.rejoin(b, &mut r),
            Err(HierarchyError::PositionOccupied(b))
        );

        let old_rtok = tree.node(a).unwrap().rtok.clone();
        let fresh = tree.rejoin(a, &mut r).unwrap();
        assert_ne!(fresh, a);
        assert!(tree.node(a).is_none());
        assert_ne!(tree.node(fresh).unwrap().rtok, old_rtok);
        assert!([fresh, b, c, d].iter().all(|u| tree.is_active(*u)));
        assert_eq!(tree.node(b).unwrap().parent, NodeRef::User(fresh));
        assert_eq!(tree.level(c), Some(3));
        assert!(tree.root_children().contains(&fresh));
    }

    #[test]
    fn level_order_visits_levels_in_turn() {
        let mut tree = HierarchyTree::with_curve(Curve::small());
        let mut r = rng();
        let a = tree.register(NodeRef::Server, &mut r).unwrap().id;
        let b = tree.register(NodeRef::Server, &mut r).unwrap().id;
        let a1 = tree.register(NodeRef::User(a), &mut r).unwrap().id;
        let b1 = tree.register(NodeRef::User(b), &mut r).unwrap().id;
        let a2 = tree.register(NodeRef::User(a), &mut r).unwrap().id;
        assert_eq!(tree.level_order(), vec![a, b, a1, a2, b1]);
        assert_eq!(
            tree.active_internal(),
            vec![NodeRef::Server, NodeRef::User(a), NodeRef::User(b)]
        );
    }
}
