//! Plain-data image of a [`World`] at an epoch boundary, for snapshots.
//!
//! Field elements are stored as decimal strings and rebuilt against the
//! field of the scenario the state is restored into.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{Field, FieldElement, Polynomial};
use crate::curve::CurvePoint;
use crate::decimal;
use crate::hierarchy::{HierarchyNode, HierarchyTree, NodeRef, RoundState, UserId};
use crate::proactive::EpochClock;
use crate::sharing::{DealerState, ShareKind, ShareRecord};

use super::report::{InvariantViolation, SimReport};
use super::{SimError, World};

pub const STATE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeState {
    pub id: UserId,
    pub parent: NodeRef,
    pub children: Vec<UserId>,
    #[serde(with = "decimal::option")]
    pub rtok: Option<BigUint>,
    pub group_key: Option<CurvePoint>,
    pub round_key: Option<CurvePoint>,
    pub vacated: bool,
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeState {
    pub nodes: Vec<NodeState>,
    pub root_children: Vec<UserId>,
    pub next_id: u64,
    pub id_limit: Option<u64>,
    pub rounds_started: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundData {
    pub round_id: u64,
    #[serde(with = "decimal::option")]
    pub server_secret: Option<BigUint>,
    pub public_key: Option<CurvePoint>,
    pub participants: Vec<UserId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShareData {
    pub owner: UserId,
    pub group: NodeRef,
    #[serde(with = "decimal")]
    pub eval_point: BigUint,
    #[serde(with = "decimal")]
    pub value: BigUint,
    pub kind: ShareKind,
    pub threshold: usize,
    pub round_id: u64,
    pub epoch: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialData {
    pub owner: NodeRef,
    #[serde(with = "decimal::vec")]
    pub coefficients: Vec<BigUint>,
    pub threshold: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DealerData {
    pub round_id: u64,
    #[serde(with = "decimal")]
    pub secret: BigUint,
    pub retained: Vec<UserValue>,
    pub polynomials: Vec<PolynomialData>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserValue {
    pub user: UserId,
    #[serde(with = "decimal")]
    pub value: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEpoch {
    pub group: NodeRef,
    pub epoch: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockData {
    pub global: u64,
    pub tick: u64,
    pub ticks_per_epoch: u64,
    pub groups: Vec<GroupEpoch>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StolenShare {
    pub taken_epoch: u64,
    pub share: ShareData,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StolenRoundKey {
    pub round_id: u64,
    pub user: UserId,
    pub key: CurvePoint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublicKeyData {
    pub round_id: u64,
    pub key: CurvePoint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryData {
    pub compromised: Vec<UserId>,
    pub reading: bool,
    pub ever_compromised: Vec<UserId>,
    pub stolen: Vec<StolenShare>,
    pub stolen_rtoks: Vec<UserValue>,
    pub stolen_round_keys: Vec<StolenRoundKey>,
    pub public_keys: Vec<PublicKeyData>,
    pub commitments_seen: u64,
    pub rng: ChaCha20Rng,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldState {
    pub format_version: u32,
    /// Tokens and the server's round secret were left out.
    pub redacted: bool,
    pub next_epoch: u64,
    pub tree: TreeState,
    pub round: Option<RoundData>,
    pub eval_points: Vec<UserValue>,
    pub dealer: Option<DealerData>,
    pub shares: Vec<ShareData>,
    pub clock: ClockData,
    pub adversary: AdversaryData,
    pub rng: ChaCha20Rng,
    pub renewal_discarded: bool,
    pub violations: Vec<InvariantViolation>,
    pub report: SimReport,
}

fn share_data(share: &ShareRecord) -> ShareData {
    ShareData {
        owner: share.owner,
        group: share.group,
        eval_point: share.eval_point.value().clone(),
        value: share.value.value().clone(),
        kind: share.kind,
        threshold: share.threshold,
        round_id: share.round_id,
        epoch: share.epoch,
    }
}

fn user_values(map: &BTreeMap<UserId, FieldElement>) -> Vec<UserValue> {
    map.iter()
        .map(|(user, v)| UserValue {
            user: *user,
            value: v.value().clone(),
        })
        .collect()
}

struct Rebuild<'a> {
    field: &'a Field,
}

impl Rebuild<'_> {
    fn element(&self, value: &BigUint) -> Result<FieldElement, SimError> {
        if value >= self.field.modulus() {
            return Err(SimError::State(format!(
                "{value} is outside the field of order {}",
                self.field.modulus()
            )));
        }
        Ok(self.field.element(value.clone()))
    }

    fn share(&self, data: &ShareData) -> Result<ShareRecord, SimError> {
        Ok(ShareRecord {
            owner: data.owner,
            group: data.group,
            eval_point: self.element(&data.eval_point)?,
            value: self.element(&data.value)?,
            kind: data.kind,
            threshold: data.threshold,
            round_id: data.round_id,
            epoch: data.epoch,
        })
    }

    fn user_values(
        &self,
        values: &[UserValue],
    ) -> Result<BTreeMap<UserId, FieldElement>, SimError> {
        values
            .iter()
            .map(|uv| Ok((uv.user, self.element(&uv.value)?)))
            .collect()
    }
}

impl World {
    /// Captures the world between epochs. With `redact`, registration tokens
    /// and the server's round secret are omitted and the state cannot be
    /// resumed.
    pub fn to_state(&self, redact: bool) -> WorldState {
        let keep = |v: &Option<FieldElement>| {
            if redact {
                None
            } else {
                v.as_ref().map(|x| x.value().clone())
            }
        };
        let tree = TreeState {
            nodes: self
                .tree
                .nodes()
                .map(|n| NodeState {
                    id: n.id,
                    parent: n.parent,
                    children: n.children.clone(),
                    rtok: keep(&n.rtok),
                    group_key: n.group_key.clone(),
                    round_key: n.round_key.clone(),
                    vacated: n.vacated,
                    active: n.active,
                })
                .collect(),
            root_children: self.tree.root_children().to_vec(),
            next_id: self.tree.next_id(),
            id_limit: self.tree.id_limit(),
            rounds_started: self.tree.rounds_started(),
        };
        let round = self.round.as_ref().map(|r| RoundData {
            round_id: r.round_id,
            server_secret: keep(&r.server_secret),
            public_key: r.public_key.clone(),
            participants: r.participants.iter().copied().collect(),
        });
        let dealer = self.dealer.as_ref().map(|d| DealerData {
            round_id: d.round_id,
            secret: d.secret.value().clone(),
            retained: user_values(&d.retained),
            polynomials: d
                .polynomials
                .iter()
                .map(|(owner, q)| PolynomialData {
                    owner: *owner,
                    coefficients: q.coefficients().iter().map(|c| c.value().clone()).collect(),
                    threshold: d.thresholds[owner],
                })
                .collect(),
        });
        let adv = &self.adversary;
        let adversary = AdversaryData {
            compromised: adv.compromised.iter().copied().collect(),
            reading: adv.reading,
            ever_compromised: adv.ever_compromised.iter().copied().collect(),
            stolen: adv
                .stolen
                .values()
                .map(|(taken_epoch, share)| StolenShare {
                    taken_epoch: *taken_epoch,
                    share: share_data(share),
                })
                .collect(),
            stolen_rtoks: if redact {
                Vec::new()
            } else {
                user_values(&adv.stolen_rtoks)
            },
            stolen_round_keys: adv
                .stolen_round_keys
                .iter()
                .map(|((round_id, user), key)| StolenRoundKey {
                    round_id: *round_id,
                    user: *user,
                    key: key.clone(),
                })
                .collect(),
            public_keys: adv
                .public_keys
                .iter()
                .map(|(round_id, key)| PublicKeyData {
                    round_id: *round_id,
                    key: key.clone(),
                })
                .collect(),
            commitments_seen: adv.commitments_seen,
            rng: adv.rng.clone(),
        };
        WorldState {
            format_version: STATE_FORMAT_VERSION,
            redacted: redact,
            next_epoch: self.next_epoch,
            tree,
            round,
            eval_points: user_values(&self.eval_points),
            dealer,
            shares: self.shares.values().map(share_data).collect(),
            clock: ClockData {
                global: self.clock.global_epoch(),
                tick: self.clock.tick(),
                ticks_per_epoch: self.clock.ticks_per_epoch(),
                groups: self
                    .clock
                    .groups()
                    .iter()
                    .map(|(group, epoch)| GroupEpoch {
                        group: *group,
                        epoch: *epoch,
                    })
                    .collect(),
            },
            adversary,
            rng: self.rng.clone(),
            renewal_discarded: self.renewal_discarded,
            violations: self.violations.clone(),
            report: self.report.clone(),
        }
    }

    /// Rebuilds a world for `config` from a state it produced.
    pub fn from_state(config: super::SimConfig, state: &WorldState) -> Result<Self, SimError> {
        if state.format_version != STATE_FORMAT_VERSION {
            return Err(SimError::State(format!(
                "state format {} is not the supported {STATE_FORMAT_VERSION}",
                state.format_version
            )));
        }
        if state.redacted {
            return Err(SimError::State("a redacted state cannot be resumed".into()));
        }
        if state.next_epoch > config.epochs {
            return Err(SimError::State(format!(
                "state is at epoch {} but the scenario has {} epochs",
                state.next_epoch, config.epochs
            )));
        }
        let mut world = World::new(config)?;
        let field = world.field.clone();
        let rebuild = Rebuild { field: &field };

        let mut nodes = Vec::with_capacity(state.tree.nodes.len());
        for n in &state.tree.nodes {
            nodes.push(HierarchyNode {
                id: n.id,
                parent: n.parent,
                children: n.children.clone(),
                rtok: n.rtok.as_ref().map(|v| rebuild.element(v)).transpose()?,
                group_key: n.group_key.clone(),
                round_key: n.round_key.clone(),
                vacated: n.vacated,
                active: n.active,
            });
        }
        world.tree = HierarchyTree::restore(
            world.tree.curve().cloned(),
            field.clone(),
            nodes,
            state.tree.root_children.clone(),
            state.tree.next_id,
            state.tree.id_limit,
            state.tree.rounds_started,
        );
        world.round = match &state.round {
            Some(r) => Some(RoundState {
                round_id: r.round_id,
                server_secret: r
                    .server_secret
                    .as_ref()
                    .map(|v| rebuild.element(v))
                    .transpose()?,
                public_key: r.public_key.clone(),
                participants: r.participants.iter().copied().collect(),
            }),
            None => None,
        };
        world.eval_points = rebuild.user_values(&state.eval_points)?;
        world.dealer = match &state.dealer {
            Some(d) => {
                let mut polynomials = BTreeMap::new();
                let mut thresholds = BTreeMap::new();
                for p in &d.polynomials {
                    let coefficients = p
                        .coefficients
                        .iter()
                        .map(|c| rebuild.element(c))
                        .collect::<Result<Vec<_>, _>>()?;
                    let q = Polynomial::new(coefficients)
                        .map_err(|e| SimError::State(e.to_string()))?;
                    polynomials.insert(p.owner, q);
                    thresholds.insert(p.owner, p.threshold);
                }
                Some(DealerState {
                    secret: rebuild.element(&d.secret)?,
                    round_id: d.round_id,
                    retained: rebuild.user_values(&d.retained)?,
                    polynomials,
                    thresholds,
                })
            }
            None => None,
        };
        world.shares = state
            .shares
            .iter()
            .map(|s| Ok((s.owner, rebuild.share(s)?)))
            .collect::<Result<_, SimError>>()?;
        world.clock = EpochClock::restore(
            state.clock.global,
            state.clock.tick,
            state.clock.ticks_per_epoch,
            state
                .clock
                .groups
                .iter()
                .map(|g| (g.group, g.epoch))
                .collect(),
        );
        let a = &state.adversary;
        let adv = &mut world.adversary;
        adv.compromised = a.compromised.iter().copied().collect();
        adv.reading = a.reading;
        adv.ever_compromised = a.ever_compromised.iter().copied().collect();
        adv.stolen = BTreeMap::new();
        for s in &a.stolen {
            let share = rebuild.share(&s.share)?;
            adv.stolen.insert(
                super::adversary::share_version(&share),
                (s.taken_epoch, share),
            );
        }
        adv.stolen_rtoks = rebuild.user_values(&a.stolen_rtoks)?;
        adv.stolen_round_keys = a
            .stolen_round_keys
            .iter()
            .map(|k| ((k.round_id, k.user), k.key.clone()))
            .collect();
        adv.public_keys = a
            .public_keys
            .iter()
            .map(|k| (k.round_id, k.key.clone()))
            .collect();
        adv.commitments_seen = a.commitments_seen;
        adv.rng = a.rng.clone();
        world.rng = state.rng.clone();
        world.renewal_discarded = state.renewal_discarded;
        world.violations = state.violations.clone();
        world.report = state.report.clone();
        world.next_epoch = state.next_epoch;
        Ok(world)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests_support::sample_config;
    use super::*;

    #[test]
    fn resume_matches_straight_run() {
        let mut straight = World::new(sample_config()).unwrap();
        let expected = straight.run().clone();

        let mut first = World::new(sample_config()).unwrap();
        first.step_epoch().unwrap();
        first.step_epoch().unwrap();
        let state = first.to_state(false);
        let json = serde_json::to_string(&state).unwrap();
        let parsed: WorldState = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, state);
        let mut resumed = World::from_state(sample_config(), &parsed).unwrap();
        assert_eq!(resumed.to_state(false), state);
        assert_eq!(resumed.run(), &expected);
    }

    #[test]
    fn redacted_state_hides_tokens_and_is_not_resumable() {
        let mut world = World::new(sample_config()).unwrap();
        world.step_epoch().unwrap();
        let state = world.to_state(true);
        assert!(state.tree.nodes.iter().all(|n| n.rtok.is_none()));
        assert!(state.round.as_ref().unwrap().server_secret.is_none());
        assert!(state.adversary.stolen_rtoks.is_empty());
        assert!(World::from_state(sample_config(), &state).is_err());
    }
}
