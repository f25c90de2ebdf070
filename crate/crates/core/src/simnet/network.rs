//! Addressed envelopes with delivery inside the sending epoch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::algebra::FieldElement;
use crate::curve::CurvePoint;
use crate::hierarchy::{NodeRef, UserId};
use crate::proactive::{ClaimRecord, EpochClock};
use crate::sharing::ShareRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    ReqM,
    ShareDelivery,
    RoundKeyBroadcast,
    RenewalDelta,
    Commitments,
    Leave,
    Join,
    Claim,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Address {
    Node(NodeRef),
    Broadcast,
    /// Every child of the given subtree root.
    Multicast(NodeRef),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    ReqM {
        round_id: u64,
    },
    ShareDelivery(ShareRecord),
    RoundKeyBroadcast {
        round_id: u64,
        public_key: CurvePoint,
    },
    RenewalDelta {
        group: NodeRef,
        epoch: u64,
        delta_eval: FieldElement,
    },
    Commitments {
        group: NodeRef,
        epoch: u64,
        points: Vec<CurvePoint>,
    },
    Leave(UserId),
    Join(UserId),
    Claim(ClaimRecord),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::ReqM { .. } => MessageKind::ReqM,
            Payload::ShareDelivery(_) => MessageKind::ShareDelivery,
            Payload::RoundKeyBroadcast { .. } => MessageKind::RoundKeyBroadcast,
            Payload::RenewalDelta { .. } => MessageKind::RenewalDelta,
            Payload::Commitments { .. } => MessageKind::Commitments,
            Payload::Leave(_) => MessageKind::Leave,
            Payload::Join(_) => MessageKind::Join,
            Payload::Claim(_) => MessageKind::Claim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub from: NodeRef,
    pub to: Address,
    pub payload: Payload,
    /// Readable only by the addressee.
    pub sealed: bool,
    pub sent_tick: u64,
    pub delivered_tick: u64,
}

/// In-flight envelopes and the current epoch's message counts.
#[derive(Clone, Debug, Default)]
pub struct Network {
    pending: Vec<Envelope>,
    counts: BTreeMap<MessageKind, u64>,
}

impl Network {
    /// Queues an envelope for the next tick, or the last tick of the epoch.
    pub fn send(
        &mut self,
        clock: &EpochClock,
        from: NodeRef,
        to: Address,
        payload: Payload,
        sealed: bool,
    ) {
        *self.counts.entry(payload.kind()).or_default() += 1;
        self.pending.push(Envelope {
            from,
            to,
            payload,
            sealed,
            sent_tick: clock.tick(),
            delivered_tick: (clock.tick() + 1).min(clock.epoch_end()),
        });
    }

    /// Removes and returns everything due by the clock's tick, in send order.
    pub fn deliver(&mut self, clock: &EpochClock) -> Vec<Envelope> {
        let (due, later) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|e| e.delivered_tick <= clock.tick());
        self.pending = later;
        due
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }

    pub fn take_counts(&mut self) -> BTreeMap<MessageKind, u64> {
        std::mem::take(&mut self.counts)
    }
}
