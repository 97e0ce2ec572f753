//! Synchronous, lossless, fully connected message network.
//!
//! Messages sent during a slot become visible to every other ship at the
//! slot boundary, in (slot, sender) order. Nothing is ever dropped or
//! delayed further, which realizes the perfect-communication assumptions the
//! negotiation scheme is built on.

use crate::frames::InertialState;
use serde::Serialize;

/// Broadcast payloads exchanged between ships.
#[derive(Debug, Clone, Serialize)]
pub enum Payload {
    /// Predicted trajectory in the inertial frame.
    Intent(Vec<InertialState>),
    /// The sender finished its decision for this control period.
    DecisionDone,
    /// Position report backing the shared traffic picture.
    PositionReport { state: InertialState, speed: f64 },
    /// Displacement exchanged for deadlock resolution.
    WeightExchange(f64),
}

impl Payload {
    fn kind(&self) -> &'static str {
        match self {
            Payload::Intent(_) => "intent",
            Payload::DecisionDone => "decision_done",
            Payload::PositionReport { .. } => "position_report",
            Payload::WeightExchange(_) => "weight_exchange",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Message {
    pub sender: usize,
    pub slot: u64,
    pub payload: Payload,
}

/// One line of the optional message trace: sender, slot, payload type, and a
/// short digest of the payload content.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub slot: u64,
    pub sender: usize,
    pub r#type: &'static str,
    pub payload_digest: String,
}

/// Full-mesh router: everything sent in a slot is delivered to every other
/// ship at the next boundary.
#[derive(Debug)]
pub struct Bus {
    slot: u64,
    pending: Vec<Message>,
    mailboxes: Vec<Vec<Message>>,
    trace: Option<Vec<TraceRecord>>,
}

impl Bus {
    pub fn new(ships: usize, traced: bool) -> Self {
        Self {
            slot: 0,
            pending: Vec::new(),
            mailboxes: vec![Vec::new(); ships],
            trace: traced.then(Vec::new),
        }
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    /// Enqueues a broadcast from `sender`; it becomes visible to all other
    /// ships after the next [`Bus::advance_slot`].
    pub fn broadcast(&mut self, sender: usize, payload: Payload) {
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord {
                slot: self.slot,
                sender,
                r#type: payload.kind(),
                payload_digest: digest(&payload),
            });
        }
        self.pending.push(Message {
            sender,
            slot: self.slot,
            payload,
        });
    }

    /// Closes the current slot: pending messages are delivered to every
    /// recipient in (slot, sender) order.
    pub fn advance_slot(&mut self) {
        self.pending.sort_by_key(|m| (m.slot, m.sender));
        for msg in self.pending.drain(..) {
            for (ship, mailbox) in self.mailboxes.iter_mut().enumerate() {
                if ship != msg.sender {
                    mailbox.push(msg.clone());
                }
            }
        }
        self.slot += 1;
    }

    /// Drains everything delivered to `ship` so far.
    pub fn take_mail(&mut self, ship: usize) -> Vec<Message> {
        std::mem::take(&mut self.mailboxes[ship])
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    pub fn into_trace(self) -> Option<Vec<TraceRecord>> {
        self.trace
    }
}

fn digest(payload: &Payload) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(payload).expect("payload serializes");
    let hash = Sha256::digest(&bytes);
    hash[..8].iter().map(|b| format!("{b:02x}")).collect()
}
