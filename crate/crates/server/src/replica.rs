//! Client-side mirror of the session, fed with the hub's outbound envelopes.

use holoproxy_core::protocol::{ErrorCode, MessagePayload, SessionState};
use holoproxy_core::HapticCommand;
use holoproxy_core::protocol::Envelope;

/// What a replica did with one inbound envelope.
#[derive(Debug, Clone, PartialEq)]
pub enum Observed {
    Snapshot,
    Delta,
    Haptic(HapticCommand),
    Ack(u64),
    Error { code: ErrorCode, seq: u64, detail: String },
    Heartbeat,
    /// Already seen (hub seq at or below the last applied one), or a delta before any snapshot.
    Ignored,
}

#[derive(Debug, Clone, Default)]
pub struct Replica {
    state: Option<SessionState>,
    last_seq: u64,
}

impl Replica {
    pub fn new() -> Self {
        Self::default()
    }

    /// `None` until the first snapshot arrives.
    pub fn state(&self) -> Option<&SessionState> {
        self.state.as_ref()
    }

    pub fn digest(&self) -> Option<String> {
        self.state.as_ref().map(SessionState::digest)
    }

    /// Highest hub seq applied.
    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Applies one hub envelope. Heartbeats and connection-level errors carry seq 0 and are
    /// unsequenced; everything else is deduplicated by its hub seq, which per-connection FIFO
    /// delivery keeps increasing.
    pub fn observe(&mut self, env: &Envelope) -> Observed {
        if let MessagePayload::FullSnapshot { state } = &env.payload {
            self.state = Some((**state).clone());
            self.last_seq = env.seq;
            return Observed::Snapshot;
        }
        if matches!(env.payload, MessagePayload::Heartbeat {}) {
            return Observed::Heartbeat;
        }
        if let (MessagePayload::Error { code, seq, detail }, 0) = (&env.payload, env.seq) {
            return Observed::Error { code: *code, seq: *seq, detail: detail.clone() };
        }
        if env.seq <= self.last_seq {
            return Observed::Ignored;
        }
        let observed = match &env.payload {
            MessagePayload::StateDelta { changes } => match &mut self.state {
                Some(state) => {
                    state.apply(changes);
                    state.outbound_seq = env.seq;
                    Observed::Delta
                }
                None => return Observed::Ignored,
            },
            MessagePayload::HapticPulse { command } => Observed::Haptic(*command),
            MessagePayload::Ack { seq } => Observed::Ack(*seq),
            MessagePayload::Error { code, seq, detail } => {
                Observed::Error { code: *code, seq: *seq, detail: detail.clone() }
            }
            _ => return Observed::Ignored,
        };
        self.last_seq = env.seq;
        observed
    }
}
