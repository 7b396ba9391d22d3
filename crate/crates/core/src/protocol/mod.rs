//! Wire protocol and the session reducer that keeps proxy and renderer clients in sync.

pub mod reducer;
pub mod state;
pub mod wire;

pub use reducer::{check_coherence, reduce, Outbound, ReduceContext, Route};
pub use state::{selection_diff, Change, PoseWriter, SessionState};
pub use wire::{
    decode, encode, split_frames, Capability, ClientId, DecodeError, Envelope, ErrorCode, MessagePayload, PointPx,
    Role, SessionId, PROTOCOL_VERSION,
};
