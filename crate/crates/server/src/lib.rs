//! Session hub for holoproxy.
//!
//! [`SessionCore`] is the synchronous single writer of one session: it jitters pose
//! updates if configured, appends each envelope to the session log, and reduces it.
//! [`Hub`] hosts cores behind TCP and websocket connections. [`replay`] rebuilds a session
//! from its log.

pub mod client;
pub mod hub;
pub mod log;
pub mod replica;
pub mod session;

pub use client::Client;
pub use hub::{Hub, ServerConfig, SessionView};
pub use log::{meta_path, ClosedLog, JitterConfig, LogError, LogMeta};
pub use replica::{Observed, Replica};
pub use session::{replay, ReplayError, ReplayOutcome, SessionCore};
