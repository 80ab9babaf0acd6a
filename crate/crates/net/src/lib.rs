//! Real-network runner: validators as tokio tasks talking length-prefixed
//! frames over TCP.
//!
//! [`transport`] keeps one outbound connection per peer with a bounded,
//! drop-oldest-block queue and reconnects with backoff; inbound connections
//! announce themselves with a hello frame. [`node`] drives a
//! [`wavedag_core::Validator`] from transport events and a timer, and
//! [`process`] adds the open-loop load generator with re-submission.

pub mod config;
pub mod node;
pub mod process;
pub mod transport;

pub use config::{ClusterConfig, ConfigError, PeerEntry};
pub use node::{spawn_node, NodeConfig, NodeError, NodeHandle, NodeStatus};
pub use process::{run_process, LoadConfig, PrefixHasher, ProcessError, ProcessSummary};
pub use transport::{Transport, TransportSender};
