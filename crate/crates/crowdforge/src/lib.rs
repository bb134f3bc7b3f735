//! Service shell around `crowdforge-core`.
//!
//! - [`store`]: journaled state for pipelines, exam sessions and leases.
//! - [`export`] / [`bundle`]: JSONL datasets and re-launchable zip bundles.
//! - [`markdown`]: instruction rendering with an allowlist sanitizer.
//! - [`connector`]: marketplace abstraction and a deterministic mock.
//! - [`gateway`]: requester API, ExternalQuestion worker pages, HTTP router.
//! - [`sim`]: simulated worker populations.
//! - [`cli`]: the requester command-line client.

pub mod bundle;
pub mod cli;
pub mod clock;
pub mod connector;
pub mod export;
pub mod gateway;
pub mod markdown;
pub mod sim;
pub mod store;

pub use crowdforge_core as core;
