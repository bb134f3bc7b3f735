//! Requester API and ExternalQuestion worker flow.

pub mod http;
pub mod pages;
pub mod service;

pub use http::{router, AppState};
pub use service::{ExternalParams, LaunchRequest, Service, ServiceConfig, ServiceError, SubmitPayload};
