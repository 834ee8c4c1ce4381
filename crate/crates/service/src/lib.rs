//! Annotation service: hands out blinded items to subjects following their
//! session plans, records each judgment in a durable append-only log and
//! exports the judgments joined with the blinding map.

pub mod http;
pub mod store;

pub use http::{router, serve, ADMIN_TOKEN_ENV};
pub use store::{Ack, NextItem, SessionDescriptor, Store, StoreError};
