//! Conversation-assist engine: live transcript in, short topic hints out,
//! placed on the partner's face in a head-mounted view.
//!
//! The pipeline runs transcript ingest ([`ingest`]), hint generation
//! ([`hintgen`]), overlay placement ([`geometry`]) and gaze-driven
//! presentation ([`presentation`]) inside a per-connection [`session`].
//! [`analytics`] and [`harness`] replay scripted sessions and measure them.

pub mod analytics;
pub mod geometry;
pub mod harness;
pub mod hintgen;
pub mod ingest;
pub mod par;
pub mod presentation;
pub mod session;
