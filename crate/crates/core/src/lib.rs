//! Simulated usability-testing participants.
//!
//! Persona-conditioned LLM agents browse a target site through a
//! recipe-driven browser connector. Each session yields an action trace, a
//! memory trace, per-step screenshots and an outcome.

pub mod agent;
pub mod browser;
pub mod interview;
pub mod llm;
pub mod memory;
pub mod money;
pub mod orchestrator;
pub mod persona;
pub mod prompt;
pub mod recipe;
pub mod record;
pub mod retry;
pub mod stats;
