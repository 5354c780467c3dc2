//! Spoke runtime: one app, one backend instance, one memory view, confined
//! to its own process and talking only to the hub.

mod engine;
mod plan;
mod process;

pub use engine::{render_prompt, BackendSlot, Engine, EngineFailure, Negotiated, SpokeHost};
pub use plan::{resolve_refs, ExecutionStep, SpokePlan};
pub use process::{spoke_main, ChannelHost};
