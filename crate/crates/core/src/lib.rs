pub mod isc;
pub mod permission;
pub mod llm;
pub mod memory;
pub mod sandbox;
pub mod apps;
pub mod audit;
pub mod channel;
pub mod config;
pub mod spoke;
pub mod hub;
pub mod trace;
pub mod harness;
pub mod gateway;
