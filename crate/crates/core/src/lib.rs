pub mod workflow;
pub mod failure;
pub mod objective;
pub mod verify;
pub mod executor;
pub mod search;
pub mod runner;
pub mod api;
