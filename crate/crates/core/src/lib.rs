//! In-context learning pipeline for bimanual keyframe manipulation.

pub mod bench;
pub mod codec;
pub mod demos;
pub mod eval;
pub mod gateway;
pub mod judge;
pub mod observation;
pub mod par;
pub mod perception;
pub mod prompt;
pub mod strategies;
