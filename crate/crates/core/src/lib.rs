//! trajmine: mines structured GUI-agent training trajectories from
//! screen-recording artifacts and evaluates inverse-dynamics components.
//!
//! The pipeline stages are modules behind pluggable interfaces: cursor
//! gating ([`screenfilter`]), log conversion to ground-truth spans
//! ([`logconv`]), inverse-dynamics detection and parameterization
//! ([`idm`]), inner-monologue generation ([`monologue`]), trajectory
//! assembly and training-format serialization ([`assembler`]), the
//! temporal-overlap evaluation harness ([`evalharness`]), catalog
//! discovery ([`discovery`]), and corpus analytics ([`stats`]).

pub mod actions;
pub mod assembler;
pub mod config;
pub mod discovery;
pub mod evalharness;
pub mod idm;
pub mod jsonl;
pub mod llm;
pub mod logconv;
pub mod monologue;
pub mod pipeline;
pub mod sampling;
pub mod screenfilter;
pub mod stats;
pub mod synth;
pub mod types;
pub mod validate;

pub use types::{
    coarse_of, ActionParams, ActionTypeCoarse, ActionTypeFine, Frame, FrameRef, FrameSource,
    Monologue, MouseButton, ParamPayload, RawEvent, ReActStep, Trajectory, TypedSpan, VideoMeta,
};
pub use validate::{validate_trajectory, Violation};
