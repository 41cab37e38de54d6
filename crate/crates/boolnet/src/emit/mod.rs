//! Serialization of optimized logic and hybrid inference.

pub mod blif;
pub mod hybrid;
pub mod program;

pub use blif::{read_blif, write_blif, write_cover_blif, BlifError};
pub use hybrid::{
    addsub_scores, hybrid_infer, hybrid_scores, hybrid_split, HybridError, HybridSplit,
};
pub use program::{emit_program, BooleanProgram, ProgOp, ProgramError};
