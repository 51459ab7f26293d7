//! Desk-scale incremental neural radiance fields on the CPU.
//!
//! A camera walks a non-revisiting trajectory through a synthetic scene; its
//! views arrive in tasks and old task data is discarded. The crate trains a
//! small radiance field through that stream with self-distillation from a
//! frozen snapshot plus a learned ray generator, next to five baselines, and
//! measures how much of each past task survives.

pub mod camera;
pub mod config;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod mlp;
pub mod render;
pub mod rgn;
pub mod scene;
pub mod train;

pub use error::{Error, Result};

// Every code block in the book is compiled and run by `cargo test --doc`,
// keeping the guide in sync with the library.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(rendering, "../../../book/src/rendering.md");
    chapter!(training, "../../../book/src/training.md");
    chapter!(self_distillation, "../../../book/src/self-distillation.md");
    chapter!(ray_generator, "../../../book/src/ray-generator.md");
    chapter!(baselines, "../../../book/src/baselines.md");
    chapter!(harness_guide, "../../../book/src/harness.md");
}
