pub mod cell;
pub mod config;
pub mod drift;
pub mod environment;
pub mod error;
pub mod expansion;
pub mod grid;
pub mod harness;
pub mod limit_law;
pub mod macro_pde;
pub mod oscillatory;
pub mod quad;
pub mod report;
pub mod seeds;
pub mod stats;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/correctors.md")]
    mod correctors {}
    #[doc = include_str!("../../../book/src/expansion.md")]
    mod expansion {}
    #[doc = include_str!("../../../book/src/oscillatory.md")]
    mod oscillatory {}
    #[doc = include_str!("../../../book/src/limit-law.md")]
    mod limit_law {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
