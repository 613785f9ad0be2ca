pub mod bandit;
pub mod bnn;
pub mod data;
pub mod diag;
pub mod error;
pub mod householder;
pub mod math;
pub mod mvg;
pub mod rl;
pub mod svgd;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/householder.md")]
    mod householder {}
    #[doc = include_str!("../../../book/src/layers.md")]
    mod layers {}
    #[doc = include_str!("../../../book/src/svgd.md")]
    mod svgd {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/bandits.md")]
    mod bandits {}
    #[doc = include_str!("../../../book/src/policy.md")]
    mod policy {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
