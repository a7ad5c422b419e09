//! Weakly-supervised state estimation for distribution grids.

pub mod acpf;
pub mod autodiff;
pub mod bench;
pub mod error;
pub mod grid;
pub mod h2mgnn;
pub mod pf_equations;
pub mod scenario;
pub mod train;
pub mod wls;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
    #[doc = include_str!("../../../book/src/measurements.md")]
    mod measurements {}
    #[doc = include_str!("../../../book/src/wls.md")]
    mod wls {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/h2mgnn.md")]
    mod h2mgnn {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/bench.md")]
    mod bench {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
