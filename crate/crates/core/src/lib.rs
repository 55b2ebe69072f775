pub mod analysis;
pub mod cli;
pub mod cox;
pub mod dataset;
pub mod deep;
pub mod fusion;
pub mod metrics;
pub mod pesi;
pub mod rng;
pub mod rsf;
pub mod synthetic;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/data.md")]
mod book_data {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pesi.md")]
mod book_pesi {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cox.md")]
mod book_cox {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/deep.md")]
mod book_deep {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/rsf.md")]
mod book_rsf {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/fusion.md")]
mod book_fusion {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/metrics.md")]
mod book_metrics {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/study.md")]
mod book_study {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
