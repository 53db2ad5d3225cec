//! The chapters of the guide in `book/src`, compiled so that every code
//! block runs as a doctest.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/scales.md")]
pub mod scales {}

#[doc = include_str!("../../../book/src/states.md")]
pub mod states {}

#[doc = include_str!("../../../book/src/source.md")]
pub mod source {}

#[doc = include_str!("../../../book/src/mirror.md")]
pub mod mirror {}

#[doc = include_str!("../../../book/src/freefall.md")]
pub mod freefall {}

#[doc = include_str!("../../../book/src/inference.md")]
pub mod inference {}

#[doc = include_str!("../../../book/src/numerics.md")]
pub mod numerics {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
