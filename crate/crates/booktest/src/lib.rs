//! The guide's chapters, included as documentation so that `cargo test`
//! compiles and runs every Rust listing in them. One module per chapter
//! keeps failures traceable to their source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/world.md")]
pub mod world {}
#[doc = include_str!("../../../book/src/actions.md")]
pub mod actions {}
#[doc = include_str!("../../../book/src/domains.md")]
pub mod domains {}
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("../../../book/src/policy.md")]
pub mod policy {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/teaching.md")]
pub mod teaching {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
