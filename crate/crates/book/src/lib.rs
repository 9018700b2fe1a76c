//! Runs the guide's code blocks as doc-tests.

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/signals.md")]
pub mod signals {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/transmitter.md")]
pub mod transmitter {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/channel.md")]
pub mod channel {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/canceller.md")]
pub mod canceller {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/lms.md")]
pub mod lms {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
