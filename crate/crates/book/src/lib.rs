//! Runs the guide's examples as doc tests.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/polar.md")]
pub mod polar {}

#[doc = include_str!("../../../book/src/distances.md")]
pub mod distances {}

#[doc = include_str!("../../../book/src/synthesis.md")]
pub mod synthesis {}

#[doc = include_str!("../../../book/src/ndf.md")]
pub mod ndf {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/correction.md")]
pub mod correction {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
