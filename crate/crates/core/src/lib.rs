pub mod checkpoint;
pub mod codec;
pub mod commands;
pub mod config;
pub mod dit;
pub mod error;
pub mod flow;
pub mod image;
pub mod metrics;
pub mod mixup;
pub mod numerics;
pub mod tasks;

pub use error::{Error, Result};
pub use image::Image;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/transitions.md")]
    mod transitions {}
    #[doc = include_str!("../../../book/src/tokens.md")]
    mod tokens {}
    #[doc = include_str!("../../../book/src/lora.md")]
    mod lora {}
    #[doc = include_str!("../../../book/src/flow.md")]
    mod flow {}
    #[doc = include_str!("../../../book/src/tasks.md")]
    mod tasks {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
