pub mod coverage;
pub mod ir;
pub mod llm;
pub mod patcher;
pub mod protocols;
pub mod refine;
pub mod tracker;
pub mod verilog;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/slicing.md")]
    mod slicing {}
    #[doc = include_str!("../../../book/src/patching.md")]
    mod patching {}
    #[doc = include_str!("../../../book/src/coverage.md")]
    mod coverage {}
    #[doc = include_str!("../../../book/src/ir.md")]
    mod ir {}
    #[doc = include_str!("../../../book/src/protocols.md")]
    mod protocols {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    mod refinement {}
}
