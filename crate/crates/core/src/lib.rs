pub mod distant_supervision;
pub mod evaluation;
pub mod index;
pub mod jsonl;
pub mod pipeline;
pub mod reader;
pub mod squad;
pub mod text;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/text-analysis.md")]
    mod text_analysis {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/distant-supervision.md")]
    mod distant_supervision {}
    #[doc = include_str!("../../../book/src/readers.md")]
    mod readers {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
