//! Runs code formatters over the files of a pull request and posts what they
//! would change as batched, forge-native suggested-change comments, limited
//! to lines the diff shows.
//!
//! The pipeline, in order:
//!
//! - [`forge_client`] fetches the pull request, its patches and head content.
//! - [`tool_runner`] pipes each file through its configured formatters.
//! - [`diff_engine`] computes a minimal line edit script to the formatted
//!   output and works out which lines are visible in the diff.
//! - [`suggestion_mapper`] turns edits into fingerprinted suggestion comments.
//! - [`app`] ties it together for the CLI, [`webhook_service`] for webhooks.
//!
//! ```
//! use suggestion_bot::diff_engine::{compute_edit_script, CommentableMap};
//! use suggestion_bot::suggestion_mapper::{map_edits_to_suggestions, MappingPolicy};
//!
//! let head: Vec<String> = vec!["x=1".into(), "y = 2".into()];
//! let formatted: Vec<String> = vec!["x = 1".into(), "y = 2".into()];
//! let script = compute_edit_script(&head, &formatted);
//! let out = map_edits_to_suggestions(
//!     &script,
//!     &CommentableMap::everything(head.len()),
//!     &head,
//!     &MappingPolicy::default(),
//!     "m.py",
//!     "fmt",
//! );
//! assert_eq!(out.suggestions[0].replacement, ["x = 1"]);
//! ```
//!
//! The guide in `book/` covers each stage in more depth.

pub mod app;
pub mod config;
pub mod diff_engine;
pub mod forge_client;
pub mod metrics;
pub mod suggestion_mapper;
pub mod tool_runner;
pub mod webhook_service;

// Compiles and runs the guide's snippets as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/edit-scripts.md")]
    mod edit_scripts {}
    #[doc = include_str!("../../../book/src/unified-diffs.md")]
    mod unified_diffs {}
    #[doc = include_str!("../../../book/src/suggestions.md")]
    mod suggestions {}
    #[doc = include_str!("../../../book/src/tools.md")]
    mod tools {}
    #[doc = include_str!("../../../book/src/forge.md")]
    mod forge {}
    #[doc = include_str!("../../../book/src/webhooks.md")]
    mod webhooks {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
