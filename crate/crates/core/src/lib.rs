//! Statistics for growth-rate measurements on binary lineage trees.
//!
//! Cells are labeled so that cell `n` divides into daughters `2n`
//! (new-pole) and `2n+1` (old-pole); [`lineage`] provides the label
//! arithmetic. [`ingest`] reads the two tabular file layouts and raw
//! length series, [`preprocess`] removes aberrant trees and marks
//! outlier cells, [`bar`] fits the four-parameter bifurcating
//! autoregression (and simulates from it), [`stattests`] is the
//! numeric kernel, and [`pipelines`] wires everything into the named
//! analyses exposed by the `poletree` binary.

pub mod bar;
pub mod cli;
pub mod ingest;
pub mod lineage;
pub mod pipelines;
pub mod preprocess;
pub mod stattests;
