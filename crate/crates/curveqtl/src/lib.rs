//! QTL mapping for function-valued traits.
//!
//! A function-valued trait is a phenotype measured repeatedly over time
//! (or another index) on each individual: growth curves, expression time
//! courses, dose responses. This crate maps quantitative trait loci for
//! such traits in experimental crosses by regressing each time point on
//! genotype probabilities and combining the per-time evidence into the
//! whole-curve statistics SLOD (average LOD over the curve) and MLOD
//! (maximum LOD over the curve).
//!
//! The pieces, bottom to top:
//!
//! - [`types`]: genetic maps, genotype/phenotype matrices, grids.
//! - [`io`]: CSV readers and writers for the above plus result tables.
//! - [`genoprob`]: hidden Markov model genotype probabilities on a grid.
//! - [`scan`]: single-QTL genome scans and permutation thresholds.
//! - [`modelsel`]: penalized stepwise multiple-QTL search, LOD profiles,
//!   and fitted effect curves.
//! - [`sim`]: simulation of crosses and phenotypes, plus power studies.

pub mod error;
pub mod genoprob;
pub mod io;
mod linalg;
pub mod modelsel;
pub mod scan;
pub mod sim;
mod stream;
pub mod types;

pub use error::{Error, Result};
pub use genoprob::{calc_genoprob, haldane_r, ril_expand, GenoProbs};
pub use modelsel::{
    fit_effects, model_lod, plod, profile, stepwise_search, EffectCurves, LocusEffects,
    ProfileCurves, ProfileEntry, QtlLocus, QtlModel, StepwiseOptions,
};
pub use scan::{
    mlod, permutation_threshold, scan_hk, slod, GenomeCurve, PermutationResult, ScanSummary,
    SignedLodMatrix, StatKind, LOD_CAP,
};
pub use types::{
    Chromosome, CrossType, GenoCall, GeneticMap, GenotypeMatrix, GridSpec, Marker,
    PhenotypeMatrix,
};
