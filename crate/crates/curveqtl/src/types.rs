//! Core domain types: cross designs, genetic maps, genotype and phenotype
//! matrices, and the evaluation grid laid over a map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Experimental cross design. The design fixes the genotype alphabet and
/// the number of regression columns contributed by a locus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossType {
    /// Recombinant inbred lines by selfing: two homozygous genotypes.
    RilSelf,
    /// F2 intercross: two homozygotes plus the heterozygote.
    F2,
}

impl CrossType {
    /// Number of distinct genotypes an individual can carry at a locus.
    pub fn n_genotypes(self) -> usize {
        match self {
            CrossType::RilSelf => 2,
            CrossType::F2 => 3,
        }
    }

    /// Number of regression columns a locus contributes to a design
    /// matrix: one (additive) for a RIL, two (additive + dominance) for
    /// an F2.
    pub fn n_design_cols(self) -> usize {
        match self {
            CrossType::RilSelf => 1,
            CrossType::F2 => 2,
        }
    }

    /// Probability of each genotype for a cross individual at a single
    /// locus, ordered as the genotype states.
    pub fn init_probs(self) -> &'static [f64] {
        match self {
            CrossType::RilSelf => &[0.5, 0.5],
            CrossType::F2 => &[0.25, 0.5, 0.25],
        }
    }
}

/// A single genotype call at one marker for one individual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GenoCall {
    /// Homozygous for the A parent allele.
    AA,
    /// Heterozygous (F2 only).
    Het,
    /// Homozygous for the B parent allele.
    BB,
    /// Not observed.
    Missing,
}

impl GenoCall {
    /// Parse the single-character code used in genotype files.
    pub fn from_code(code: &str) -> Option<GenoCall> {
        match code {
            "A" => Some(GenoCall::AA),
            "H" => Some(GenoCall::Het),
            "B" => Some(GenoCall::BB),
            "-" => Some(GenoCall::Missing),
            _ => None,
        }
    }

    /// The single-character file code for this call.
    pub fn code(self) -> char {
        match self {
            GenoCall::AA => 'A',
            GenoCall::Het => 'H',
            GenoCall::BB => 'B',
            GenoCall::Missing => '-',
        }
    }

    /// Index of this call in the genotype state ordering of `cross`, or
    /// `None` for missing calls and calls outside the cross alphabet.
    pub fn state_index(self, cross: CrossType) -> Option<usize> {
        match (cross, self) {
            (CrossType::RilSelf, GenoCall::AA) => Some(0),
            (CrossType::RilSelf, GenoCall::BB) => Some(1),
            (CrossType::F2, GenoCall::AA) => Some(0),
            (CrossType::F2, GenoCall::Het) => Some(1),
            (CrossType::F2, GenoCall::BB) => Some(2),
            _ => None,
        }
    }

    /// Whether this call may appear in data for the given cross.
    pub fn is_legal(self, cross: CrossType) -> bool {
        self == GenoCall::Missing || self.state_index(cross).is_some()
    }

    /// The call corresponding to a genotype state index of `cross`.
    pub fn from_state_index(cross: CrossType, state: usize) -> GenoCall {
        match (cross, state) {
            (CrossType::RilSelf, 0) => GenoCall::AA,
            (CrossType::RilSelf, 1) => GenoCall::BB,
            (CrossType::F2, 0) => GenoCall::AA,
            (CrossType::F2, 1) => GenoCall::Het,
            (CrossType::F2, 2) => GenoCall::BB,
            _ => panic!("genotype state {state} out of range for {cross:?}"),
        }
    }
}

/// A named marker at a map position (cM from the chromosome start).
#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub name: String,
    pub pos: f64,
}

/// An ordered set of markers on one chromosome.
#[derive(Debug, Clone, PartialEq)]
pub struct Chromosome {
    pub name: String,
    pub markers: Vec<Marker>,
}

impl Chromosome {
    /// Positions of all markers, in map order.
    pub fn marker_positions(&self) -> Vec<f64> {
        self.markers.iter().map(|m| m.pos).collect()
    }

    /// Length spanned by the markers in cM.
    pub fn length(&self) -> f64 {
        match (self.markers.first(), self.markers.last()) {
            (Some(a), Some(b)) => b.pos - a.pos,
            _ => 0.0,
        }
    }
}

/// A genetic map: chromosomes in file order, each with markers at
/// non-decreasing positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneticMap {
    chromosomes: Vec<Chromosome>,
}

impl GeneticMap {
    /// Build a map, checking that every chromosome has at least one
    /// marker, positions are finite and non-decreasing within each
    /// chromosome, and chromosome and marker names are unique.
    pub fn new(chromosomes: Vec<Chromosome>) -> Result<GeneticMap> {
        if chromosomes.is_empty() {
            return Err(Error::invalid("genetic map has no chromosomes"));
        }
        let mut chrom_names = std::collections::HashSet::new();
        let mut marker_names = std::collections::HashSet::new();
        for chrom in &chromosomes {
            if !chrom_names.insert(chrom.name.clone()) {
                return Err(Error::invalid(format!(
                    "duplicate chromosome name {:?} in genetic map",
                    chrom.name
                )));
            }
            if chrom.markers.is_empty() {
                return Err(Error::invalid(format!(
                    "chromosome {:?} has no markers",
                    chrom.name
                )));
            }
            let mut prev = f64::NEG_INFINITY;
            for marker in &chrom.markers {
                if !marker.pos.is_finite() {
                    return Err(Error::invalid(format!(
                        "marker {:?} has non-finite position",
                        marker.name
                    )));
                }
                if marker.pos < prev {
                    return Err(Error::invalid(format!(
                        "marker {:?} on chromosome {:?} is out of order ({} after {})",
                        marker.name, chrom.name, marker.pos, prev
                    )));
                }
                prev = marker.pos;
                if !marker_names.insert(marker.name.clone()) {
                    return Err(Error::invalid(format!(
                        "duplicate marker name {:?} in genetic map",
                        marker.name
                    )));
                }
            }
        }
        Ok(GeneticMap { chromosomes })
    }

    /// Chromosomes in map order.
    pub fn chromosomes(&self) -> &[Chromosome] {
        &self.chromosomes
    }

    /// Total number of markers across all chromosomes.
    pub fn n_markers(&self) -> usize {
        self.chromosomes.iter().map(|c| c.markers.len()).sum()
    }

    /// Marker names in map traversal order (chromosome by chromosome).
    pub fn marker_names(&self) -> Vec<&str> {
        self.chromosomes
            .iter()
            .flat_map(|c| c.markers.iter().map(|m| m.name.as_str()))
            .collect()
    }

    /// Index of the chromosome with the given name.
    pub fn chromosome_index(&self, name: &str) -> Option<usize> {
        self.chromosomes.iter().position(|c| c.name == name)
    }
}

/// Genotype calls for `n_ind` individuals at `n_markers` markers, stored
/// row-major by individual. Marker columns follow map traversal order.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeMatrix {
    ids: Vec<String>,
    n_markers: usize,
    calls: Vec<GenoCall>,
}

impl GenotypeMatrix {
    /// Build a genotype matrix, checking dimensions, identifier
    /// uniqueness, and that every call is legal for `cross`.
    pub fn new(
        ids: Vec<String>,
        n_markers: usize,
        calls: Vec<GenoCall>,
        cross: CrossType,
    ) -> Result<GenotypeMatrix> {
        if calls.len() != ids.len() * n_markers {
            return Err(Error::invalid(format!(
                "genotype matrix has {} calls but expected {} ({} individuals x {} markers)",
                calls.len(),
                ids.len() * n_markers,
                ids.len(),
                n_markers
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id.clone()) {
                return Err(Error::invalid(format!("duplicate individual id {id:?}")));
            }
        }
        for (i, call) in calls.iter().enumerate() {
            if !call.is_legal(cross) {
                return Err(Error::invalid(format!(
                    "genotype call {:?} for individual {:?} is not legal for {:?}",
                    call.code(),
                    ids[i / n_markers],
                    cross
                )));
            }
        }
        Ok(GenotypeMatrix {
            ids,
            n_markers,
            calls,
        })
    }

    pub fn n_ind(&self) -> usize {
        self.ids.len()
    }

    pub fn n_markers(&self) -> usize {
        self.n_markers
    }

    /// Individual identifiers in row order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Call for one individual at one marker (map traversal order).
    pub fn call(&self, ind: usize, marker: usize) -> GenoCall {
        self.calls[ind * self.n_markers + marker]
    }

    /// All calls for one individual, in map traversal order.
    pub fn row(&self, ind: usize) -> &[GenoCall] {
        &self.calls[ind * self.n_markers..(ind + 1) * self.n_markers]
    }

    /// Fraction of calls that are missing.
    pub fn missing_fraction(&self) -> f64 {
        if self.calls.is_empty() {
            return 0.0;
        }
        let missing = self
            .calls
            .iter()
            .filter(|c| **c == GenoCall::Missing)
            .count();
        missing as f64 / self.calls.len() as f64
    }
}

/// Phenotype measurements for `n_ind` individuals at `n_times` time
/// points, stored row-major by individual. Missing cells are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhenotypeMatrix {
    ids: Vec<String>,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PhenotypeMatrix {
    /// Build a phenotype matrix, checking dimensions, identifier
    /// uniqueness, strictly increasing finite times, and that every cell
    /// is finite or `NaN`.
    pub fn new(ids: Vec<String>, times: Vec<f64>, values: Vec<f64>) -> Result<PhenotypeMatrix> {
        if times.is_empty() {
            return Err(Error::invalid("phenotype matrix has no time points"));
        }
        for pair in times.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(Error::invalid(format!(
                    "phenotype times must be strictly increasing ({} then {})",
                    pair[0], pair[1]
                )));
            }
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("phenotype times must be finite"));
        }
        if values.len() != ids.len() * times.len() {
            return Err(Error::invalid(format!(
                "phenotype matrix has {} values but expected {} ({} individuals x {} times)",
                values.len(),
                ids.len() * times.len(),
                ids.len(),
                times.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id.clone()) {
                return Err(Error::invalid(format!("duplicate individual id {id:?}")));
            }
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::invalid(
                "phenotype values must be finite or missing",
            ));
        }
        Ok(PhenotypeMatrix { ids, times, values })
    }

    pub fn n_ind(&self) -> usize {
        self.ids.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Individual identifiers in row order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Measurement times, strictly increasing.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Value for one individual at one time index; `NaN` if missing.
    pub fn value(&self, ind: usize, time: usize) -> f64 {
        self.values[ind * self.times.len() + time]
    }

    /// All values for one individual.
    pub fn row(&self, ind: usize) -> &[f64] {
        &self.values[ind * self.times.len()..(ind + 1) * self.times.len()]
    }

    /// Whether the matrix has no missing cells.
    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Fill missing cells by linear interpolation in time within each
    /// individual, extending the nearest observed value at the ends.
    ///
    /// Rows without missing cells are returned unchanged. A row with
    /// fewer than two observed values cannot be interpolated and is an
    /// error naming the individual.
    pub fn interpolate_missing(&self) -> Result<PhenotypeMatrix> {
        let t_count = self.times.len();
        let mut values = self.values.clone();
        for (ind, id) in self.ids.iter().enumerate() {
            let row = &mut values[ind * t_count..(ind + 1) * t_count];
            if row.iter().all(|v| v.is_finite()) {
                continue;
            }
            let observed: Vec<usize> = (0..t_count).filter(|&t| row[t].is_finite()).collect();
            if observed.len() < 2 {
                return Err(Error::invalid(format!(
                    "individual {id:?} has {} observed phenotype value(s); at least 2 are needed to interpolate",
                    observed.len()
                )));
            }
            for t in 0..t_count {
                if row[t].is_finite() {
                    continue;
                }
                // Position t relative to the observed indices: before the
                // first, after the last, or between two neighbours.
                let after = observed.partition_point(|&o| o < t);
                row[t] = if after == 0 {
                    row[observed[0]]
                } else if after == observed.len() {
                    row[observed[observed.len() - 1]]
                } else {
                    let lo = observed[after - 1];
                    let hi = observed[after];
                    let w = (self.times[t] - self.times[lo]) / (self.times[hi] - self.times[lo]);
                    row[lo] + w * (row[hi] - row[lo])
                };
            }
        }
        PhenotypeMatrix::new(self.ids.clone(), self.times.clone(), values)
    }
}

/// Spacing rule for the evaluation grid laid over a chromosome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    step: f64,
}

/// One evaluation position on a chromosome: either at a marker (with the
/// index of a marker at that position) or between markers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub pos: f64,
    pub marker: Option<usize>,
}

impl GridSpec {
    /// A grid with inter-marker points spaced at most `step` cM apart.
    /// `step = 0` restricts the grid to marker positions only.
    pub fn new(step: f64) -> Result<GridSpec> {
        if !step.is_finite() || step < 0.0 {
            return Err(Error::invalid(format!(
                "grid step must be a finite non-negative number of cM, got {step}"
            )));
        }
        Ok(GridSpec { step })
    }

    /// The maximum spacing in cM, 0 for marker positions only.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Evaluation positions for one chromosome: every distinct marker
    /// position, plus evenly spaced points splitting each inter-marker
    /// gap into segments no longer than `step`.
    ///
    /// When several markers share a position the grid holds one point for
    /// it, tagged with the first such marker's index.
    pub fn positions_for(&self, chrom: &Chromosome) -> Vec<GridPoint> {
        let mut unique: Vec<(f64, usize)> = Vec::new();
        for (idx, marker) in chrom.markers.iter().enumerate() {
            match unique.last() {
                Some(&(pos, _)) if pos == marker.pos => {}
                _ => unique.push((marker.pos, idx)),
            }
        }
        let mut out = Vec::new();
        for (i, &(pos, midx)) in unique.iter().enumerate() {
            if i > 0 && self.step > 0.0 {
                let prev = unique[i - 1].0;
                let gap = pos - prev;
                let segments = (gap / self.step).ceil() as usize;
                for s in 1..segments {
                    out.push(GridPoint {
                        pos: prev + gap * s as f64 / segments as f64,
                        marker: None,
                    });
                }
            }
            out.push(GridPoint {
                pos,
                marker: Some(midx),
            });
        }
        out
    }
}
