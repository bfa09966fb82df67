//! Conditional QTL-genotype probabilities on a pseudomarker grid.
//!
//! Genotypes are observed (possibly with error, possibly missing) only
//! at markers. For every evaluation position this module computes the
//! posterior probability of each true genotype given all marker data on
//! the chromosome, under a hidden Markov chain whose nodes are the grid
//! positions (markers plus inserted pseudomarkers) and whose transition
//! matrices come from the inter-node Haldane recombination fractions —
//! expanded for selfed RIL, or the standard intercross matrix for F2.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{CrossType, GenoCall, GeneticMap, GenotypeMatrix, GridSpec};

/// Upper bound on the genotype-state count across cross types.
pub(crate) const MAX_GENO: usize = 3;

/// Transition matrix between two chain nodes; only the top-left
/// `G x G` block is meaningful for a cross with `G` genotypes.
pub(crate) type StepMatrix = [[f64; MAX_GENO]; MAX_GENO];

/// Haldane map function: recombination fraction for a distance in cM,
/// `r = (1 - e^(-2d/100)) / 2`.
pub fn haldane_r(d_cm: f64) -> Result<f64> {
    if !d_cm.is_finite() || d_cm < 0.0 {
        return Err(Error::invalid(format!(
            "distance must be a finite non-negative number of cM, got {d_cm}"
        )));
    }
    // exp_m1 keeps precision for small distances.
    Ok(-0.5 * f64::exp_m1(-0.02 * d_cm))
}

/// Map a single-meiosis recombination fraction to the effective fraction
/// accumulated over repeated selfing in RIL: `R = 2r / (1 + 2r)`.
pub fn ril_expand(r: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&r) {
        return Err(Error::invalid(format!(
            "recombination fraction must lie in [0, 0.5], got {r}"
        )));
    }
    Ok(2.0 * r / (1.0 + 2.0 * r))
}

/// Transition matrix for one chain segment of length `d_cm`.
pub(crate) fn step_matrix(cross: CrossType, d_cm: f64) -> Result<StepMatrix> {
    let r = haldane_r(d_cm)?;
    let mut m = [[0.0; MAX_GENO]; MAX_GENO];
    match cross {
        CrossType::RilSelf => {
            let big_r = ril_expand(r)?;
            m[0][0] = 1.0 - big_r;
            m[0][1] = big_r;
            m[1][0] = big_r;
            m[1][1] = 1.0 - big_r;
        }
        CrossType::F2 => {
            let s = 1.0 - r;
            m[0] = [s * s, 2.0 * r * s, r * r];
            m[1] = [r * s, s * s + r * r, r * s];
            m[2] = [r * r, 2.0 * r * s, s * s];
        }
    }
    Ok(m)
}

/// Probabilities for one chromosome: `n_ind x n_positions x n_geno`,
/// stored position-major so a scan can stream one position at a time.
#[derive(Debug, Clone)]
pub struct ChromProbs {
    name: String,
    positions: Vec<f64>,
    markers: Vec<Option<usize>>,
    n_ind: usize,
    n_geno: usize,
    probs: Vec<f64>,
}

impl ChromProbs {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Grid positions in cM, including every marker position.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn n_positions(&self) -> usize {
        self.positions.len()
    }

    /// Index of a marker at grid position `p`, if one exists there.
    pub fn marker_at(&self, p: usize) -> Option<usize> {
        self.markers[p]
    }

    /// Posterior probability of genotype state `g` for `ind` at grid
    /// position `p`.
    pub fn prob(&self, ind: usize, p: usize, g: usize) -> f64 {
        self.probs[(p * self.n_ind + ind) * self.n_geno + g]
    }

    /// The probability row (all genotype states) for one individual at
    /// one position.
    pub fn row(&self, ind: usize, p: usize) -> &[f64] {
        let base = (p * self.n_ind + ind) * self.n_geno;
        &self.probs[base..base + self.n_geno]
    }
}

/// Genotype probabilities for every individual, chromosome, and grid
/// position.
#[derive(Debug, Clone)]
pub struct GenoProbs {
    cross: CrossType,
    ids: Vec<String>,
    chromosomes: Vec<ChromProbs>,
}

impl GenoProbs {
    pub fn cross(&self) -> CrossType {
        self.cross
    }

    /// Individual identifiers, in genotype-matrix row order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_ind(&self) -> usize {
        self.ids.len()
    }

    pub fn n_genotypes(&self) -> usize {
        self.cross.n_genotypes()
    }

    pub fn chromosomes(&self) -> &[ChromProbs] {
        &self.chromosomes
    }

    /// Total number of grid positions across chromosomes.
    pub fn n_positions(&self) -> usize {
        self.chromosomes.iter().map(|c| c.n_positions()).sum()
    }

    /// Index of the chromosome with the given name.
    pub fn chromosome_index(&self, name: &str) -> Option<usize> {
        self.chromosomes.iter().position(|c| c.name == name)
    }
}

/// Per-node observation info for one chromosome: the range of marker
/// indices (within the chromosome) sharing that node's position.
struct NodePlan {
    positions: Vec<f64>,
    markers: Vec<Option<usize>>,
    marker_ranges: Vec<std::ops::Range<usize>>,
    steps: Vec<StepMatrix>,
}

fn plan_chromosome(
    chrom: &crate::types::Chromosome,
    cross: CrossType,
    grid: &GridSpec,
) -> Result<NodePlan> {
    let points = grid.positions_for(chrom);
    let mut positions = Vec::with_capacity(points.len());
    let mut markers = Vec::with_capacity(points.len());
    let mut marker_ranges = Vec::with_capacity(points.len());
    for point in &points {
        positions.push(point.pos);
        markers.push(point.marker);
        match point.marker {
            Some(first) => {
                let mut end = first;
                while end < chrom.markers.len() && chrom.markers[end].pos == point.pos {
                    end += 1;
                }
                marker_ranges.push(first..end);
            }
            None => marker_ranges.push(0..0),
        }
    }
    let mut steps = Vec::with_capacity(positions.len().saturating_sub(1));
    for pair in positions.windows(2) {
        steps.push(step_matrix(cross, pair[1] - pair[0])?);
    }
    Ok(NodePlan {
        positions,
        markers,
        marker_ranges,
        steps,
    })
}

/// Emission probability of the observed call given true state `g`.
fn emission(call: GenoCall, g: usize, cross: CrossType, error_prob: f64) -> f64 {
    match call.state_index(cross) {
        None => 1.0, // missing: uninformative
        Some(s) if s == g => 1.0 - error_prob,
        Some(_) => error_prob / (cross.n_genotypes() - 1) as f64,
    }
}

/// Forward-backward over one chromosome for one individual; returns the
/// node-major posterior matrix (`n_nodes x n_geno`), or `None` when the
/// data have zero likelihood under the chain.
fn posteriors_for_individual(
    plan: &NodePlan,
    calls: &[GenoCall],
    cross: CrossType,
    error_prob: f64,
) -> Option<Vec<f64>> {
    let g_count = cross.n_genotypes();
    let n_nodes = plan.positions.len();
    let emit = |node: usize, g: usize| -> f64 {
        plan.marker_ranges[node]
            .clone()
            .map(|m| emission(calls[m], g, cross, error_prob))
            .product()
    };

    // Forward pass with per-node normalization.
    let mut alpha = vec![0.0; n_nodes * g_count];
    let init = cross.init_probs();
    let mut sum = 0.0;
    for g in 0..g_count {
        let a = init[g] * emit(0, g);
        alpha[g] = a;
        sum += a;
    }
    if sum <= 0.0 {
        return None;
    }
    for g in 0..g_count {
        alpha[g] /= sum;
    }
    for node in 1..n_nodes {
        let step = &plan.steps[node - 1];
        let (prev, cur) = alpha.split_at_mut(node * g_count);
        let prev = &prev[(node - 1) * g_count..];
        let cur = &mut cur[..g_count];
        let mut sum = 0.0;
        for (g, c) in cur.iter_mut().enumerate() {
            let mut s = 0.0;
            for (h, &p) in prev.iter().enumerate() {
                s += p * step[h][g];
            }
            let a = s * emit(node, g);
            *c = a;
            sum += a;
        }
        if sum <= 0.0 {
            return None;
        }
        for c in cur.iter_mut() {
            *c /= sum;
        }
    }

    // Backward pass, also normalized (scale cancels in the posterior).
    let mut beta = vec![0.0; n_nodes * g_count];
    for g in 0..g_count {
        beta[(n_nodes - 1) * g_count + g] = 1.0;
    }
    for node in (0..n_nodes.saturating_sub(1)).rev() {
        let step = &plan.steps[node];
        let mut next = [0.0; MAX_GENO];
        for (h, n) in next.iter_mut().enumerate().take(g_count) {
            *n = emit(node + 1, h) * beta[(node + 1) * g_count + h];
        }
        let mut sum = 0.0;
        for g in 0..g_count {
            let mut s = 0.0;
            for (h, &n) in next.iter().enumerate().take(g_count) {
                s += step[g][h] * n;
            }
            beta[node * g_count + g] = s;
            sum += s;
        }
        if sum <= 0.0 {
            return None;
        }
        for g in 0..g_count {
            beta[node * g_count + g] /= sum;
        }
    }

    // Posterior per node.
    let mut post = vec![0.0; n_nodes * g_count];
    for node in 0..n_nodes {
        let mut sum = 0.0;
        for g in 0..g_count {
            let v = alpha[node * g_count + g] * beta[node * g_count + g];
            post[node * g_count + g] = v;
            sum += v;
        }
        if sum <= 0.0 {
            return None;
        }
        for g in 0..g_count {
            post[node * g_count + g] /= sum;
        }
    }
    Some(post)
}

/// Compute genotype probabilities at every grid position.
///
/// `error_prob` is the per-marker genotyping error rate: an observed
/// call equals the true genotype with probability `1 - error_prob` and
/// is otherwise uniform over the remaining codes; missing markers are
/// uninformative.
pub fn calc_genoprob(
    geno: &GenotypeMatrix,
    map: &GeneticMap,
    cross: CrossType,
    grid: &GridSpec,
    error_prob: f64,
) -> Result<GenoProbs> {
    if !(0.0..0.5).contains(&error_prob) {
        return Err(Error::invalid(format!(
            "error_prob must lie in [0, 0.5), got {error_prob}"
        )));
    }
    if geno.n_markers() != map.n_markers() {
        return Err(Error::invalid(format!(
            "genotype matrix has {} markers but the map has {}",
            geno.n_markers(),
            map.n_markers()
        )));
    }
    let g_count = cross.n_genotypes();
    let n_ind = geno.n_ind();
    let mut chromosomes = Vec::with_capacity(map.chromosomes().len());
    let mut offset = 0usize;
    for chrom in map.chromosomes() {
        let plan = plan_chromosome(chrom, cross, grid)?;
        let n_nodes = plan.positions.len();
        let marker_slice = offset..offset + chrom.markers.len();

        let per_ind: Vec<std::result::Result<Vec<f64>, String>> = (0..n_ind)
            .into_par_iter()
            .map(|ind| {
                let calls = &geno.row(ind)[marker_slice.clone()];
                posteriors_for_individual(&plan, calls, cross, error_prob)
                    .ok_or_else(|| geno.ids()[ind].clone())
            })
            .collect();

        let mut probs = vec![0.0; n_nodes * n_ind * g_count];
        for (ind, result) in per_ind.iter().enumerate() {
            match result {
                Ok(post) => {
                    for node in 0..n_nodes {
                        let src = &post[node * g_count..(node + 1) * g_count];
                        let dst = (node * n_ind + ind) * g_count;
                        probs[dst..dst + g_count].copy_from_slice(src);
                    }
                }
                Err(id) => {
                    return Err(Error::ZeroLikelihood {
                        id: id.clone(),
                        chrom: chrom.name.clone(),
                    })
                }
            }
        }
        chromosomes.push(ChromProbs {
            name: chrom.name.clone(),
            positions: plan.positions,
            markers: plan.markers,
            n_ind,
            n_geno: g_count,
            probs,
        });
        offset += chrom.markers.len();
    }
    Ok(GenoProbs {
        cross,
        ids: geno.ids().to_vec(),
        chromosomes,
    })
}
