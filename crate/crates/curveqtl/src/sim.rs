//! Synthetic crosses and function-valued phenotypes.
//!
//! Two generators cover the two study designs used throughout the
//! crate: a single-QTL intercross with logistic genotype mean curves
//! and multivariate-normal residuals, and a multiple-QTL recombinant
//! inbred design whose individual curves are cubic polynomials with
//! random coefficients. Both are driven by seeded, per-dataset RNG
//! streams so every dataset is bit-reproducible. The [`power`]
//! submodule runs detection-power studies on top of them.

pub mod power;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::genoprob::{step_matrix, StepMatrix};
use crate::linalg::{cholesky, CholeskyLower};
use crate::modelsel::QtlLocus;
use crate::stream::{domain, stream_rng};
use crate::types::{
    Chromosome, CrossType, GenoCall, GeneticMap, GenotypeMatrix, Marker, PhenotypeMatrix,
};

/// Positions closer than this (cM) merge into one simulation node.
const NODE_TIE_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------
// Residual covariance structures
// ---------------------------------------------------------------------

/// Residual covariance structure over time points.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceKind {
    /// Entry (i, j) = `sigma2 * rho^|i-j|`.
    Autoregressive { sigma2: f64, rho: f64 },
    /// Diagonal `sigma2`, every off-diagonal `sigma2 * rho`.
    Equicorrelated { sigma2: f64, rho: f64 },
    /// An explicit symmetric matrix, one row per time point.
    Unstructured { matrix: Vec<Vec<f64>> },
}

impl CovarianceKind {
    /// The unscaled covariance as a dense row-major `t_count x t_count`
    /// matrix.
    pub fn matrix(&self, t_count: usize) -> Result<Vec<f64>> {
        match self {
            CovarianceKind::Autoregressive { sigma2, rho }
            | CovarianceKind::Equicorrelated { sigma2, rho } => {
                if !(*sigma2 >= 0.0) || !sigma2.is_finite() {
                    return Err(Error::invalid(format!(
                        "covariance sigma2 must be a non-negative finite value, got {sigma2}"
                    )));
                }
                if !(-1.0..=1.0).contains(rho) {
                    return Err(Error::invalid(format!(
                        "covariance rho must lie in [-1, 1], got {rho}"
                    )));
                }
                let ar = matches!(self, CovarianceKind::Autoregressive { .. });
                let mut m = vec![0.0; t_count * t_count];
                for i in 0..t_count {
                    for j in 0..t_count {
                        m[i * t_count + j] = if i == j {
                            *sigma2
                        } else if ar {
                            *sigma2 * rho.powi((i as i32 - j as i32).abs())
                        } else {
                            *sigma2 * *rho
                        };
                    }
                }
                Ok(m)
            }
            CovarianceKind::Unstructured { matrix } => {
                if matrix.len() != t_count || matrix.iter().any(|row| row.len() != t_count) {
                    return Err(Error::invalid(format!(
                        "unstructured covariance is {}x{}, but the phenotype has {} time points",
                        matrix.len(),
                        matrix.first().map_or(0, |r| r.len()),
                        t_count
                    )));
                }
                let mut m = vec![0.0; t_count * t_count];
                for (i, row) in matrix.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        if !v.is_finite() {
                            return Err(Error::invalid(
                                "unstructured covariance has a non-finite entry",
                            ));
                        }
                        m[i * t_count + j] = v;
                    }
                }
                for i in 0..t_count {
                    for j in 0..i {
                        if (m[i * t_count + j] - m[j * t_count + i]).abs() > 1e-8 {
                            return Err(Error::invalid(
                                "unstructured covariance is not symmetric",
                            ));
                        }
                    }
                }
                Ok(m)
            }
        }
    }
}

/// A residual covariance `scale * kind`: the structure plus the overall
/// multiplier that sets the error variance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub scale: f64,
}

impl CovarianceSpec {
    pub fn new(kind: CovarianceKind, scale: f64) -> CovarianceSpec {
        CovarianceSpec { kind, scale }
    }

    /// The scaled covariance as a dense row-major matrix.
    pub fn matrix(&self, t_count: usize) -> Result<Vec<f64>> {
        if !(self.scale >= 0.0) || !self.scale.is_finite() {
            return Err(Error::invalid(format!(
                "covariance scale must be a non-negative finite value, got {}",
                self.scale
            )));
        }
        let mut m = self.kind.matrix(t_count)?;
        for v in &mut m {
            *v *= self.scale;
        }
        Ok(m)
    }
}

/// The built-in 10x10 unstructured covariance used by the single-QTL
/// study: variances grow roughly 20-fold over the curve and nearby time
/// points are strongly correlated.
pub fn study_unstructured() -> CovarianceKind {
    let rows: [[f64; 10]; 10] = [
        [0.72, 0.39, 0.45, 0.48, 0.50, 0.53, 0.60, 0.64, 0.68, 0.68],
        [0.39, 1.06, 1.61, 1.60, 1.50, 1.48, 1.55, 1.47, 1.35, 1.29],
        [0.45, 1.61, 3.29, 3.29, 3.17, 3.09, 3.19, 3.04, 2.78, 2.53],
        [0.48, 1.60, 3.29, 3.98, 4.07, 4.04, 4.17, 4.18, 4.00, 3.69],
        [0.50, 1.50, 3.17, 4.07, 4.70, 4.68, 4.66, 4.78, 4.70, 4.36],
        [0.53, 1.48, 3.09, 4.04, 4.68, 5.56, 6.23, 6.87, 7.11, 6.92],
        [0.60, 1.55, 3.19, 4.17, 4.66, 6.23, 8.59, 10.16, 10.80, 10.70],
        [0.64, 1.47, 3.04, 4.18, 4.78, 6.87, 10.16, 12.74, 13.80, 13.80],
        [0.68, 1.35, 2.78, 4.00, 4.70, 7.11, 10.80, 13.80, 15.33, 15.35],
        [0.68, 1.29, 2.53, 3.69, 4.36, 6.92, 10.70, 13.80, 15.35, 15.77],
    ];
    CovarianceKind::Unstructured {
        matrix: rows.iter().map(|r| r.to_vec()).collect(),
    }
}

// ---------------------------------------------------------------------
// Multivariate-normal sampling
// ---------------------------------------------------------------------

/// Draws from `N(0, Sigma)` via a Cholesky factor of `Sigma`. A zero
/// matrix yields degenerate (all-zero) draws; anything else must be
/// positive definite.
#[derive(Debug, Clone)]
pub(crate) struct MvnSampler {
    dim: usize,
    factor: Option<CholeskyLower>,
    z: Vec<f64>,
}

impl MvnSampler {
    pub fn new(matrix: &[f64], dim: usize) -> Result<MvnSampler> {
        assert_eq!(matrix.len(), dim * dim, "covariance size mismatch");
        let factor = if matrix.iter().all(|&v| v == 0.0) {
            None
        } else {
            Some(cholesky(matrix, dim)?)
        };
        Ok(MvnSampler {
            dim,
            factor,
            z: vec![0.0; dim],
        })
    }

    /// Fill `out` with one draw. Always consumes `dim` standard-normal
    /// variates so draw sequences stay aligned across scale settings.
    pub fn sample_into(&mut self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        for z in &mut self.z {
            *z = rng.sample(StandardNormal);
        }
        match &self.factor {
            Some(f) => f.mul_vec(&self.z, out),
            None => out.fill(0.0),
        }
    }
}

// ---------------------------------------------------------------------
// Genotype simulation along a chromosome
// ---------------------------------------------------------------------

/// Sampling plan for one chromosome: unique node positions (markers
/// plus any latent QTL positions), per-segment transition matrices, and
/// the node index of every marker and extra position.
#[derive(Debug, Clone)]
struct ChromSim {
    n_geno: usize,
    init: &'static [f64],
    steps: Vec<StepMatrix>,
    marker_node: Vec<usize>,
    extra_node: Vec<usize>,
    n_nodes: usize,
}

impl ChromSim {
    fn new(chrom: &Chromosome, cross: CrossType, extras: &[f64]) -> Result<ChromSim> {
        for &pos in extras {
            if !pos.is_finite() || pos < 0.0 {
                return Err(Error::invalid(format!(
                    "simulated locus position must be finite and non-negative, got {pos}"
                )));
            }
        }
        // Merge marker and extra positions into sorted unique nodes.
        let mut events: Vec<(f64, bool, usize)> = chrom
            .markers
            .iter()
            .enumerate()
            .map(|(i, m)| (m.pos, false, i))
            .chain(extras.iter().enumerate().map(|(i, &p)| (p, true, i)))
            .collect();
        events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut positions: Vec<f64> = Vec::new();
        let mut marker_node = vec![0; chrom.markers.len()];
        let mut extra_node = vec![0; extras.len()];
        for (pos, is_extra, idx) in events {
            if positions
                .last()
                .is_none_or(|&last| pos - last > NODE_TIE_TOL)
            {
                positions.push(pos);
            }
            let node = positions.len() - 1;
            if is_extra {
                extra_node[idx] = node;
            } else {
                marker_node[idx] = node;
            }
        }
        let steps = positions
            .windows(2)
            .map(|w| step_matrix(cross, w[1] - w[0]))
            .collect::<Result<Vec<_>>>()?;
        Ok(ChromSim {
            n_geno: cross.n_genotypes(),
            init: cross.init_probs(),
            steps,
            marker_node,
            extra_node,
            n_nodes: positions.len(),
        })
    }

    /// Sample genotype states at every node: the first node from the
    /// cross's stationary frequencies, each later node from the
    /// transition row of the previous one.
    fn walk(&self, rng: &mut ChaCha8Rng, states: &mut Vec<u8>) {
        states.clear();
        let mut state = sample_index(rng, self.init);
        states.push(state as u8);
        for step in &self.steps {
            state = sample_index(rng, &step[state][..self.n_geno]);
            states.push(state as u8);
        }
        debug_assert_eq!(states.len(), self.n_nodes);
    }
}

/// Sample an index from a discrete distribution given as probabilities.
fn sample_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn sim_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("ind{i}")).collect()
}

/// Simulate a fully observed genotype matrix for `n` individuals:
/// independent Markov chains along each chromosome, started from the
/// cross's stationary genotype frequencies.
pub fn sim_genotypes(
    map: &GeneticMap,
    cross: CrossType,
    n: usize,
    seed: u64,
) -> Result<GenotypeMatrix> {
    if n == 0 {
        return Err(Error::invalid("cannot simulate an empty cross"));
    }
    let plans: Vec<ChromSim> = map
        .chromosomes()
        .iter()
        .map(|c| ChromSim::new(c, cross, &[]))
        .collect::<Result<_>>()?;
    let mut rng = stream_rng(seed, domain::DATASET, 0);
    let mut calls = Vec::with_capacity(n * map.n_markers());
    let mut states = Vec::new();
    for _ in 0..n {
        for plan in &plans {
            plan.walk(&mut rng, &mut states);
            for &node in &plan.marker_node {
                calls.push(GenoCall::from_state_index(cross, states[node] as usize));
            }
        }
    }
    GenotypeMatrix::new(sim_ids(n), map.n_markers(), calls, cross)
}

// ---------------------------------------------------------------------
// Single-QTL study: logistic genotype curves
// ---------------------------------------------------------------------

/// One genotype's logistic mean curve `a / (1 + b * exp(-r t))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenotypeCurve {
    pub asymptote: f64,
    pub shape: f64,
    pub rate: f64,
}

impl GenotypeCurve {
    pub fn new(asymptote: f64, shape: f64, rate: f64) -> GenotypeCurve {
        GenotypeCurve {
            asymptote,
            shape,
            rate,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.asymptote / (1.0 + self.shape * (-self.rate * t).exp())
    }
}

/// Design of the single-QTL simulation: one chromosome, evenly spaced
/// markers, one QTL with a logistic mean curve per genotype.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticQtlSpec {
    pub cross: CrossType,
    pub chrom_len_cm: f64,
    pub n_markers: usize,
    pub qtl_pos_cm: f64,
    pub times: Vec<f64>,
    pub curve_aa: GenotypeCurve,
    pub curve_ab: GenotypeCurve,
    pub curve_bb: GenotypeCurve,
}

impl Default for LogisticQtlSpec {
    /// The standard single-QTL study design: an intercross on one
    /// 100 cM chromosome with 6 equally spaced markers, a QTL at 32 cM,
    /// and 10 time points at t = 1..10.
    fn default() -> LogisticQtlSpec {
        LogisticQtlSpec {
            cross: CrossType::F2,
            chrom_len_cm: 100.0,
            n_markers: 6,
            qtl_pos_cm: 32.0,
            times: (1..=10).map(f64::from).collect(),
            curve_aa: GenotypeCurve::new(29.0, 7.0, 0.7),
            curve_ab: GenotypeCurve::new(28.5, 6.5, 0.73),
            curve_bb: GenotypeCurve::new(27.5, 5.0, 0.75),
        }
    }
}

impl LogisticQtlSpec {
    /// The genetic map implied by the design: markers `m1..mK` evenly
    /// spaced over one chromosome named "1".
    pub fn map(&self) -> Result<GeneticMap> {
        if self.n_markers < 2 {
            return Err(Error::invalid("the design needs at least 2 markers"));
        }
        if !(self.chrom_len_cm > 0.0) || !self.chrom_len_cm.is_finite() {
            return Err(Error::invalid(
                "chromosome length must be a positive finite value",
            ));
        }
        let k = self.n_markers;
        let markers = (0..k)
            .map(|i| Marker {
                name: format!("m{}", i + 1),
                pos: self.chrom_len_cm * i as f64 / (k - 1) as f64,
            })
            .collect();
        GeneticMap::new(vec![Chromosome {
            name: "1".to_string(),
            markers,
        }])
    }

    /// The mean curve of a genotype.
    pub fn curve_for(&self, genotype: GenoCall) -> &GenotypeCurve {
        match genotype {
            GenoCall::AA => &self.curve_aa,
            GenoCall::Het => &self.curve_ab,
            GenoCall::BB => &self.curve_bb,
            GenoCall::Missing => panic!("no mean curve for a missing genotype"),
        }
    }

    /// A copy with every genotype sharing the AA curve: the null design
    /// with zero QTL effect.
    pub fn zero_effect(&self) -> LogisticQtlSpec {
        LogisticQtlSpec {
            curve_ab: self.curve_aa,
            curve_bb: self.curve_aa,
            ..self.clone()
        }
    }
}

/// Mean phenotype of a genotype at time `t` under the logistic design.
pub fn logistic_mean(spec: &LogisticQtlSpec, genotype: GenoCall, t: f64) -> f64 {
    spec.curve_for(genotype).value(t)
}

/// A simulated single-QTL dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleQtlData {
    pub map: GeneticMap,
    pub geno: GenotypeMatrix,
    pub pheno: PhenotypeMatrix,
    pub true_pos_cm: f64,
    /// The latent QTL genotype of each individual.
    pub qtl_genotypes: Vec<GenoCall>,
}

/// Reusable sampling state for one single-QTL design and covariance.
#[derive(Debug, Clone)]
pub(crate) struct SingleQtlEngine {
    map: GeneticMap,
    cross: CrossType,
    plan: ChromSim,
    times: Vec<f64>,
    /// Mean curve per genotype state, state-major.
    means: Vec<Vec<f64>>,
    sampler: MvnSampler,
    noise_sd: f64,
    qtl_pos_cm: f64,
}

impl SingleQtlEngine {
    pub fn new(
        spec: &LogisticQtlSpec,
        cov: &CovarianceSpec,
        noise_sd: f64,
    ) -> Result<SingleQtlEngine> {
        if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
            return Err(Error::invalid(format!(
                "noise standard deviation must be a non-negative finite value, got {noise_sd}"
            )));
        }
        if spec.times.is_empty() {
            return Err(Error::invalid("the design needs at least one time point"));
        }
        let map = spec.map()?;
        let plan = ChromSim::new(&map.chromosomes()[0], spec.cross, &[spec.qtl_pos_cm])?;
        let t_count = spec.times.len();
        let means = (0..spec.cross.n_genotypes())
            .map(|s| {
                let call = GenoCall::from_state_index(spec.cross, s);
                spec.times
                    .iter()
                    .map(|&t| logistic_mean(spec, call, t))
                    .collect()
            })
            .collect();
        let sampler = MvnSampler::new(&cov.matrix(t_count)?, t_count)?;
        Ok(SingleQtlEngine {
            map,
            cross: spec.cross,
            plan,
            times: spec.times.clone(),
            means,
            sampler,
            noise_sd,
            qtl_pos_cm: spec.qtl_pos_cm,
        })
    }

    pub fn simulate(&mut self, n: usize, rng: &mut ChaCha8Rng) -> SingleQtlData {
        let t_count = self.times.len();
        let n_markers = self.plan.marker_node.len();
        let mut calls = Vec::with_capacity(n * n_markers);
        let mut values = Vec::with_capacity(n * t_count);
        let mut qtl_genotypes = Vec::with_capacity(n);
        let mut states = Vec::new();
        let mut eps = vec![0.0; t_count];
        for _ in 0..n {
            self.plan.walk(rng, &mut states);
            for &node in &self.plan.marker_node {
                calls.push(GenoCall::from_state_index(self.cross, states[node] as usize));
            }
            let qtl_state = states[self.plan.extra_node[0]] as usize;
            qtl_genotypes.push(GenoCall::from_state_index(self.cross, qtl_state));
            self.sampler.sample_into(rng, &mut eps);
            let mean = &self.means[qtl_state];
            for t in 0..t_count {
                let z: f64 = rng.sample(StandardNormal);
                values.push(mean[t] + eps[t] + self.noise_sd * z);
            }
        }
        let ids = sim_ids(n);
        let geno = GenotypeMatrix::new(ids.clone(), n_markers, calls, self.cross)
            .expect("simulated genotypes are valid by construction");
        let pheno = PhenotypeMatrix::new(ids, self.times.clone(), values)
            .expect("simulated phenotypes are valid by construction");
        SingleQtlData {
            map: self.map.clone(),
            geno,
            pheno,
            true_pos_cm: self.qtl_pos_cm,
            qtl_genotypes,
        }
    }
}

/// Simulate one single-QTL dataset: genotypes from the map's Markov
/// chain, phenotypes as the QTL genotype's logistic mean plus a
/// multivariate-normal residual plus independent per-time noise.
pub fn sim_single_qtl(
    spec: &LogisticQtlSpec,
    cov: &CovarianceSpec,
    n: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<SingleQtlData> {
    if n == 0 {
        return Err(Error::invalid("cannot simulate an empty cross"));
    }
    let mut engine = SingleQtlEngine::new(spec, cov, noise_sd)?;
    let mut rng = stream_rng(seed, domain::DATASET, 0);
    Ok(engine.simulate(n, &mut rng))
}

/// Heritability of the QTL over time under a single-QTL design.
#[derive(Debug, Clone, PartialEq)]
pub struct HeritabilityProfile {
    /// h²(t) at each design time point.
    pub per_time: Vec<f64>,
    /// Mean of h²(t) over the time points.
    pub mean: f64,
}

/// Fraction of phenotypic variance explained by the QTL at each time
/// point: genotype-frequency-weighted variance of the mean curves over
/// that variance plus residual variance plus noise variance.
pub fn heritability_profile(
    spec: &LogisticQtlSpec,
    cov: &CovarianceSpec,
    noise_sd: f64,
) -> Result<HeritabilityProfile> {
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(Error::invalid(format!(
            "noise standard deviation must be a non-negative finite value, got {noise_sd}"
        )));
    }
    let t_count = spec.times.len();
    let sigma = cov.matrix(t_count)?;
    let freqs = spec.cross.init_probs();
    let mut per_time = Vec::with_capacity(t_count);
    for (ti, &t) in spec.times.iter().enumerate() {
        let means: Vec<f64> = (0..spec.cross.n_genotypes())
            .map(|s| logistic_mean(spec, GenoCall::from_state_index(spec.cross, s), t))
            .collect();
        let grand: f64 = freqs.iter().zip(&means).map(|(f, m)| f * m).sum();
        let vq: f64 = freqs
            .iter()
            .zip(&means)
            .map(|(f, m)| f * (m - grand) * (m - grand))
            .sum();
        let denom = vq + sigma[ti * t_count + ti] + noise_sd * noise_sd;
        per_time.push(if denom > 0.0 { vq / denom } else { 0.0 });
    }
    let mean = per_time.iter().sum::<f64>() / t_count.max(1) as f64;
    Ok(HeritabilityProfile { per_time, mean })
}

// ---------------------------------------------------------------------
// Multiple-QTL study: cubic coefficient curves
// ---------------------------------------------------------------------

/// One QTL of the cubic design: its location and the cubic-coefficient
/// quadruple separating the homozygotes from the baseline. B homozygotes
/// get `+effect`, A homozygotes `-effect`, and intercross heterozygotes
/// sit on the baseline, so the quadruple is half the homozygote
/// difference.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicLocus {
    pub chrom: String,
    pub pos_cm: f64,
    pub effect: [f64; 4],
}

/// Design of the multiple-QTL simulation: each individual's curve is
/// `a + b t + c t^2 + d t^3` with a coefficient quadruple drawn from a
/// multivariate normal whose mean depends on the QTL genotypes, plus
/// independent per-time measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicQtlSpec {
    pub cross: CrossType,
    pub map: GeneticMap,
    pub baseline: [f64; 4],
    pub loci: Vec<CubicLocus>,
    /// Coefficient covariance (4x4, row-major rows).
    pub coef_cov: [[f64; 4]; 4],
    pub noise_sd: f64,
    pub times: Vec<f64>,
}

/// A genetic map of equally long chromosomes with evenly spaced
/// markers; chromosomes are named "1", "2", ... and markers `c<chr>m<i>`.
pub fn evenly_spaced_map(n_chrom: usize, length_cm: f64, spacing_cm: f64) -> Result<GeneticMap> {
    if n_chrom == 0 {
        return Err(Error::invalid("the map needs at least one chromosome"));
    }
    if !(length_cm > 0.0) || !(spacing_cm > 0.0) || !length_cm.is_finite() {
        return Err(Error::invalid(
            "chromosome length and marker spacing must be positive finite values",
        ));
    }
    let per_chrom = (length_cm / spacing_cm).round() as usize;
    let chromosomes = (1..=n_chrom)
        .map(|c| Chromosome {
            name: c.to_string(),
            markers: (0..=per_chrom)
                .map(|i| Marker {
                    name: format!("c{c}m{}", i + 1),
                    pos: spacing_cm * i as f64,
                })
                .collect(),
        })
        .collect();
    GeneticMap::new(chromosomes)
}

impl Default for CubicQtlSpec {
    /// The standard three-QTL design: a selfed RIL genome of five
    /// 100 cM chromosomes with markers every 5 cM, QTL on chromosomes
    /// 1/3/4 at 61/76/40 cM, and 241 time points on [0, 1].
    fn default() -> CubicQtlSpec {
        CubicQtlSpec {
            cross: CrossType::RilSelf,
            map: evenly_spaced_map(5, 100.0, 5.0).expect("static map parameters are valid"),
            baseline: [-0.238, -265.248, 229.405, -59.771],
            loci: vec![
                CubicLocus {
                    chrom: "1".to_string(),
                    pos_cm: 61.0,
                    effect: [0.209, 8.729, 1.602, -9.054],
                },
                CubicLocus {
                    chrom: "3".to_string(),
                    pos_cm: 76.0,
                    effect: [-1.887, 3.414, -4.220, 2.265],
                },
                CubicLocus {
                    chrom: "4".to_string(),
                    pos_cm: 40.0,
                    effect: [2.003, 11.907, -28.647, 15.311],
                },
            ],
            coef_cov: [
                [58.99, -177.77, 185.11, -45.44],
                [-177.77, 3848.70, -7274.83, 3595.37],
                [185.11, -7274.83, 16897.56, -9702.32],
                [-45.44, 3595.37, -9702.32, 6096.71],
            ],
            noise_sd: 1.0,
            times: (0..=240).map(|i| i as f64 / 240.0).collect(),
        }
    }
}

impl CubicQtlSpec {
    /// The true QTL locations as model loci.
    pub fn true_loci(&self) -> Vec<QtlLocus> {
        self.loci
            .iter()
            .map(|l| QtlLocus {
                chrom: l.chrom.clone(),
                pos: l.pos_cm,
            })
            .collect()
    }
}

/// A simulated multiple-QTL dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiQtlData {
    pub map: GeneticMap,
    pub geno: GenotypeMatrix,
    pub pheno: PhenotypeMatrix,
    pub true_loci: Vec<QtlLocus>,
}

fn cubic(coef: &[f64; 4], t: f64) -> f64 {
    coef[0] + t * (coef[1] + t * (coef[2] + t * coef[3]))
}

/// Reusable sampling state for one cubic multiple-QTL design.
#[derive(Debug, Clone)]
pub(crate) struct MultiQtlEngine<'a> {
    spec: &'a CubicQtlSpec,
    plans: Vec<ChromSim>,
    /// Per design locus: (chromosome index, node index, extra slot).
    locus_node: Vec<(usize, usize)>,
    coef_sampler: MvnSampler,
}

impl<'a> MultiQtlEngine<'a> {
    pub fn new(spec: &'a CubicQtlSpec) -> Result<MultiQtlEngine<'a>> {
        if !(spec.noise_sd >= 0.0) || !spec.noise_sd.is_finite() {
            return Err(Error::invalid(
                "noise standard deviation must be a non-negative finite value",
            ));
        }
        if spec.times.is_empty() {
            return Err(Error::invalid("the design needs at least one time point"));
        }
        // Group QTL positions by chromosome.
        let chroms = spec.map.chromosomes();
        let mut extras: Vec<Vec<f64>> = vec![Vec::new(); chroms.len()];
        let mut slots: Vec<(usize, usize)> = Vec::with_capacity(spec.loci.len());
        for locus in &spec.loci {
            let Some(ci) = chroms.iter().position(|c| c.name == locus.chrom) else {
                return Err(Error::invalid(format!(
                    "simulated QTL names unknown chromosome {:?}",
                    locus.chrom
                )));
            };
            slots.push((ci, extras[ci].len()));
            extras[ci].push(locus.pos_cm);
        }
        let plans: Vec<ChromSim> = chroms
            .iter()
            .zip(&extras)
            .map(|(c, e)| ChromSim::new(c, spec.cross, e))
            .collect::<Result<_>>()?;
        let locus_node = slots
            .into_iter()
            .map(|(ci, slot)| (ci, plans[ci].extra_node[slot]))
            .collect();
        let mut flat = [0.0; 16];
        for (i, row) in spec.coef_cov.iter().enumerate() {
            flat[i * 4..(i + 1) * 4].copy_from_slice(row);
        }
        let coef_sampler = MvnSampler::new(&flat, 4)?;
        Ok(MultiQtlEngine {
            spec,
            plans,
            locus_node,
            coef_sampler,
        })
    }

    pub fn simulate(&mut self, n: usize, rng: &mut ChaCha8Rng) -> MultiQtlData {
        let spec = self.spec;
        let t_count = spec.times.len();
        let n_markers = spec.map.n_markers();
        let mut calls = Vec::with_capacity(n * n_markers);
        let mut values = Vec::with_capacity(n * t_count);
        let mut states = Vec::new();
        let mut all_states: Vec<Vec<u8>> = vec![Vec::new(); self.plans.len()];
        let mut draw = [0.0; 4];
        for _ in 0..n {
            for (ci, plan) in self.plans.iter().enumerate() {
                plan.walk(rng, &mut states);
                for &node in &plan.marker_node {
                    calls.push(GenoCall::from_state_index(spec.cross, states[node] as usize));
                }
                std::mem::swap(&mut all_states[ci], &mut states);
            }
            // Coefficient quadruple: baseline plus genotype-signed QTL
            // effects, then a draw around that mean. Each effect is half
            // the difference between the homozygote means, so the A and
            // B genotypes sit at -effect and +effect around the baseline.
            let mut coef = spec.baseline;
            for (li, &(ci, node)) in self.locus_node.iter().enumerate() {
                let state = all_states[ci][node] as usize;
                let call = GenoCall::from_state_index(spec.cross, state);
                let sign = match call {
                    GenoCall::AA => -1.0,
                    GenoCall::Het => 0.0,
                    GenoCall::BB => 1.0,
                    GenoCall::Missing => unreachable!(),
                };
                if sign != 0.0 {
                    for (c, e) in coef.iter_mut().zip(&spec.loci[li].effect) {
                        *c += sign * e;
                    }
                }
            }
            self.coef_sampler.sample_into(rng, &mut draw);
            for (c, d) in coef.iter_mut().zip(&draw) {
                *c += d;
            }
            for &t in &spec.times {
                let z: f64 = rng.sample(StandardNormal);
                values.push(cubic(&coef, t) + spec.noise_sd * z);
            }
        }
        let ids = sim_ids(n);
        let geno = GenotypeMatrix::new(ids.clone(), n_markers, calls, spec.cross)
            .expect("simulated genotypes are valid by construction");
        let pheno = PhenotypeMatrix::new(ids, spec.times.clone(), values)
            .expect("simulated phenotypes are valid by construction");
        MultiQtlData {
            map: spec.map.clone(),
            geno,
            pheno,
            true_loci: spec.true_loci(),
        }
    }
}

/// Simulate one dataset from a cubic multiple-QTL design.
pub fn sim_multi_qtl_with(spec: &CubicQtlSpec, n: usize, seed: u64) -> Result<MultiQtlData> {
    if n == 0 {
        return Err(Error::invalid("cannot simulate an empty cross"));
    }
    let mut engine = MultiQtlEngine::new(spec)?;
    let mut rng = stream_rng(seed, domain::DATASET, 0);
    Ok(engine.simulate(n, &mut rng))
}

/// Simulate one dataset from the standard three-QTL design.
pub fn sim_multi_qtl(n: usize, seed: u64) -> Result<MultiQtlData> {
    sim_multi_qtl_with(&CubicQtlSpec::default(), n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_means_match_closed_form() {
        let spec = LogisticQtlSpec::default();
        assert!((logistic_mean(&spec, GenoCall::AA, 1.0) - 6.478858518965542).abs() < 1e-12);
        assert!((logistic_mean(&spec, GenoCall::Het, 1.0) - 6.896704535440326).abs() < 1e-12);
        assert!((logistic_mean(&spec, GenoCall::BB, 1.0) - 8.180061868899234).abs() < 1e-12);
        // Asymptote at large t.
        assert!((logistic_mean(&spec, GenoCall::AA, 1000.0) - 29.0).abs() < 1e-12);
        // shape = 0 gives the asymptote at every t.
        let flat = GenotypeCurve::new(12.5, 0.0, 0.4);
        assert_eq!(flat.value(0.0), 12.5);
        assert_eq!(flat.value(3.7), 12.5);
    }

    #[test]
    fn covariance_entries_match_definitions() {
        let ar = CovarianceKind::Autoregressive {
            sigma2: 3.0,
            rho: 0.6,
        };
        let m = ar.matrix(4).unwrap();
        assert_eq!(m[0], 3.0);
        assert!((m[1] - 1.8).abs() < 1e-12);
        assert!((m[2] - 1.08).abs() < 1e-12);
        assert_eq!(m[5], 3.0);
        let eq = CovarianceKind::Equicorrelated {
            sigma2: 3.0,
            rho: 0.5,
        };
        let m = eq.matrix(3).unwrap();
        assert_eq!(m[0], 3.0);
        assert_eq!(m[1], 1.5);
        assert_eq!(m[5], 1.5);
        // The scale multiplies every entry.
        let spec = CovarianceSpec::new(eq, 2.0);
        let m2 = spec.matrix(3).unwrap();
        assert_eq!(m2[0], 6.0);
        assert_eq!(m2[1], 3.0);
    }

    #[test]
    fn study_unstructured_is_symmetric_positive_definite() {
        let kind = study_unstructured();
        let m = kind.matrix(10).unwrap();
        assert_eq!(m[0], 0.72);
        assert_eq!(m[99], 15.77);
        assert_eq!(m[3 * 10 + 5], m[5 * 10 + 3]);
        assert_eq!(m[3 * 10 + 5], 4.04);
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(m[i * 10 + j], m[j * 10 + i]);
            }
        }
        assert!(cholesky(&m, 10).is_ok());
    }

    #[test]
    fn bad_covariances_are_rejected() {
        let ar = CovarianceKind::Autoregressive {
            sigma2: 3.0,
            rho: 1.2,
        };
        assert!(ar.matrix(4).is_err());
        let wrong_dim = study_unstructured();
        assert!(wrong_dim.matrix(9).is_err());
        // Strong negative equicorrelation is not positive definite for
        // 10 time points; the sampler construction must fail.
        let bad = CovarianceSpec::new(
            CovarianceKind::Equicorrelated {
                sigma2: 3.0,
                rho: -0.9,
            },
            1.0,
        );
        let err = sim_single_qtl(&LogisticQtlSpec::default(), &bad, 10, 0.0, 1).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite));
    }

    #[test]
    fn tied_markers_get_identical_columns() {
        let map = GeneticMap::new(vec![Chromosome {
            name: "1".to_string(),
            markers: vec![
                Marker {
                    name: "a".to_string(),
                    pos: 5.0,
                },
                Marker {
                    name: "b".to_string(),
                    pos: 5.0,
                },
            ],
        }])
        .unwrap();
        let geno = sim_genotypes(&map, CrossType::F2, 300, 9).unwrap();
        for i in 0..geno.n_ind() {
            assert_eq!(geno.call(i, 0), geno.call(i, 1));
        }
    }

    #[test]
    fn stationary_genotype_frequencies() {
        let map = GeneticMap::new(vec![Chromosome {
            name: "1".to_string(),
            markers: vec![Marker {
                name: "m".to_string(),
                pos: 0.0,
            }],
        }])
        .unwrap();
        let n = 50_000;
        let ril = sim_genotypes(&map, CrossType::RilSelf, n, 11).unwrap();
        let bb = (0..n).filter(|&i| ril.call(i, 0) == GenoCall::BB).count();
        assert!((bb as f64 / n as f64 - 0.5).abs() < 0.01, "{bb}");
        let f2 = sim_genotypes(&map, CrossType::F2, n, 12).unwrap();
        let mut counts = [0usize; 3];
        for i in 0..n {
            counts[f2.call(i, 0).state_index(CrossType::F2).unwrap()] += 1;
        }
        assert!((counts[0] as f64 / n as f64 - 0.25).abs() < 0.01);
        assert!((counts[1] as f64 / n as f64 - 0.5).abs() < 0.01);
        assert!((counts[2] as f64 / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn linked_marker_recombination_rate() {
        // Discordance between RIL markers 20 cM apart estimates the
        // selfing-expanded recombination fraction 0.2479...
        let map = GeneticMap::new(vec![Chromosome {
            name: "1".to_string(),
            markers: vec![
                Marker {
                    name: "a".to_string(),
                    pos: 0.0,
                },
                Marker {
                    name: "b".to_string(),
                    pos: 20.0,
                },
            ],
        }])
        .unwrap();
        let n = 50_000;
        let geno = sim_genotypes(&map, CrossType::RilSelf, n, 13).unwrap();
        let discordant = (0..n).filter(|&i| geno.call(i, 0) != geno.call(i, 1)).count();
        assert!(
            (discordant as f64 / n as f64 - 0.24793932779195457).abs() < 0.01,
            "{discordant}"
        );
    }

    #[test]
    fn seeded_datasets_reproduce_exactly() {
        let spec = LogisticQtlSpec::default();
        let cov = CovarianceSpec::new(
            CovarianceKind::Autoregressive {
                sigma2: 3.0,
                rho: 0.6,
            },
            2.0,
        );
        let a = sim_single_qtl(&spec, &cov, 30, 1.0, 42).unwrap();
        let b = sim_single_qtl(&spec, &cov, 30, 1.0, 42).unwrap();
        assert_eq!(a, b);
        let c = sim_single_qtl(&spec, &cov, 30, 1.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_phenotypes_sit_on_genotype_curves() {
        let spec = LogisticQtlSpec::default();
        let cov = CovarianceSpec::new(
            CovarianceKind::Autoregressive {
                sigma2: 3.0,
                rho: 0.6,
            },
            0.0,
        );
        let data = sim_single_qtl(&spec, &cov, 25, 0.0, 7).unwrap();
        for i in 0..25 {
            let g = data.qtl_genotypes[i];
            for (ti, &t) in spec.times.iter().enumerate() {
                assert_eq!(data.pheno.value(i, ti), logistic_mean(&spec, g, t));
            }
        }
        // All three genotype groups should be present at n = 25.
        for g in [GenoCall::AA, GenoCall::Het, GenoCall::BB] {
            assert!(data.qtl_genotypes.contains(&g));
        }
    }

    #[test]
    fn mvn_moments_converge_to_specification() {
        let t_count = 10;
        let spec = CovarianceSpec::new(
            CovarianceKind::Autoregressive {
                sigma2: 3.0,
                rho: 0.6,
            },
            2.0,
        );
        let sigma = spec.matrix(t_count).unwrap();
        let mut sampler = MvnSampler::new(&sigma, t_count).unwrap();
        let mut rng = stream_rng(99, domain::DATASET, 0);
        let n = 100_000;
        let mut sum = vec![0.0; t_count];
        let mut cross = vec![0.0; t_count * t_count];
        let mut x = vec![0.0; t_count];
        for _ in 0..n {
            sampler.sample_into(&mut rng, &mut x);
            for i in 0..t_count {
                sum[i] += x[i];
                for j in 0..t_count {
                    cross[i * t_count + j] += x[i] * x[j];
                }
            }
        }
        let max_entry = sigma.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for i in 0..t_count {
            let mean = sum[i] / n as f64;
            assert!(mean.abs() < 0.05, "mean {mean}");
            for j in 0..t_count {
                let m_i = sum[i] / n as f64;
                let m_j = sum[j] / n as f64;
                let s = cross[i * t_count + j] / n as f64 - m_i * m_j;
                let dev = (s - sigma[i * t_count + j]).abs();
                assert!(
                    dev < 0.03 * max_entry,
                    "covariance ({i},{j}): {s} vs {}",
                    sigma[i * t_count + j]
                );
            }
        }
    }

    #[test]
    fn zero_variance_cubic_reduces_to_baseline() {
        let mut spec = CubicQtlSpec::default();
        spec.coef_cov = [[0.0; 4]; 4];
        spec.noise_sd = 0.0;
        for locus in &mut spec.loci {
            locus.effect = [0.0; 4];
        }
        let data = sim_multi_qtl_with(&spec, 20, 5).unwrap();
        let b = spec.baseline;
        for i in 0..20 {
            for (ti, &t) in spec.times.iter().enumerate() {
                let expect = b[0] + b[1] * t + b[2] * t * t + b[3] * t * t * t;
                assert!((data.pheno.value(i, ti) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cubic_effect_splits_the_homozygotes_around_the_baseline() {
        // Put the single QTL exactly on a marker so the latent genotype
        // is observable, and make its effect a pure intercept shift. The
        // B group should sit at +effect and the A group at -effect.
        let mut spec = CubicQtlSpec::default();
        spec.coef_cov = [[0.0; 4]; 4];
        spec.noise_sd = 0.0;
        spec.loci = vec![CubicLocus {
            chrom: "1".to_string(),
            pos_cm: 60.0,
            effect: [5.0, 0.0, 0.0, 0.0],
        }];
        let data = sim_multi_qtl_with(&spec, 60, 21).unwrap();
        // Marker c1m13 sits at 60 cM (5 cM spacing, 13th marker).
        let marker_idx = data
            .map
            .marker_names()
            .iter()
            .position(|n| *n == "c1m13")
            .unwrap();
        let b = spec.baseline;
        let mut seen = [false; 2];
        for i in 0..60 {
            let shift = match data.geno.call(i, marker_idx) {
                GenoCall::BB => 5.0,
                _ => -5.0,
            };
            seen[if shift > 0.0 { 1 } else { 0 }] = true;
            let t = spec.times[10];
            let expect = b[0] + shift + b[1] * t + b[2] * t * t + b[3] * t * t * t;
            assert!((data.pheno.value(i, 10) - expect).abs() < 1e-9);
        }
        assert!(seen[0] && seen[1], "both genotype groups present");
    }

    #[test]
    fn cubic_sample_mean_matches_analytic_mean() {
        // With RIL allele frequency 1/2 at each QTL and the signed
        // genotype coding, the QTL effects cancel in expectation and the
        // mean curve is the baseline cubic itself.
        let n = 50_000;
        let data = sim_multi_qtl(n, 17).unwrap();
        let ti = 120; // t = 0.5
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..n {
            let v = data.pheno.value(i, ti);
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        let analytic = -82.982125; // baseline cubic at t = 0.5
        assert!(
            (mean - analytic).abs() < 3.0 * se,
            "sample mean {mean} vs analytic {analytic} (se {se})"
        );
    }

    #[test]
    fn heritability_profile_matches_direct_formula() {
        let spec = LogisticQtlSpec::default();
        let cov = CovarianceSpec::new(
            CovarianceKind::Autoregressive {
                sigma2: 3.0,
                rho: 0.6,
            },
            1.0,
        );
        let h = heritability_profile(&spec, &cov, 0.0).unwrap();
        assert_eq!(h.per_time.len(), 10);
        assert!((h.per_time[0] - 0.11986834795692061).abs() < 1e-9);
        assert!((h.mean - 0.08784742269939624).abs() < 1e-9);
        // No genotype differences: no heritability.
        let null = heritability_profile(&spec.zero_effect(), &cov, 0.0).unwrap();
        assert!(null.per_time.iter().all(|&v| v == 0.0));
        // Larger residual scale or added noise lowers heritability.
        let h3 = heritability_profile(
            &spec,
            &CovarianceSpec::new(cov.kind.clone(), 3.0),
            0.0,
        )
        .unwrap();
        let h6 = heritability_profile(
            &spec,
            &CovarianceSpec::new(cov.kind.clone(), 6.0),
            0.0,
        )
        .unwrap();
        assert!(h.mean > h3.mean && h3.mean > h6.mean);
        let noisy = heritability_profile(&spec, &cov, 2.0).unwrap();
        assert!(noisy.mean < h.mean);
    }

    #[test]
    fn evenly_spaced_map_has_expected_layout() {
        let map = evenly_spaced_map(5, 100.0, 5.0).unwrap();
        assert_eq!(map.chromosomes().len(), 5);
        for chrom in map.chromosomes() {
            assert_eq!(chrom.markers.len(), 21);
            assert_eq!(chrom.markers[0].pos, 0.0);
            assert_eq!(chrom.markers[20].pos, 100.0);
            assert_eq!(chrom.markers[1].pos, 5.0);
        }
        assert_eq!(map.n_markers(), 105);
    }
}
