//! Single-QTL genome scans for function-valued traits.
//!
//! At every grid position the phenotype matrix is regressed on the
//! conditional genotype probabilities (Haley-Knott regression). The
//! design matrix depends only on the position, so one factorization of
//! `X'X` serves every time point — the per-position cost is linear in
//! the number of time points. Per-time LOD scores are combined across
//! the curve into SLOD (mean) and MLOD (maximum), and genome-wide
//! significance thresholds come from permutations of whole phenotype
//! rows.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genoprob::GenoProbs;
use crate::linalg::DroppingCholesky;
use crate::stream::{domain, stream_rng};
use crate::types::PhenotypeMatrix;

/// LOD value reported for numerically perfect fits (residual sum of
/// squares indistinguishable from zero).
pub const LOD_CAP: f64 = 300.0;

/// Residual sums of squares at or below this are treated as zero.
pub(crate) const RSS_ZERO_TOL: f64 = 1e-12;

/// Whole-curve scan statistic: mean or maximum of per-time LOD scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    Slod,
    Mlod,
}

impl StatKind {
    /// Combine per-time LOD values (signed or not; magnitudes are used).
    pub(crate) fn aggregate(self, lods: &[f64]) -> f64 {
        match self {
            StatKind::Slod => lods.iter().map(|v| v.abs()).sum::<f64>() / lods.len() as f64,
            StatKind::Mlod => lods.iter().map(|v| v.abs()).fold(0.0, f64::max),
        }
    }
}

impl std::fmt::Display for StatKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StatKind::Slod => write!(f, "slod"),
            StatKind::Mlod => write!(f, "mlod"),
        }
    }
}

impl std::str::FromStr for StatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<StatKind> {
        match s.to_ascii_lowercase().as_str() {
            "slod" => Ok(StatKind::Slod),
            "mlod" => Ok(StatKind::Mlod),
            other => Err(Error::invalid(format!(
                "unknown statistic {other:?}; expected `slod` or `mlod`"
            ))),
        }
    }
}

/// Signed per-time LOD surface for one chromosome: `positions x times`,
/// position-major. The sign carries the direction of the additive
/// (BB-minus-AA) effect; magnitudes are the LOD scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromLodBlock {
    name: String,
    positions: Vec<f64>,
    values: Vec<f64>,
}

impl ChromLodBlock {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Signed LOD values for one position, across all time points.
    pub fn row(&self, p: usize) -> &[f64] {
        let t_count = self.values.len() / self.positions.len();
        &self.values[p * t_count..(p + 1) * t_count]
    }
}

/// Signed per-time LOD surface across the genome.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedLodMatrix {
    times: Vec<f64>,
    chromosomes: Vec<ChromLodBlock>,
}

impl SignedLodMatrix {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn chromosomes(&self) -> &[ChromLodBlock] {
        &self.chromosomes
    }

    /// Signed LOD at (chromosome, position index, time index).
    pub fn value(&self, chrom: usize, p: usize, t: usize) -> f64 {
        self.chromosomes[chrom].row(p)[t]
    }
}

/// A per-position curve (SLOD or MLOD) over one chromosome's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromCurve {
    name: String,
    positions: Vec<f64>,
    values: Vec<f64>,
}

impl ChromCurve {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A per-position curve across the genome.
#[derive(Debug, Clone, PartialEq)]
pub struct GenomeCurve {
    chromosomes: Vec<ChromCurve>,
}

impl GenomeCurve {
    pub fn chromosomes(&self) -> &[ChromCurve] {
        &self.chromosomes
    }

    /// Genome-wide maximum: (chromosome index, position index, value).
    /// Ties keep the first position in genome order.
    pub fn genome_max(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (ci, chrom) in self.chromosomes.iter().enumerate() {
            for (p, &v) in chrom.values.iter().enumerate() {
                if best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((ci, p, v));
                }
            }
        }
        best
    }

    /// The maximum value alone, 0 for an empty curve.
    pub fn max_value(&self) -> f64 {
        self.genome_max().map_or(0.0, |(_, _, v)| v)
    }
}

/// SLOD and MLOD curves over the scan grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSummary {
    pub slod: GenomeCurve,
    pub mlod: GenomeCurve,
}

impl ScanSummary {
    pub fn from_lods(lods: &SignedLodMatrix) -> ScanSummary {
        ScanSummary {
            slod: slod(lods),
            mlod: mlod(lods),
        }
    }
}

/// Genome-wide maxima from permuted phenotypes and the thresholds
/// derived from them.
#[derive(Debug, Clone)]
pub struct PermutationResult {
    stat: StatKind,
    maxima: Vec<f64>,
    alphas: Vec<f64>,
    thresholds: Vec<f64>,
    seed: u64,
}

impl PermutationResult {
    pub fn stat(&self) -> StatKind {
        self.stat
    }

    /// Genome-wide maxima, ordered by permutation index.
    pub fn maxima(&self) -> &[f64] {
        &self.maxima
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Thresholds aligned with [`Self::alphas`].
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Per-time LOD from the null and fitted residual sums of squares.
pub(crate) fn lod_from_rss(n: usize, rss0: f64, rss1: f64) -> f64 {
    if rss0 <= RSS_ZERO_TOL {
        return 0.0; // constant phenotype: nothing to detect
    }
    if rss1 <= RSS_ZERO_TOL {
        return LOD_CAP; // numerically perfect fit
    }
    let lod = 0.5 * n as f64 * (rss0 / rss1).log10();
    lod.clamp(0.0, LOD_CAP)
}

/// Scratch buffers for per-position solves.
pub(crate) struct Workspace {
    pub rhs: Vec<f64>,
    pub work: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Workspace {
    pub fn new(k: usize) -> Workspace {
        Workspace {
            rhs: vec![0.0; k],
            work: vec![0.0; k],
            beta: vec![0.0; k],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Precomputed regression state shared by scans, permutations, and
/// model evaluation: centered phenotypes, null residuals, and centered
/// genotype-probability design columns with their per-position gram
/// factorizations.
pub(crate) struct ScanData {
    pub n: usize,
    pub t_count: usize,
    pub times: Vec<f64>,
    /// Centered phenotypes, time-major: `yc[t * n + i]`.
    pub yc: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub rss0: Vec<f64>,
    /// Design columns contributed per locus (1 RIL, 2 F2).
    pub cpl: usize,
    pub chrom_names: Vec<String>,
    pub chrom_positions: Vec<Vec<f64>>,
    /// Global position index of each chromosome's first grid position.
    pub chrom_offsets: Vec<usize>,
    pub n_positions: usize,
    /// Centered design columns: `cols[(g * cpl + c) * n ..][..n]`.
    cols: Vec<f64>,
    pub col_means: Vec<f64>,
    factors: Vec<DroppingCholesky>,
}

impl ScanData {
    pub fn new(probs: &GenoProbs, pheno: &PhenotypeMatrix) -> Result<ScanData> {
        if probs.ids() != pheno.ids() {
            return Err(Error::invalid(
                "genotype probabilities and phenotypes cover different individuals (or a different order)",
            ));
        }
        if !pheno.is_complete() {
            return Err(Error::invalid(
                "phenotype matrix has missing cells; interpolate or drop them before scanning",
            ));
        }
        let n = pheno.n_ind();
        let t_count = pheno.n_times();
        let mut yc = vec![0.0; t_count * n];
        let mut y_mean = vec![0.0; t_count];
        let mut rss0 = vec![0.0; t_count];
        for t in 0..t_count {
            let mut sum = 0.0;
            for i in 0..n {
                sum += pheno.value(i, t);
            }
            let mean = if n > 0 { sum / n as f64 } else { 0.0 };
            y_mean[t] = mean;
            let mut ss = 0.0;
            for i in 0..n {
                let c = pheno.value(i, t) - mean;
                yc[t * n + i] = c;
                ss += c * c;
            }
            rss0[t] = ss;
        }

        let cpl = probs.cross().n_design_cols();
        let mut chrom_names = Vec::new();
        let mut chrom_positions = Vec::new();
        let mut chrom_offsets = Vec::new();
        let mut n_positions = 0usize;
        for chrom in probs.chromosomes() {
            chrom_names.push(chrom.name().to_string());
            chrom_positions.push(chrom.positions().to_vec());
            chrom_offsets.push(n_positions);
            n_positions += chrom.n_positions();
        }

        let mut cols = vec![0.0; n_positions * cpl * n];
        let mut col_means = vec![0.0; n_positions * cpl];
        let mut grams = vec![0.0; n_positions * cpl * cpl];
        for (ci, chrom) in probs.chromosomes().iter().enumerate() {
            for p in 0..chrom.n_positions() {
                let g = chrom_offsets[ci] + p;
                for c in 0..cpl {
                    let base = (g * cpl + c) * n;
                    let mut sum = 0.0;
                    for i in 0..n {
                        let row = chrom.row(i, p);
                        let raw = match (cpl, c) {
                            // RIL additive score: Pr(BB).
                            (1, 0) => row[1],
                            // F2 additive score: Pr(BB) - Pr(AA).
                            (2, 0) => row[2] - row[0],
                            // F2 dominance score: Pr(AB).
                            (2, 1) => row[1],
                            _ => unreachable!(),
                        };
                        cols[base + i] = raw;
                        sum += raw;
                    }
                    let mean = if n > 0 { sum / n as f64 } else { 0.0 };
                    col_means[g * cpl + c] = mean;
                    for i in 0..n {
                        cols[base + i] -= mean;
                    }
                }
                for a in 0..cpl {
                    for b in a..cpl {
                        let d = dot(
                            &cols[(g * cpl + a) * n..(g * cpl + a + 1) * n],
                            &cols[(g * cpl + b) * n..(g * cpl + b + 1) * n],
                        );
                        grams[g * cpl * cpl + a * cpl + b] = d;
                        grams[g * cpl * cpl + b * cpl + a] = d;
                    }
                }
            }
        }
        let factors = (0..n_positions)
            .map(|g| DroppingCholesky::factor(&grams[g * cpl * cpl..(g + 1) * cpl * cpl], cpl))
            .collect();

        Ok(ScanData {
            n,
            t_count,
            times: pheno.times().to_vec(),
            yc,
            y_mean,
            rss0,
            cpl,
            chrom_names,
            chrom_positions,
            chrom_offsets,
            n_positions,
            cols,
            col_means,
            factors,
        })
    }

    /// Centered design column `c` at global position `g`.
    pub fn col(&self, g: usize, c: usize) -> &[f64] {
        &self.cols[(g * self.cpl + c) * self.n..(g * self.cpl + c + 1) * self.n]
    }

    /// Signed per-time LOD values at one global position against the
    /// (possibly permuted) centered phenotypes in `yc`.
    fn signed_lods_at(&self, g: usize, yc: &[f64], ws: &mut Workspace, out: &mut Vec<f64>) {
        out.clear();
        let factor = &self.factors[g];
        for t in 0..self.t_count {
            let yct = &yc[t * self.n..(t + 1) * self.n];
            for c in 0..self.cpl {
                ws.rhs[c] = dot(self.col(g, c), yct);
            }
            let red = factor.solve(&ws.rhs, &mut ws.work, &mut ws.beta);
            let rss0 = self.rss0[t];
            let rss1 = (rss0 - red).max(0.0);
            let lod = lod_from_rss(self.n, rss0, rss1);
            out.push(if lod == 0.0 {
                0.0
            } else if ws.beta[0] < 0.0 {
                -lod
            } else {
                lod
            });
        }
    }

    /// Genome-wide maxima of (SLOD, MLOD) against the centered
    /// phenotypes in `yc`. Used by the permutation loop, which only
    /// needs the maxima.
    pub fn stat_maxima(&self, yc: &[f64], ws: &mut Workspace) -> (f64, f64) {
        let mut slod_max = 0.0f64;
        let mut mlod_max = 0.0f64;
        for g in 0..self.n_positions {
            let factor = &self.factors[g];
            let mut sum = 0.0;
            let mut mx = 0.0f64;
            for t in 0..self.t_count {
                let yct = &yc[t * self.n..(t + 1) * self.n];
                for c in 0..self.cpl {
                    ws.rhs[c] = dot(self.col(g, c), yct);
                }
                let red = factor.reduction(&ws.rhs, &mut ws.work);
                let rss0 = self.rss0[t];
                let rss1 = (rss0 - red).max(0.0);
                let lod = lod_from_rss(self.n, rss0, rss1);
                sum += lod;
                mx = mx.max(lod);
            }
            slod_max = slod_max.max(sum / self.t_count as f64);
            mlod_max = mlod_max.max(mx);
        }
        (slod_max, mlod_max)
    }
}

/// Run the genome scan: signed per-time LOD scores at every grid
/// position.
pub fn scan_hk(probs: &GenoProbs, pheno: &PhenotypeMatrix) -> Result<SignedLodMatrix> {
    let data = ScanData::new(probs, pheno)?;
    scan_with_data(&data)
}

pub(crate) fn scan_with_data(data: &ScanData) -> Result<SignedLodMatrix> {
    let chromosomes = data
        .chrom_names
        .iter()
        .enumerate()
        .map(|(ci, name)| {
            let positions = data.chrom_positions[ci].clone();
            let rows: Vec<Vec<f64>> = (0..positions.len())
                .into_par_iter()
                .map_init(
                    || (Workspace::new(data.cpl), Vec::new()),
                    |(ws, buf), p| {
                        let g = data.chrom_offsets[ci] + p;
                        data.signed_lods_at(g, &data.yc, ws, buf);
                        buf.clone()
                    },
                )
                .collect();
            ChromLodBlock {
                name: name.clone(),
                positions,
                values: rows.concat(),
            }
        })
        .collect();
    Ok(SignedLodMatrix {
        times: data.times.clone(),
        chromosomes,
    })
}

/// SLOD curve: per-position mean of |LOD| across time points.
pub fn slod(lods: &SignedLodMatrix) -> GenomeCurve {
    aggregate_curve(lods, StatKind::Slod)
}

/// MLOD curve: per-position maximum of |LOD| across time points.
pub fn mlod(lods: &SignedLodMatrix) -> GenomeCurve {
    aggregate_curve(lods, StatKind::Mlod)
}

fn aggregate_curve(lods: &SignedLodMatrix, stat: StatKind) -> GenomeCurve {
    let chromosomes = lods
        .chromosomes
        .iter()
        .map(|block| ChromCurve {
            name: block.name.clone(),
            positions: block.positions.clone(),
            values: (0..block.positions.len())
                .map(|p| stat.aggregate(block.row(p)))
                .collect(),
        })
        .collect();
    GenomeCurve { chromosomes }
}

/// Empirical threshold index for level `alpha`: the 1-based
/// `ceil((1 - alpha) * n)` order statistic, clamped to `[1, n]`.
fn quantile_index(alpha: f64, n: usize) -> usize {
    // The small slack keeps exact multiples (e.g. 0.95 * 1000) from
    // rounding up an extra rank through floating-point noise.
    let raw = ((1.0 - alpha) * n as f64 - 1e-9).ceil().max(1.0) as usize;
    raw.min(n)
}

/// Permutation test: shuffle whole phenotype rows against fixed
/// genotypes `n_perm` times and record the genome-wide maximum of the
/// chosen statistic. Thresholds are empirical `1 - alpha` quantiles of
/// the maxima. Permutation `i` draws from an RNG stream derived from
/// `(seed, i)`, so results do not depend on thread count.
pub fn permutation_threshold(
    probs: &GenoProbs,
    pheno: &PhenotypeMatrix,
    stat: StatKind,
    n_perm: usize,
    alphas: &[f64],
    seed: u64,
) -> Result<PermutationResult> {
    if n_perm == 0 {
        return Err(Error::invalid("n_perm must be at least 1"));
    }
    for &alpha in alphas {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
    }
    let data = ScanData::new(probs, pheno)?;
    let both = permutation_maxima(&data, n_perm, seed);
    let maxima: Vec<f64> = both
        .into_iter()
        .map(|(s, m)| match stat {
            StatKind::Slod => s,
            StatKind::Mlod => m,
        })
        .collect();
    let thresholds = thresholds_from_maxima(&maxima, alphas);
    Ok(PermutationResult {
        stat,
        maxima,
        alphas: alphas.to_vec(),
        thresholds,
        seed,
    })
}

/// Genome-wide (SLOD, MLOD) maxima for each of `n_perm` seeded
/// permutations, ordered by permutation index.
pub(crate) fn permutation_maxima(data: &ScanData, n_perm: usize, seed: u64) -> Vec<(f64, f64)> {
    (0..n_perm)
        .into_par_iter()
        .map_init(
            || {
                (
                    Workspace::new(data.cpl),
                    vec![0.0; data.t_count * data.n],
                    (0..data.n).collect::<Vec<usize>>(),
                )
            },
            |(ws, ycp, perm), i| {
                let mut rng = stream_rng(seed, domain::PERMUTATION, i as u64);
                for (k, v) in perm.iter_mut().enumerate() {
                    *v = k;
                }
                perm.shuffle(&mut rng);
                for t in 0..data.t_count {
                    let src = &data.yc[t * data.n..(t + 1) * data.n];
                    let dst = &mut ycp[t * data.n..(t + 1) * data.n];
                    for (j, &pj) in perm.iter().enumerate() {
                        dst[j] = src[pj];
                    }
                }
                data.stat_maxima(ycp, ws)
            },
        )
        .collect()
}

/// Empirical `1 - alpha` quantiles of a maxima vector.
pub(crate) fn thresholds_from_maxima(maxima: &[f64], alphas: &[f64]) -> Vec<f64> {
    let mut sorted = maxima.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    alphas
        .iter()
        .map(|&alpha| sorted[quantile_index(alpha, sorted.len()) - 1])
        .collect()
}
