//! Multiple-QTL model selection for function-valued traits.
//!
//! A model is a set of grid loci fitted jointly: the design holds one
//! additive column per locus (plus a dominance column for F2). Model
//! quality is the whole-curve statistic (SLOD or MLOD) of per-time LOD
//! scores against the intercept-only null, and models of different
//! sizes are compared on the penalized criterion
//! `pLOD = model_lod - penalty * n_loci`, with the penalty taken from a
//! single-QTL permutation threshold. The search is plain forward
//! selection to a size cap followed by backward elimination, keeping
//! the best pLOD over everything visited.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genoprob::GenoProbs;
use crate::linalg::DroppingCholesky;
use crate::scan::{lod_from_rss, ScanData, StatKind};
use crate::types::PhenotypeMatrix;

/// Matching tolerance when resolving a named position to the grid.
const GRID_MATCH_TOL: f64 = 1e-6;

/// pLOD differences at or below this are ties (resolved toward fewer
/// QTL, then toward the model visited first).
const PLOD_TIE_TOL: f64 = 1e-9;

/// One model locus: chromosome name and grid position in cM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QtlLocus {
    #[serde(rename = "chr")]
    pub chrom: String,
    pub pos: f64,
}

impl std::fmt::Display for QtlLocus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "chr{}@{}", self.chrom, self.pos)
    }
}

/// A fitted multiple-QTL model and its criterion value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QtlModel {
    pub stat: StatKind,
    pub penalty: f64,
    pub loci: Vec<QtlLocus>,
    pub model_lod: f64,
    pub plod: f64,
}

/// Knobs for the stepwise search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepwiseOptions {
    /// Forward selection stops after this many loci.
    pub max_qtl: usize,
    /// Candidates closer than this (cM) to a model locus on the same
    /// chromosome are skipped during forward selection.
    pub min_spacing_cm: f64,
}

impl Default for StepwiseOptions {
    fn default() -> StepwiseOptions {
        StepwiseOptions {
            max_qtl: 10,
            min_spacing_cm: 5.0,
        }
    }
}

/// Profile curve for one model QTL over its chromosome's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEntry {
    /// The QTL whose position is being varied (at its fitted position).
    pub locus: QtlLocus,
    pub positions: Vec<f64>,
    pub values: Vec<f64>,
}

/// Profile curves for every QTL in a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileCurves {
    entries: Vec<ProfileEntry>,
}

impl ProfileCurves {
    pub fn entries(&self) -> &[ProfileEntry] {
        &self.entries
    }
}

/// Per-locus fitted effect curves.
#[derive(Debug, Clone, PartialEq)]
pub struct LocusEffects {
    pub locus: QtlLocus,
    /// BB-minus-AA additive effect at each time point.
    pub additive: Vec<f64>,
    /// Heterozygote (dominance) effect at each time point; F2 only.
    pub dominance: Option<Vec<f64>>,
}

/// Fitted baseline and effect curves for a model.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectCurves {
    times: Vec<f64>,
    mu: Vec<f64>,
    lod: Vec<f64>,
    loci: Vec<LocusEffects>,
}

impl EffectCurves {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Baseline curve: the fitted intercept at each time point.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Per-time LOD of the full model against the intercept-only null.
    pub fn lod(&self) -> &[f64] {
        &self.lod
    }

    pub fn loci(&self) -> &[LocusEffects] {
        &self.loci
    }
}

/// Penalized LOD criterion: `model_lod - penalty * k`.
pub fn plod(model_lod_value: f64, k: usize, penalty: f64) -> f64 {
    model_lod_value - penalty * k as f64
}

/// A locus resolved to grid indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct GridLocus {
    pub chrom: usize,
    pub p: usize,
}

/// Scratch space for model evaluations.
struct ModelWorkspace {
    gram: Vec<f64>,
    rhs: Vec<f64>,
    work: Vec<f64>,
    beta: Vec<f64>,
    rss: Vec<f64>,
    lods: Vec<f64>,
}

impl ModelWorkspace {
    fn new() -> ModelWorkspace {
        ModelWorkspace {
            gram: Vec::new(),
            rhs: Vec::new(),
            work: Vec::new(),
            beta: Vec::new(),
            rss: Vec::new(),
            lods: Vec::new(),
        }
    }
}

/// Precomputed state for evaluating arbitrary multi-locus models: the
/// scan engine's centered design plus the cross-products of every
/// design column with every centered phenotype column.
pub(crate) struct ModelContext {
    pub data: ScanData,
    /// `py[(g * cpl + c) * t_count + t]` = column (g, c) · centered y_t.
    py: Vec<f64>,
}

impl ModelContext {
    pub fn new(probs: &GenoProbs, pheno: &PhenotypeMatrix) -> Result<ModelContext> {
        let data = ScanData::new(probs, pheno)?;
        let n = data.n;
        let t_count = data.t_count;
        let cpl = data.cpl;
        let py: Vec<f64> = (0..data.n_positions * cpl)
            .into_par_iter()
            .flat_map_iter(|gc| {
                let g = gc / cpl;
                let c = gc % cpl;
                let col = data.col(g, c);
                (0..t_count)
                    .map(|t| {
                        let yct = &data.yc[t * n..(t + 1) * n];
                        col.iter().zip(yct).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect::<Vec<f64>>()
            })
            .collect();
        Ok(ModelContext { data, py })
    }

    /// Global position index of a grid locus.
    fn global(&self, locus: GridLocus) -> usize {
        self.data.chrom_offsets[locus.chrom] + locus.p
    }

    /// Position in cM of a grid locus.
    pub fn pos_cm(&self, locus: GridLocus) -> f64 {
        self.data.chrom_positions[locus.chrom][locus.p]
    }

    /// Resolve named loci to grid indices (nearest position within
    /// 1e-6 cM), rejecting duplicates.
    pub fn resolve(&self, loci: &[QtlLocus]) -> Result<Vec<GridLocus>> {
        let mut out = Vec::with_capacity(loci.len());
        for locus in loci {
            let Some(chrom) = self
                .data
                .chrom_names
                .iter()
                .position(|n| *n == locus.chrom)
            else {
                return Err(Error::invalid(format!(
                    "unknown chromosome {:?} in locus {locus}",
                    locus.chrom
                )));
            };
            let positions = &self.data.chrom_positions[chrom];
            let p = positions
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da = (**a - locus.pos).abs();
                    let db = (**b - locus.pos).abs();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(i, _)| i)
                .unwrap();
            if (positions[p] - locus.pos).abs() > GRID_MATCH_TOL {
                return Err(Error::invalid(format!(
                    "locus {locus} is not on the evaluation grid (nearest grid position: {})",
                    positions[p]
                )));
            }
            let resolved = GridLocus { chrom, p };
            if out.contains(&resolved) {
                return Err(Error::invalid(format!("duplicate locus {locus}")));
            }
            out.push(resolved);
        }
        Ok(out)
    }

    /// Turn grid loci back into named loci.
    fn named(&self, loci: &[GridLocus]) -> Vec<QtlLocus> {
        loci.iter()
            .map(|&l| QtlLocus {
                chrom: self.data.chrom_names[l.chrom].clone(),
                pos: self.pos_cm(l),
            })
            .collect()
    }

    /// Residual sum of squares per time point for a joint fit of the
    /// given loci (empty = intercept-only null). Writes into `ws.rss`.
    fn rss_per_time(&self, loci: &[GridLocus], ws: &mut ModelWorkspace) {
        let t_count = self.data.t_count;
        ws.rss.clear();
        if loci.is_empty() {
            ws.rss.extend_from_slice(&self.data.rss0);
            return;
        }
        let cpl = self.data.cpl;
        let k = loci.len() * cpl;
        ws.gram.resize(k * k, 0.0);
        ws.rhs.resize(k, 0.0);
        ws.work.resize(k, 0.0);
        let col_of = |j: usize| {
            let g = self.global(loci[j / cpl]);
            (g, j % cpl)
        };
        for a in 0..k {
            let (ga, ca) = col_of(a);
            let col_a = self.data.col(ga, ca);
            for b in a..k {
                let (gb, cb) = col_of(b);
                let col_b = self.data.col(gb, cb);
                let d: f64 = col_a.iter().zip(col_b).map(|(x, y)| x * y).sum();
                ws.gram[a * k + b] = d;
                ws.gram[b * k + a] = d;
            }
        }
        let factor = DroppingCholesky::factor(&ws.gram, k);
        for t in 0..t_count {
            for j in 0..k {
                let (g, c) = col_of(j);
                ws.rhs[j] = self.py[(g * cpl + c) * t_count + t];
            }
            let red = factor.reduction(&ws.rhs, &mut ws.work);
            ws.rss.push((self.data.rss0[t] - red).max(0.0));
        }
    }

    /// Per-time LOD of `fitted` against `base` residuals, then the
    /// whole-curve statistic.
    fn stat_vs(&self, base: &[f64], fitted: &[f64], stat: StatKind, ws: &mut ModelWorkspace) -> f64 {
        ws.lods.clear();
        for (&b, &f) in base.iter().zip(fitted) {
            ws.lods.push(lod_from_rss(self.data.n, b, f));
        }
        stat.aggregate(&ws.lods)
    }

    /// Whole-curve statistic of a model against the intercept-only null.
    fn model_stat(&self, loci: &[GridLocus], stat: StatKind, ws: &mut ModelWorkspace) -> f64 {
        self.rss_per_time(loci, ws);
        let rss = std::mem::take(&mut ws.rss);
        let value = self.stat_vs(&self.data.rss0.clone(), &rss, stat, ws);
        ws.rss = rss;
        value
    }
}

/// Whole-curve LOD statistic (SLOD or MLOD) of a joint multi-locus fit
/// against the intercept-only null.
pub fn model_lod(
    probs: &GenoProbs,
    pheno: &PhenotypeMatrix,
    loci: &[QtlLocus],
    stat: StatKind,
) -> Result<f64> {
    let ctx = ModelContext::new(probs, pheno)?;
    let resolved = ctx.resolve(loci)?;
    let mut ws = ModelWorkspace::new();
    Ok(ctx.model_stat(&resolved, stat, &mut ws))
}

/// Forward/backward stepwise search over grid loci, maximizing the
/// penalized criterion across every model visited in either phase.
pub fn stepwise_search(
    probs: &GenoProbs,
    pheno: &PhenotypeMatrix,
    stat: StatKind,
    penalty: f64,
    options: &StepwiseOptions,
) -> Result<QtlModel> {
    let ctx = ModelContext::new(probs, pheno)?;
    stepwise_with_context(&ctx, stat, penalty, options)
}

pub(crate) fn stepwise_with_context(
    ctx: &ModelContext,
    stat: StatKind,
    penalty: f64,
    options: &StepwiseOptions,
) -> Result<QtlModel> {
    if !(penalty > 0.0) || !penalty.is_finite() {
        return Err(Error::invalid(format!(
            "penalty must be a positive finite value, got {penalty}"
        )));
    }
    if options.max_qtl == 0 {
        return Err(Error::invalid("max_qtl must be at least 1"));
    }
    if !(options.min_spacing_cm >= 0.0) {
        return Err(Error::invalid("min_spacing_cm must be non-negative"));
    }

    // Every model visited in either phase, with its statistic.
    let mut visited: Vec<(Vec<GridLocus>, f64)> = vec![(Vec::new(), 0.0)];
    let mut current: Vec<GridLocus> = Vec::new();

    // Forward selection.
    while current.len() < options.max_qtl
        && (current.len() + 1) * ctx.data.cpl + 1 <= ctx.data.n
    {
        let candidates: Vec<GridLocus> = (0..ctx.data.chrom_names.len())
            .flat_map(|chrom| {
                (0..ctx.data.chrom_positions[chrom].len()).map(move |p| GridLocus { chrom, p })
            })
            .filter(|cand| {
                !current.iter().any(|have| {
                    have.chrom == cand.chrom
                        && (ctx.pos_cm(*have) - ctx.pos_cm(*cand)).abs()
                            < options.min_spacing_cm
                })
            })
            .collect();
        if candidates.is_empty() {
            break;
        }
        let values: Vec<f64> = candidates
            .par_iter()
            .map_init(ModelWorkspace::new, |ws, cand| {
                let mut loci = current.clone();
                loci.push(*cand);
                ctx.model_stat(&loci, stat, ws)
            })
            .collect();
        let mut best = 0;
        for (i, &v) in values.iter().enumerate() {
            if v > values[best] {
                best = i;
            }
        }
        current.push(candidates[best]);
        visited.push((current.clone(), values[best]));
    }

    // Backward elimination from the final forward model.
    let mut working = current;
    while working.len() > 1 {
        let values: Vec<f64> = (0..working.len())
            .into_par_iter()
            .map_init(ModelWorkspace::new, |ws, drop| {
                let mut loci = working.clone();
                loci.remove(drop);
                ctx.model_stat(&loci, stat, ws)
            })
            .collect();
        let mut best = 0;
        for (i, &v) in values.iter().enumerate() {
            if v > values[best] {
                best = i;
            }
        }
        working.remove(best);
        visited.push((working.clone(), values[best]));
    }
    // Dropping the last locus reaches the null model, already visited.

    // Pick the best pLOD; ties prefer fewer QTL, then first visited.
    let mut best: Option<(usize, f64)> = None;
    for (i, (loci, value)) in visited.iter().enumerate() {
        let p = plod(*value, loci.len(), penalty);
        match best {
            None => best = Some((i, p)),
            Some((bi, bp)) => {
                let smaller = loci.len() < visited[bi].0.len();
                if p > bp + PLOD_TIE_TOL || ((p - bp).abs() <= PLOD_TIE_TOL && smaller) {
                    best = Some((i, p));
                }
            }
        }
    }
    let (bi, bp) = best.unwrap();
    let (loci, value) = &visited[bi];
    Ok(QtlModel {
        stat,
        penalty,
        loci: ctx.named(loci),
        model_lod: *value,
        plod: bp,
    })
}

/// Profile curves: vary one QTL at a time over its chromosome's grid,
/// others fixed at their fitted positions, comparing each candidate fit
/// against the model with that QTL dropped.
pub fn profile(
    probs: &GenoProbs,
    pheno: &PhenotypeMatrix,
    model: &QtlModel,
    stat: StatKind,
) -> Result<ProfileCurves> {
    if model.loci.is_empty() {
        return Err(Error::invalid("cannot profile an empty model"));
    }
    let ctx = ModelContext::new(probs, pheno)?;
    let resolved = ctx.resolve(&model.loci)?;
    let mut entries = Vec::with_capacity(resolved.len());
    let mut ws = ModelWorkspace::new();
    for (j, &locus) in resolved.iter().enumerate() {
        let others: Vec<GridLocus> = resolved
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, l)| *l)
            .collect();
        ctx.rss_per_time(&others, &mut ws);
        let base = ws.rss.clone();
        let positions = ctx.data.chrom_positions[locus.chrom].clone();
        let values: Vec<f64> = (0..positions.len())
            .into_par_iter()
            .map_init(ModelWorkspace::new, |pws, p| {
                let mut loci = others.clone();
                loci.push(GridLocus {
                    chrom: locus.chrom,
                    p,
                });
                ctx.rss_per_time(&loci, pws);
                let rss = std::mem::take(&mut pws.rss);
                let v = ctx.stat_vs(&base, &rss, stat, pws);
                pws.rss = rss;
                v
            })
            .collect();
        entries.push(ProfileEntry {
            locus: model.loci[j].clone(),
            positions,
            values,
        });
    }
    Ok(ProfileCurves { entries })
}

/// Fit the full model once per time point and report the baseline
/// curve, per-locus effect curves, and the per-time full-model LOD.
pub fn fit_effects(
    probs: &GenoProbs,
    pheno: &PhenotypeMatrix,
    model: &QtlModel,
) -> Result<EffectCurves> {
    let ctx = ModelContext::new(probs, pheno)?;
    let resolved = ctx.resolve(&model.loci)?;
    let data = &ctx.data;
    let cpl = data.cpl;
    let t_count = data.t_count;
    let k = resolved.len() * cpl;

    let mut ws = ModelWorkspace::new();
    ws.gram.resize(k * k, 0.0);
    ws.rhs.resize(k, 0.0);
    ws.work.resize(k, 0.0);
    ws.beta.resize(k, 0.0);
    let col_of = |j: usize| {
        let g = data.chrom_offsets[resolved[j / cpl].chrom] + resolved[j / cpl].p;
        (g, j % cpl)
    };
    for a in 0..k {
        let (ga, ca) = col_of(a);
        for b in a..k {
            let (gb, cb) = col_of(b);
            let d: f64 = data
                .col(ga, ca)
                .iter()
                .zip(data.col(gb, cb))
                .map(|(x, y)| x * y)
                .sum();
            ws.gram[a * k + b] = d;
            ws.gram[b * k + a] = d;
        }
    }
    let factor = DroppingCholesky::factor(&ws.gram, k);

    let mut mu = Vec::with_capacity(t_count);
    let mut lod = Vec::with_capacity(t_count);
    let mut additive = vec![Vec::with_capacity(t_count); resolved.len()];
    let mut dominance = vec![Vec::with_capacity(t_count); resolved.len()];
    for t in 0..t_count {
        for j in 0..k {
            let (g, c) = col_of(j);
            ws.rhs[j] = data.col(g, c).iter().zip(&data.yc[t * data.n..]).map(|(x, y)| x * y).sum();
        }
        let red = factor.solve(&ws.rhs, &mut ws.work, &mut ws.beta);
        let rss1 = (data.rss0[t] - red).max(0.0);
        lod.push(lod_from_rss(data.n, data.rss0[t], rss1));
        // Uncenter the intercept: mu = mean(y_t) - sum_j beta_j mean(x_j).
        let mut m = data.y_mean[t];
        for j in 0..k {
            let (g, c) = col_of(j);
            m -= ws.beta[j] * data.col_means[g * cpl + c];
        }
        mu.push(m);
        for (q, curves) in additive.iter_mut().enumerate() {
            curves.push(ws.beta[q * cpl]);
        }
        if cpl == 2 {
            for (q, curves) in dominance.iter_mut().enumerate() {
                curves.push(ws.beta[q * cpl + 1]);
            }
        }
    }

    let loci = model
        .loci
        .iter()
        .cloned()
        .zip(additive)
        .zip(dominance)
        .map(|((locus, add), dom)| LocusEffects {
            locus,
            additive: add,
            dominance: if cpl == 2 { Some(dom) } else { None },
        })
        .collect();
    Ok(EffectCurves {
        times: data.times.clone(),
        mu,
        lod,
        loci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genoprob::calc_genoprob;
    use crate::scan::{mlod, scan_hk, slod};
    use crate::types::{
        Chromosome, CrossType, GenoCall, GeneticMap, GenotypeMatrix, GridSpec, Marker,
    };

    /// Two-chromosome RIL toy with fully typed markers and seeded calls.
    fn two_chrom_dataset(
        mut y_of: impl FnMut(&[GenoCall]) -> Vec<f64>,
        times: &[f64],
    ) -> (GenoProbs, PhenotypeMatrix) {
        let map = GeneticMap::new(vec![
            Chromosome {
                name: "1".to_string(),
                markers: vec![
                    Marker {
                        name: "c1m1".to_string(),
                        pos: 0.0,
                    },
                    Marker {
                        name: "c1m2".to_string(),
                        pos: 20.0,
                    },
                ],
            },
            Chromosome {
                name: "2".to_string(),
                markers: vec![
                    Marker {
                        name: "c2m1".to_string(),
                        pos: 0.0,
                    },
                    Marker {
                        name: "c2m2".to_string(),
                        pos: 20.0,
                    },
                ],
            },
        ])
        .unwrap();
        // 12 individuals with varied two-locus genotype combinations
        // (marker pairs on each chromosome are equal: no recombinants).
        let a = GenoCall::AA;
        let b = GenoCall::BB;
        let combos = [
            (a, a),
            (a, b),
            (b, a),
            (b, b),
            (a, a),
            (b, b),
            (a, b),
            (b, a),
            (a, a),
            (b, b),
            (b, a),
            (a, b),
        ];
        let ids: Vec<String> = (0..combos.len()).map(|i| format!("i{i}")).collect();
        let calls: Vec<GenoCall> = combos
            .iter()
            .flat_map(|&(g1, g2)| vec![g1, g1, g2, g2])
            .collect();
        let geno = GenotypeMatrix::new(ids.clone(), 4, calls, CrossType::RilSelf).unwrap();
        let grid = GridSpec::new(10.0).unwrap();
        let probs = calc_genoprob(&geno, &map, CrossType::RilSelf, &grid, 0.0).unwrap();
        let values: Vec<f64> = combos
            .iter()
            .flat_map(|&(g1, g2)| y_of(&[g1, g2]))
            .collect();
        let pheno = PhenotypeMatrix::new(ids, times.to_vec(), values).unwrap();
        (probs, pheno)
    }

    fn q(g: GenoCall) -> f64 {
        if g == GenoCall::BB {
            1.0
        } else {
            0.0
        }
    }

    #[test]
    fn plod_arithmetic() {
        assert_eq!(plod(0.0, 0, 3.2), 0.0);
        assert!((plod(5.0, 2, 1.85) - 1.30).abs() < 1e-12);
        // Strictly decreasing in k at fixed model_lod.
        assert!(plod(5.0, 1, 1.85) > plod(5.0, 2, 1.85));
        // model_lod equal to the penalty with one locus ties the null.
        assert!((plod(1.85, 1, 1.85) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn empty_model_lod_is_zero() {
        let (probs, pheno) =
            two_chrom_dataset(|g| vec![q(g[0]) + 0.1, q(g[0]) - 0.1], &[1.0, 2.0]);
        assert_eq!(
            model_lod(&probs, &pheno, &[], StatKind::Slod).unwrap(),
            0.0
        );
    }

    #[test]
    fn single_locus_model_matches_scan() {
        // Noisy-ish phenotype so the LOD is finite.
        let weights = [0.31, -0.47, 0.11, 0.83, -0.29, 0.57, -0.61, 0.23, 0.47, -0.13, 0.71, -0.37];
        let mut i = 0;
        let (probs, pheno) = two_chrom_dataset(
            |g| {
                let w = weights[i % weights.len()];
                i += 1;
                vec![2.0 * q(g[0]) + w, q(g[0]) - w]
            },
            &[1.0, 2.0],
        );
        let lods = scan_hk(&probs, &pheno).unwrap();
        let s = slod(&lods);
        let m = mlod(&lods);
        // Position 20 cM on chromosome 1 is grid index 2.
        let locus = QtlLocus {
            chrom: "1".to_string(),
            pos: 20.0,
        };
        let got_s = model_lod(&probs, &pheno, std::slice::from_ref(&locus), StatKind::Slod).unwrap();
        let got_m = model_lod(&probs, &pheno, &[locus], StatKind::Mlod).unwrap();
        assert!((got_s - s.chromosomes()[0].values()[2]).abs() < 1e-10);
        assert!((got_m - m.chromosomes()[0].values()[2]).abs() < 1e-10);
    }

    #[test]
    fn joint_model_beats_single_locus_models() {
        let (probs, pheno) = two_chrom_dataset(
            |g| vec![3.0 * q(g[0]) + 2.0 * q(g[1]), q(g[0]) - q(g[1])],
            &[1.0, 2.0],
        );
        let l1 = QtlLocus {
            chrom: "1".to_string(),
            pos: 0.0,
        };
        let l2 = QtlLocus {
            chrom: "2".to_string(),
            pos: 0.0,
        };
        let both = model_lod(
            &probs,
            &pheno,
            &[l1.clone(), l2.clone()],
            StatKind::Slod,
        )
        .unwrap();
        let only1 = model_lod(&probs, &pheno, &[l1], StatKind::Slod).unwrap();
        let only2 = model_lod(&probs, &pheno, &[l2], StatKind::Slod).unwrap();
        assert!(both > only1);
        assert!(both > only2);
    }

    #[test]
    fn resolve_rejects_bad_loci() {
        let (probs, pheno) = two_chrom_dataset(|g| vec![q(g[0])], &[1.0]);
        let off_grid = QtlLocus {
            chrom: "1".to_string(),
            pos: 3.25,
        };
        assert!(model_lod(&probs, &pheno, &[off_grid], StatKind::Slod).is_err());
        let unknown = QtlLocus {
            chrom: "9".to_string(),
            pos: 0.0,
        };
        assert!(model_lod(&probs, &pheno, &[unknown], StatKind::Slod).is_err());
        let dup = QtlLocus {
            chrom: "1".to_string(),
            pos: 10.0,
        };
        assert!(model_lod(&probs, &pheno, &[dup.clone(), dup], StatKind::Slod).is_err());
    }

    #[test]
    fn stepwise_recovers_two_clean_qtl() {
        let (probs, pheno) = two_chrom_dataset(
            |g| {
                vec![
                    3.0 * q(g[0]) + 2.0 * q(g[1]) + 0.05 * (q(g[0]) - 0.5),
                    2.5 * q(g[0]) - 1.5 * q(g[1]),
                ]
            },
            &[1.0, 2.0],
        );
        let model = stepwise_search(
            &probs,
            &pheno,
            StatKind::Slod,
            2.0,
            &StepwiseOptions::default(),
        )
        .unwrap();
        assert_eq!(model.loci.len(), 2);
        let mut chroms: Vec<&str> = model.loci.iter().map(|l| l.chrom.as_str()).collect();
        chroms.sort();
        assert_eq!(chroms, ["1", "2"]);
        for locus in &model.loci {
            assert_eq!(locus.pos, 0.0);
        }
        assert!(
            (model.plod - plod(model.model_lod, 2, 2.0)).abs() < 1e-10,
            "criterion arithmetic"
        );
    }

    #[test]
    fn stepwise_returns_null_when_penalty_dominates() {
        let weights = [0.31, -0.47, 0.11, 0.83, -0.29, 0.57, -0.61, 0.23, 0.47, -0.13, 0.71, -0.37];
        let mut i = 0;
        let (probs, pheno) = two_chrom_dataset(
            |_| {
                let w = weights[i % weights.len()];
                i += 1;
                vec![w, -w]
            },
            &[1.0, 2.0],
        );
        let model = stepwise_search(
            &probs,
            &pheno,
            StatKind::Mlod,
            1000.0,
            &StepwiseOptions::default(),
        )
        .unwrap();
        assert!(model.loci.is_empty());
        assert_eq!(model.plod, 0.0);
        assert_eq!(model.model_lod, 0.0);
    }

    #[test]
    fn stepwise_respects_minimum_spacing() {
        // One strong QTL: with the whole chromosome within the spacing
        // radius, a second locus cannot be added on chromosome 1.
        let (probs, pheno) = two_chrom_dataset(|g| vec![5.0 * q(g[0]) + 0.01], &[1.0]);
        let model = stepwise_search(
            &probs,
            &pheno,
            StatKind::Slod,
            0.5,
            &StepwiseOptions {
                max_qtl: 4,
                min_spacing_cm: 25.0,
            },
        )
        .unwrap();
        let on_chr1: Vec<&QtlLocus> =
            model.loci.iter().filter(|l| l.chrom == "1").collect();
        assert_eq!(on_chr1.len(), 1);
    }

    #[test]
    fn profile_of_single_locus_model_reduces_to_scan() {
        let weights = [0.31, -0.47, 0.11, 0.83, -0.29, 0.57, -0.61, 0.23, 0.47, -0.13, 0.71, -0.37];
        let mut i = 0;
        let (probs, pheno) = two_chrom_dataset(
            |g| {
                let w = weights[i % weights.len()];
                i += 1;
                vec![1.5 * q(g[0]) + w, q(g[0]) - 0.5 * w]
            },
            &[1.0, 2.0],
        );
        let model = QtlModel {
            stat: StatKind::Slod,
            penalty: 1.0,
            loci: vec![QtlLocus {
                chrom: "1".to_string(),
                pos: 20.0,
            }],
            model_lod: 0.0,
            plod: 0.0,
        };
        let prof = profile(&probs, &pheno, &model, StatKind::Slod).unwrap();
        let scan_curve = slod(&scan_hk(&probs, &pheno).unwrap());
        let entry = &prof.entries()[0];
        let chr1 = &scan_curve.chromosomes()[0];
        assert_eq!(entry.positions, chr1.positions());
        for (a, b) in entry.values.iter().zip(chr1.values()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn fit_effects_recovers_exact_coefficients() {
        let (probs, pheno) =
            two_chrom_dataset(|g| vec![3.0 + 2.0 * q(g[0]), 1.0 - 0.5 * q(g[0])], &[1.0, 2.0]);
        let model = QtlModel {
            stat: StatKind::Slod,
            penalty: 1.0,
            loci: vec![QtlLocus {
                chrom: "1".to_string(),
                pos: 0.0,
            }],
            model_lod: 0.0,
            plod: 0.0,
        };
        let fit = fit_effects(&probs, &pheno, &model).unwrap();
        assert!((fit.mu()[0] - 3.0).abs() < 1e-10);
        assert!((fit.mu()[1] - 1.0).abs() < 1e-10);
        let eff = &fit.loci()[0];
        assert!((eff.additive[0] - 2.0).abs() < 1e-10);
        assert!((eff.additive[1] + 0.5).abs() < 1e-10);
        assert!(eff.dominance.is_none());
        // Perfect fit: capped per-time LOD.
        assert_eq!(fit.lod()[0], crate::scan::LOD_CAP);
    }

    #[test]
    fn empty_model_fit_gives_phenotype_means() {
        let (probs, pheno) =
            two_chrom_dataset(|g| vec![1.0 + q(g[0]), 4.0 - q(g[1])], &[1.0, 2.0]);
        let model = QtlModel {
            stat: StatKind::Slod,
            penalty: 1.0,
            loci: vec![],
            model_lod: 0.0,
            plod: 0.0,
        };
        let fit = fit_effects(&probs, &pheno, &model).unwrap();
        for t in 0..2 {
            let mean: f64 =
                (0..pheno.n_ind()).map(|i| pheno.value(i, t)).sum::<f64>() / pheno.n_ind() as f64;
            assert!((fit.mu()[t] - mean).abs() < 1e-12);
            assert_eq!(fit.lod()[t], 0.0);
        }
        assert!(fit.loci().is_empty());
    }

    #[test]
    fn fitted_values_reproduce_projections() {
        // mu(t) + sum_j beta_j(t) * x_ij must reproduce the per-time OLS
        // fitted values; check against a direct residual computation.
        let weights = [0.31, -0.47, 0.11, 0.83, -0.29, 0.57, -0.61, 0.23, 0.47, -0.13, 0.71, -0.37];
        let mut i = 0;
        let (probs, pheno) = two_chrom_dataset(
            |g| {
                let w = weights[i % weights.len()];
                i += 1;
                vec![2.0 * q(g[0]) - q(g[1]) + w]
            },
            &[1.0],
        );
        let model = QtlModel {
            stat: StatKind::Slod,
            penalty: 1.0,
            loci: vec![
                QtlLocus {
                    chrom: "1".to_string(),
                    pos: 0.0,
                },
                QtlLocus {
                    chrom: "2".to_string(),
                    pos: 0.0,
                },
            ],
            model_lod: 0.0,
            plod: 0.0,
        };
        let fit = fit_effects(&probs, &pheno, &model).unwrap();
        // Reconstruct fitted values and compare residual sums against
        // the LOD-implied RSS1.
        let chr1 = &probs.chromosomes()[0];
        let chr2 = &probs.chromosomes()[1];
        let mut rss1 = 0.0;
        for ind in 0..pheno.n_ind() {
            let x1 = chr1.prob(ind, 0, 1);
            let x2 = chr2.prob(ind, 0, 1);
            let fitted = fit.mu()[0]
                + fit.loci()[0].additive[0] * x1
                + fit.loci()[1].additive[0] * x2;
            let r = pheno.value(ind, 0) - fitted;
            rss1 += r * r;
        }
        let mut rss0 = 0.0;
        let mean: f64 =
            (0..pheno.n_ind()).map(|i| pheno.value(i, 0)).sum::<f64>() / pheno.n_ind() as f64;
        for ind in 0..pheno.n_ind() {
            let d = pheno.value(ind, 0) - mean;
            rss0 += d * d;
        }
        let expect = 0.5 * pheno.n_ind() as f64 * (rss0 / rss1).log10();
        assert!((fit.lod()[0] - expect).abs() < 1e-8, "{} vs {expect}", fit.lod()[0]);
    }
}
