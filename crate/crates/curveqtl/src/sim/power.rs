//! Detection power, localization accuracy, and false-positive studies.
//!
//! The single-QTL study scans many simulated datasets and compares the
//! genome-wide maximum SLOD/MLOD against a threshold estimated from
//! matching null simulations (one shared threshold per covariance
//! cell). The multiple-QTL study runs the penalized stepwise search on
//! each replicate, with penalties taken from a permutation test on one
//! seeded baseline replicate, and tallies detections two ways: within a
//! fixed window of each true QTL, and anywhere on its chromosome.

use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

use crate::error::{Error, Result};
use crate::genoprob::calc_genoprob;
use crate::io::fmt6;
use crate::modelsel::{stepwise_with_context, ModelContext, QtlLocus, StepwiseOptions};
use crate::scan::{
    mlod, permutation_maxima, scan_hk, slod, thresholds_from_maxima, ScanData, StatKind,
    Workspace,
};
use crate::sim::{
    heritability_profile, CovarianceKind, CovarianceSpec, CubicQtlSpec, LogisticQtlSpec,
    MultiQtlEngine, SingleQtlEngine,
};
use crate::stream::{domain, stream_rng};
use crate::types::GridSpec;

/// Configuration of the single-QTL power study: one covariance
/// structure swept over a grid of scale values.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleStudyConfig {
    pub spec: LogisticQtlSpec,
    pub cov_kind: CovarianceKind,
    /// Residual scale values; one study cell per value.
    pub c_values: Vec<f64>,
    pub noise_sd: f64,
    pub n: usize,
    pub n_replicates: usize,
    /// Null replicates used to estimate each cell's threshold.
    pub n_null_replicates: usize,
    pub alpha: f64,
    pub error_prob: f64,
    pub grid_step_cm: f64,
    pub seed: u64,
}

impl Default for SingleStudyConfig {
    fn default() -> SingleStudyConfig {
        SingleStudyConfig {
            spec: LogisticQtlSpec::default(),
            cov_kind: CovarianceKind::Autoregressive {
                sigma2: 3.0,
                rho: 0.6,
            },
            c_values: vec![1.0, 2.0, 3.0, 6.0],
            noise_sd: 0.0,
            n: 100,
            n_replicates: 1000,
            n_null_replicates: 1000,
            alpha: 0.05,
            error_prob: 1e-4,
            grid_step_cm: 1.0,
            seed: 1,
        }
    }
}

/// Configuration of the multiple-QTL power study.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStudyConfig {
    pub spec: CubicQtlSpec,
    pub n: usize,
    pub n_replicates: usize,
    /// Permutations used to derive the stepwise penalties.
    pub n_permutations: usize,
    pub alpha: f64,
    /// Detection window around each true QTL for windowed accounting.
    pub window_cm: f64,
    pub stepwise: StepwiseOptions,
    pub error_prob: f64,
    pub grid_step_cm: f64,
    pub seed: u64,
}

impl Default for MultiStudyConfig {
    fn default() -> MultiStudyConfig {
        MultiStudyConfig {
            spec: CubicQtlSpec::default(),
            n: 162,
            n_replicates: 500,
            n_permutations: 1000,
            alpha: 0.05,
            window_cm: 15.0,
            stepwise: StepwiseOptions::default(),
            error_prob: 1e-4,
            grid_step_cm: 1.0,
            seed: 1,
        }
    }
}

/// Which study to run.
#[derive(Debug, Clone, PartialEq)]
pub enum StudyConfig {
    Single(SingleStudyConfig),
    Multi(MultiStudyConfig),
}

/// One statistic's results in one single-QTL study cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodPowerCell {
    pub stat: StatKind,
    pub threshold: f64,
    pub n_detected: usize,
    pub power_pct: f64,
    /// Mean estimated position over detected replicates.
    pub mean_pos_cm: Option<f64>,
    /// Sample SD of the estimated position over detected replicates.
    pub sd_pos_cm: Option<f64>,
    /// Root-mean-square error versus the true position.
    pub rmse_cm: Option<f64>,
}

/// One residual-scale cell of the single-QTL study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleCellReport {
    pub c: f64,
    pub mean_h2: f64,
    pub methods: Vec<MethodPowerCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinglePowerReport {
    pub n: usize,
    pub noise_sd: f64,
    pub n_replicates: usize,
    pub n_null_replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub true_pos_cm: f64,
    pub cells: Vec<SingleCellReport>,
}

/// Power and localization for one true QTL under one accounting rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QtlPowerRow {
    pub chrom: String,
    pub true_pos_cm: f64,
    pub n_detected: usize,
    pub power_pct: f64,
    pub mean_pos_cm: Option<f64>,
    pub sd_pos_cm: Option<f64>,
}

/// Detection accounting for a whole model-selection study: each true
/// QTL's power, plus the rate of replicates with unmatched loci.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelAccounting {
    /// Matching window in cM; `None` matches anywhere on the chromosome.
    pub window_cm: Option<f64>,
    pub qtl: Vec<QtlPowerRow>,
    /// Percent of replicates whose model contains at least one locus
    /// not matched to any true QTL.
    pub fp_rate_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiMethodReport {
    pub stat: StatKind,
    pub penalty: f64,
    pub windowed: ModelAccounting,
    pub chromosome_wide: ModelAccounting,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiPowerReport {
    pub n: usize,
    pub n_replicates: usize,
    pub n_permutations: usize,
    pub alpha: f64,
    pub window_cm: f64,
    pub seed: u64,
    pub methods: Vec<MultiMethodReport>,
}

/// Results of a power study.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum PowerReport {
    Single(SinglePowerReport),
    Multi(MultiPowerReport),
}

/// Run the configured study.
pub fn run_power_study(config: &StudyConfig) -> Result<PowerReport> {
    match config {
        StudyConfig::Single(c) => run_single_study(c).map(PowerReport::Single),
        StudyConfig::Multi(c) => run_multi_study(c).map(PowerReport::Multi),
    }
}

fn validate_common(
    n: usize,
    n_replicates: usize,
    alpha: f64,
    error_prob: f64,
    grid_step_cm: f64,
) -> Result<GridSpec> {
    if n < 4 {
        return Err(Error::invalid("the study needs at least 4 individuals"));
    }
    if n_replicates == 0 {
        return Err(Error::invalid("the study needs at least 1 replicate"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "significance level must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    let _ = error_prob; // validated by genotype-probability computation
    GridSpec::new(grid_step_cm)
}

fn run_single_study(config: &SingleStudyConfig) -> Result<SinglePowerReport> {
    let grid = validate_common(
        config.n,
        config.n_replicates,
        config.alpha,
        config.error_prob,
        config.grid_step_cm,
    )?;
    if config.n_null_replicates == 0 {
        return Err(Error::invalid(
            "the study needs at least 1 null replicate for thresholds",
        ));
    }
    let null_spec = config.spec.zero_effect();
    let mut cells = Vec::with_capacity(config.c_values.len());
    for (cell_idx, &c) in config.c_values.iter().enumerate() {
        let cov = CovarianceSpec::new(config.cov_kind.clone(), c);
        let mean_h2 = heritability_profile(&config.spec, &cov, config.noise_sd)?.mean;

        // Shared threshold per cell, from matching null simulations.
        let null_engine = SingleQtlEngine::new(&null_spec, &cov, config.noise_sd)?;
        let null_base = (cell_idx * config.n_null_replicates) as u64;
        let null_maxima: Vec<(f64, f64)> = (0..config.n_null_replicates)
            .into_par_iter()
            .map_init(
                || null_engine.clone(),
                |engine, i| -> Result<(f64, f64)> {
                    let mut rng =
                        stream_rng(config.seed, domain::NULL_REPLICATE, null_base + i as u64);
                    let data = engine.simulate(config.n, &mut rng);
                    let probs = calc_genoprob(
                        &data.geno,
                        &data.map,
                        config.spec.cross,
                        &grid,
                        config.error_prob,
                    )?;
                    let sd = ScanData::new(&probs, &data.pheno)?;
                    let mut ws = Workspace::new(sd.cpl);
                    Ok(sd.stat_maxima(&sd.yc, &mut ws))
                },
            )
            .collect::<Result<_>>()?;
        let slod_maxima: Vec<f64> = null_maxima.iter().map(|m| m.0).collect();
        let mlod_maxima: Vec<f64> = null_maxima.iter().map(|m| m.1).collect();
        let thr_slod = thresholds_from_maxima(&slod_maxima, &[config.alpha])[0];
        let thr_mlod = thresholds_from_maxima(&mlod_maxima, &[config.alpha])[0];

        // Study replicates: genome-wide max and argmax per statistic.
        let study_engine = SingleQtlEngine::new(&config.spec, &cov, config.noise_sd)?;
        let rep_base = (cell_idx * config.n_replicates) as u64;
        let results: Vec<[(f64, f64); 2]> = (0..config.n_replicates)
            .into_par_iter()
            .map_init(
                || study_engine.clone(),
                |engine, i| -> Result<[(f64, f64); 2]> {
                    let mut rng =
                        stream_rng(config.seed, domain::REPLICATE, rep_base + i as u64);
                    let data = engine.simulate(config.n, &mut rng);
                    let probs = calc_genoprob(
                        &data.geno,
                        &data.map,
                        config.spec.cross,
                        &grid,
                        config.error_prob,
                    )?;
                    let lods = scan_hk(&probs, &data.pheno)?;
                    let mut out = [(0.0, 0.0); 2];
                    for (k, curve) in [slod(&lods), mlod(&lods)].into_iter().enumerate() {
                        let (ci, p, v) = curve
                            .genome_max()
                            .expect("scan produces at least one position");
                        out[k] = (v, curve.chromosomes()[ci].positions()[p]);
                    }
                    Ok(out)
                },
            )
            .collect::<Result<_>>()?;

        let methods = [(StatKind::Slod, thr_slod, 0), (StatKind::Mlod, thr_mlod, 1)]
            .into_iter()
            .map(|(stat, threshold, k)| {
                summarize_detections(
                    stat,
                    threshold,
                    config.spec.qtl_pos_cm,
                    config.n_replicates,
                    results.iter().map(move |r| r[k]),
                )
            })
            .collect();
        cells.push(SingleCellReport {
            c,
            mean_h2,
            methods,
        });
    }
    Ok(SinglePowerReport {
        n: config.n,
        noise_sd: config.noise_sd,
        n_replicates: config.n_replicates,
        n_null_replicates: config.n_null_replicates,
        alpha: config.alpha,
        seed: config.seed,
        true_pos_cm: config.spec.qtl_pos_cm,
        cells,
    })
}

fn summarize_detections(
    stat: StatKind,
    threshold: f64,
    true_pos: f64,
    n_replicates: usize,
    results: impl Iterator<Item = (f64, f64)>,
) -> MethodPowerCell {
    let detected: Vec<f64> = results
        .filter(|&(v, _)| v >= threshold)
        .map(|(_, pos)| pos)
        .collect();
    let n_detected = detected.len();
    let mean = (n_detected > 0).then(|| detected.iter().sum::<f64>() / n_detected as f64);
    let sd = (n_detected > 1).then(|| {
        let m = mean.unwrap();
        (detected.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / (n_detected - 1) as f64)
            .sqrt()
    });
    let rmse = (n_detected > 0).then(|| {
        (detected
            .iter()
            .map(|p| (p - true_pos) * (p - true_pos))
            .sum::<f64>()
            / n_detected as f64)
            .sqrt()
    });
    MethodPowerCell {
        stat,
        threshold,
        n_detected,
        power_pct: 100.0 * n_detected as f64 / n_replicates as f64,
        mean_pos_cm: mean,
        sd_pos_cm: sd,
        rmse_cm: rmse,
    }
}

fn run_multi_study(config: &MultiStudyConfig) -> Result<MultiPowerReport> {
    let grid = validate_common(
        config.n,
        config.n_replicates,
        config.alpha,
        config.error_prob,
        config.grid_step_cm,
    )?;
    if config.n_permutations == 0 {
        return Err(Error::invalid(
            "the study needs at least 1 permutation for penalties",
        ));
    }
    if !(config.window_cm > 0.0) {
        return Err(Error::invalid("the detection window must be positive"));
    }

    // Penalties: permutation thresholds on one seeded baseline replicate.
    let mut engine = MultiQtlEngine::new(&config.spec)?;
    let mut rng0 = stream_rng(config.seed, domain::DATASET, 0);
    let base = engine.simulate(config.n, &mut rng0);
    let probs0 = calc_genoprob(
        &base.geno,
        &base.map,
        config.spec.cross,
        &grid,
        config.error_prob,
    )?;
    let sd0 = ScanData::new(&probs0, &base.pheno)?;
    let maxima = permutation_maxima(&sd0, config.n_permutations, config.seed);
    let slod_maxima: Vec<f64> = maxima.iter().map(|m| m.0).collect();
    let mlod_maxima: Vec<f64> = maxima.iter().map(|m| m.1).collect();
    let penalty_slod = thresholds_from_maxima(&slod_maxima, &[config.alpha])[0];
    let penalty_mlod = thresholds_from_maxima(&mlod_maxima, &[config.alpha])[0];

    // Replicates: both criteria share the simulated data and context.
    let models: Vec<(Vec<QtlLocus>, Vec<QtlLocus>)> = (0..config.n_replicates)
        .into_par_iter()
        .map_init(
            || engine.clone(),
            |engine, i| -> Result<(Vec<QtlLocus>, Vec<QtlLocus>)> {
                let mut rng = stream_rng(config.seed, domain::REPLICATE, i as u64);
                let data = engine.simulate(config.n, &mut rng);
                let probs = calc_genoprob(
                    &data.geno,
                    &data.map,
                    config.spec.cross,
                    &grid,
                    config.error_prob,
                )?;
                let ctx = ModelContext::new(&probs, &data.pheno)?;
                let ms =
                    stepwise_with_context(&ctx, StatKind::Slod, penalty_slod, &config.stepwise)?;
                let mm =
                    stepwise_with_context(&ctx, StatKind::Mlod, penalty_mlod, &config.stepwise)?;
                Ok((ms.loci, mm.loci))
            },
        )
        .collect::<Result<_>>()?;

    let true_loci: Vec<(String, f64)> = config
        .spec
        .loci
        .iter()
        .map(|l| (l.chrom.clone(), l.pos_cm))
        .collect();
    let methods = [
        (StatKind::Slod, penalty_slod, 0usize),
        (StatKind::Mlod, penalty_mlod, 1usize),
    ]
    .into_iter()
    .map(|(stat, penalty, k)| {
        let loci: Vec<&Vec<QtlLocus>> = models
            .iter()
            .map(|m| if k == 0 { &m.0 } else { &m.1 })
            .collect();
        MultiMethodReport {
            stat,
            penalty,
            windowed: account_models(&loci, &true_loci, Some(config.window_cm)),
            chromosome_wide: account_models(&loci, &true_loci, None),
        }
    })
    .collect();

    Ok(MultiPowerReport {
        n: config.n,
        n_replicates: config.n_replicates,
        n_permutations: config.n_permutations,
        alpha: config.alpha,
        window_cm: config.window_cm,
        seed: config.seed,
        methods,
    })
}

/// Tally detections for a set of selected models. Each true QTL claims
/// the nearest eligible model locus on its chromosome (within the
/// window, when one is given); every unclaimed locus is a false
/// positive for its replicate.
fn account_models(
    models: &[&Vec<QtlLocus>],
    true_loci: &[(String, f64)],
    window_cm: Option<f64>,
) -> ModelAccounting {
    let mut positions: Vec<Vec<f64>> = vec![Vec::new(); true_loci.len()];
    let mut fp_replicates = 0usize;
    for model in models {
        let mut claimed = vec![false; model.len()];
        for (q, (chrom, true_pos)) in true_loci.iter().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            for (li, locus) in model.iter().enumerate() {
                if claimed[li] || locus.chrom != *chrom {
                    continue;
                }
                let d = (locus.pos - true_pos).abs();
                if window_cm.is_some_and(|w| d > w) {
                    continue;
                }
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((li, d));
                }
            }
            if let Some((li, _)) = best {
                claimed[li] = true;
                positions[q].push(model[li].pos);
            }
        }
        if claimed.iter().any(|&c| !c) {
            fp_replicates += 1;
        }
    }
    let n_models = models.len().max(1);
    let qtl = true_loci
        .iter()
        .zip(&positions)
        .map(|((chrom, true_pos), found)| {
            let n_detected = found.len();
            let mean = (n_detected > 0).then(|| found.iter().sum::<f64>() / n_detected as f64);
            let sd = (n_detected > 1).then(|| {
                let m = mean.unwrap();
                (found.iter().map(|p| (p - m) * (p - m)).sum::<f64>()
                    / (n_detected - 1) as f64)
                    .sqrt()
            });
            QtlPowerRow {
                chrom: chrom.clone(),
                true_pos_cm: *true_pos,
                n_detected,
                power_pct: 100.0 * n_detected as f64 / n_models as f64,
                mean_pos_cm: mean,
                sd_pos_cm: sd,
            }
        })
        .collect();
    ModelAccounting {
        window_cm,
        qtl,
        fp_rate_pct: 100.0 * fp_replicates as f64 / n_models as f64,
    }
}

fn opt6(v: Option<f64>) -> String {
    v.map(fmt6).unwrap_or_default()
}

impl PowerReport {
    /// Write the report as a flat CSV table.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        match self {
            PowerReport::Single(r) => {
                writeln!(
                    w,
                    "study,n,c,mean_h2,stat,threshold,n_replicates,n_detected,power_pct,\
                     mean_pos_cm,sd_pos_cm,rmse_cm"
                )?;
                for cell in &r.cells {
                    for m in &cell.methods {
                        writeln!(
                            w,
                            "single,{},{},{},{},{},{},{},{},{},{},{}",
                            r.n,
                            fmt6(cell.c),
                            fmt6(cell.mean_h2),
                            m.stat,
                            fmt6(m.threshold),
                            r.n_replicates,
                            m.n_detected,
                            fmt6(m.power_pct),
                            opt6(m.mean_pos_cm),
                            opt6(m.sd_pos_cm),
                            opt6(m.rmse_cm),
                        )?;
                    }
                }
            }
            PowerReport::Multi(r) => {
                writeln!(
                    w,
                    "study,n,stat,penalty,accounting,chr,true_pos_cm,n_replicates,n_detected,\
                     power_pct,mean_pos_cm,sd_pos_cm,fp_rate_pct"
                )?;
                for m in &r.methods {
                    for acc in [&m.windowed, &m.chromosome_wide] {
                        let label = match acc.window_cm {
                            Some(w) => format!("window{}", crate::io::fmt_pos_label(w)),
                            None => "chromosome".to_string(),
                        };
                        for row in &acc.qtl {
                            writeln!(
                                w,
                                "multi,{},{},{},{},{},{},{},{},{},{},{},{}",
                                r.n,
                                m.stat,
                                fmt6(m.penalty),
                                label,
                                row.chrom,
                                fmt6(row.true_pos_cm),
                                r.n_replicates,
                                row.n_detected,
                                fmt6(row.power_pct),
                                opt6(row.mean_pos_cm),
                                opt6(row.sd_pos_cm),
                                fmt6(acc.fp_rate_pct),
                            )?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Write the report as pretty-printed JSON.
    pub fn write_json<W: Write>(&self, w: &mut W) -> Result<()> {
        serde_json::to_writer_pretty(&mut *w, self)
            .map_err(|e| Error::invalid(format!("cannot serialize the power report: {e}")))?;
        writeln!(w)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn locus(chrom: &str, pos: f64) -> QtlLocus {
        QtlLocus {
            chrom: chrom.to_string(),
            pos,
        }
    }

    #[test]
    fn accounting_applies_window_and_chromosome_rules() {
        let true_loci = vec![
            ("1".to_string(), 61.0),
            ("3".to_string(), 76.0),
            ("4".to_string(), 40.0),
        ];
        let m1 = vec![locus("1", 60.0), locus("3", 50.0), locus("5", 10.0)];
        let models: Vec<&Vec<QtlLocus>> = vec![&m1];

        let windowed = account_models(&models, &true_loci, Some(15.0));
        assert_eq!(windowed.qtl[0].n_detected, 1);
        assert_eq!(windowed.qtl[0].mean_pos_cm, Some(60.0));
        // chr3@50 is 26 cM from the true QTL: outside the window.
        assert_eq!(windowed.qtl[1].n_detected, 0);
        assert_eq!(windowed.qtl[1].mean_pos_cm, None);
        assert_eq!(windowed.qtl[2].n_detected, 0);
        assert_eq!(windowed.fp_rate_pct, 100.0);

        let wide = account_models(&models, &true_loci, None);
        assert_eq!(wide.qtl[1].n_detected, 1);
        assert_eq!(wide.qtl[1].mean_pos_cm, Some(50.0));
        // chr5@10 is still unmatched.
        assert_eq!(wide.fp_rate_pct, 100.0);

        // Two loci on one chromosome: the nearer one is claimed, the
        // other counts as a false positive.
        let m2 = vec![locus("1", 58.0), locus("1", 70.0)];
        let models2: Vec<&Vec<QtlLocus>> = vec![&m2];
        let acc = account_models(&models2, &true_loci, Some(15.0));
        assert_eq!(acc.qtl[0].n_detected, 1);
        assert_eq!(acc.qtl[0].mean_pos_cm, Some(58.0));
        assert_eq!(acc.fp_rate_pct, 100.0);

        // A clean model has no false positives.
        let m3 = vec![locus("1", 61.0), locus("4", 41.0)];
        let models3: Vec<&Vec<QtlLocus>> = vec![&m3];
        let acc = account_models(&models3, &true_loci, Some(15.0));
        assert_eq!(acc.fp_rate_pct, 0.0);
        assert_eq!(acc.qtl[0].n_detected, 1);
        assert_eq!(acc.qtl[2].n_detected, 1);
        assert_eq!(acc.qtl[1].n_detected, 0);

        // An empty model detects nothing and has no false positives.
        let m4: Vec<QtlLocus> = Vec::new();
        let models4: Vec<&Vec<QtlLocus>> = vec![&m4];
        let acc = account_models(&models4, &true_loci, Some(15.0));
        assert_eq!(acc.fp_rate_pct, 0.0);
        assert!(acc.qtl.iter().all(|q| q.n_detected == 0));
    }

    #[test]
    fn single_study_runs_and_reproduces() {
        let config = SingleStudyConfig {
            c_values: vec![2.0],
            n: 50,
            n_replicates: 40,
            n_null_replicates: 40,
            ..SingleStudyConfig::default()
        };
        let a = run_power_study(&StudyConfig::Single(config.clone())).unwrap();
        let b = run_power_study(&StudyConfig::Single(config)).unwrap();
        assert_eq!(a, b);
        let PowerReport::Single(report) = a else {
            panic!("expected a single-QTL report")
        };
        assert_eq!(report.cells.len(), 1);
        let cell = &report.cells[0];
        assert!(cell.mean_h2 > 0.0 && cell.mean_h2 < 1.0);
        for m in &cell.methods {
            assert!(m.threshold > 0.0);
            assert!((0.0..=100.0).contains(&m.power_pct));
            if let Some(p) = m.mean_pos_cm {
                assert!((0.0..=100.0).contains(&p));
            }
        }
    }

    #[test]
    fn null_effect_power_is_near_alpha() {
        // With zero QTL effect the detection rate must sit close to the
        // nominal significance level.
        let base = SingleStudyConfig::default();
        let config = SingleStudyConfig {
            spec: base.spec.zero_effect(),
            c_values: vec![1.0],
            n: 60,
            n_replicates: 400,
            n_null_replicates: 400,
            seed: 3,
            ..base
        };
        let PowerReport::Single(report) =
            run_power_study(&StudyConfig::Single(config)).unwrap()
        else {
            panic!("expected a single-QTL report")
        };
        for m in &report.cells[0].methods {
            assert!(
                (m.power_pct - 5.0).abs() <= 5.0,
                "{} null power {}%",
                m.stat,
                m.power_pct
            );
        }
    }

    #[test]
    fn multi_study_runs_and_reproduces() {
        let config = MultiStudyConfig {
            n: 50,
            n_replicates: 4,
            n_permutations: 40,
            ..MultiStudyConfig::default()
        };
        let a = run_power_study(&StudyConfig::Multi(config.clone())).unwrap();
        let b = run_power_study(&StudyConfig::Multi(config)).unwrap();
        assert_eq!(a, b);
        let PowerReport::Multi(report) = a else {
            panic!("expected a multi-QTL report")
        };
        assert_eq!(report.methods.len(), 2);
        for m in &report.methods {
            assert!(m.penalty > 0.0);
            assert_eq!(m.windowed.qtl.len(), 3);
            assert!((0.0..=100.0).contains(&m.windowed.fp_rate_pct));
            // Chromosome-wide matching can only find more, never fewer.
            for (wq, cq) in m.windowed.qtl.iter().zip(&m.chromosome_wide.qtl) {
                assert!(cq.n_detected >= wq.n_detected);
            }
        }
    }

    #[test]
    fn reports_serialize_to_csv_and_json() {
        let config = SingleStudyConfig {
            c_values: vec![1.0, 2.0],
            n: 40,
            n_replicates: 10,
            n_null_replicates: 10,
            ..SingleStudyConfig::default()
        };
        let report = run_power_study(&StudyConfig::Single(config)).unwrap();
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("study,n,c,mean_h2,stat"));
        // 2 cells x 2 statistics.
        assert_eq!(lines.len(), 5);
        let mut json = Vec::new();
        report.write_json(&mut json).unwrap();
        let parsed: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(parsed["study"], "single");
        assert_eq!(parsed["cells"].as_array().unwrap().len(), 2);
    }
}
