//! CSV readers and writers for datasets and result tables.
//!
//! Dataset formats (simple comma-separated files, no quoting):
//!
//! - `map.csv`: header `marker,chr,pos`; one row per marker, position in
//!   cM. Markers are grouped by chromosome (first-appearance order) and
//!   sorted by position within each chromosome.
//! - `geno.csv`: header `id,<marker>,...`; cells `A`, `H`, `B`, or `-`.
//!   Marker columns may appear in any order; they are aligned to the map
//!   by name.
//! - `pheno.csv`: header `id,<time>,...` with numeric time labels; cells
//!   numeric or `-` for missing. Rows are aligned to the genotype file
//!   by id.
//!
//! All numeric output uses fixed 6-decimal formatting so that repeated
//! runs produce byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::genoprob::GenoProbs;
use crate::modelsel::{EffectCurves, ProfileCurves, QtlModel};
use crate::scan::{GenomeCurve, PermutationResult, SignedLodMatrix};
use crate::types::{
    Chromosome, CrossType, GenoCall, GeneticMap, GenotypeMatrix, Marker, PhenotypeMatrix,
};

/// A consistent (map, genotype, phenotype) triple as loaded from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub map: GeneticMap,
    pub geno: GenotypeMatrix,
    pub pheno: PhenotypeMatrix,
}

/// Format a number with the fixed 6-decimal output convention.
pub(crate) fn fmt6(x: f64) -> String {
    // Normalize -0.0 so the sign of zero never leaks into output files.
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.6}")
}

/// Format a position for use inside a column label: 6-decimal, with
/// trailing zeros (and a bare decimal point) trimmed, e.g. `60`, `76.1`.
pub(crate) fn fmt_pos_label(x: f64) -> String {
    let s = fmt6(x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn open_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::Format {
        file: path_str(path),
        message: format!("cannot open: {e}"),
    })?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::Format {
            file: path_str(path),
            message: format!("read error: {e}"),
        })?;
        lines.push(line.trim_end_matches('\r').to_string());
    }
    // Ignore trailing blank lines but keep interior structure strict.
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(Error::Format {
            file: path_str(path),
            message: "file is empty".to_string(),
        });
    }
    Ok(lines)
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

/// Read a genetic map from `map.csv`.
pub fn read_map(path: &Path) -> Result<GeneticMap> {
    let file = path_str(path);
    let lines = open_lines(path)?;
    let header = split_fields(&lines[0]);
    if header != ["marker", "chr", "pos"] {
        return Err(Error::Format {
            file,
            message: format!("expected header `marker,chr,pos`, got {:?}", lines[0]),
        });
    }
    let mut chrom_order: Vec<String> = Vec::new();
    let mut by_chrom: std::collections::HashMap<String, Vec<Marker>> =
        std::collections::HashMap::new();
    let mut seen_markers: std::collections::HashSet<String> = std::collections::HashSet::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let row = idx + 1;
        let fields = split_fields(line);
        if fields.len() != 3 {
            return Err(Error::Row {
                file,
                row,
                message: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let (name, chrom, pos_text) = (fields[0], fields[1], fields[2]);
        if name.is_empty() {
            return Err(Error::Cell {
                file,
                row,
                col: 1,
                message: "marker name is empty".to_string(),
            });
        }
        if !seen_markers.insert(name.to_string()) {
            return Err(Error::Row {
                file,
                row,
                message: format!("duplicate marker name {name:?}"),
            });
        }
        let pos: f64 = pos_text.parse().map_err(|_| Error::Cell {
            file: file.clone(),
            row,
            col: 3,
            message: format!("cannot parse position {pos_text:?}"),
        })?;
        if !pos.is_finite() {
            return Err(Error::Cell {
                file,
                row,
                col: 3,
                message: format!("position must be finite, got {pos_text:?}"),
            });
        }
        if !by_chrom.contains_key(chrom) {
            chrom_order.push(chrom.to_string());
        }
        by_chrom.entry(chrom.to_string()).or_default().push(Marker {
            name: name.to_string(),
            pos,
        });
    }
    let mut chromosomes = Vec::with_capacity(chrom_order.len());
    for name in chrom_order {
        let mut markers = by_chrom.remove(&name).unwrap();
        markers.sort_by(|a, b| a.pos.partial_cmp(&b.pos).unwrap());
        chromosomes.push(Chromosome { name, markers });
    }
    GeneticMap::new(chromosomes).map_err(|e| Error::Format {
        file: path_str(path),
        message: e.to_string(),
    })
}

/// Read genotypes from `geno.csv`, aligning marker columns to the map.
pub fn read_geno(path: &Path, map: &GeneticMap, cross: CrossType) -> Result<GenotypeMatrix> {
    let file = path_str(path);
    let lines = open_lines(path)?;
    let header = split_fields(&lines[0]);
    if header.first() != Some(&"id") {
        return Err(Error::Format {
            file,
            message: format!("first header field must be `id`, got {:?}", header.first()),
        });
    }
    let marker_names = map.marker_names();
    let marker_index: std::collections::HashMap<&str, usize> = marker_names
        .iter()
        .enumerate()
        .map(|(i, &name)| (name, i))
        .collect();
    let n_markers = marker_names.len();
    let mut col_to_marker = Vec::with_capacity(header.len() - 1);
    let mut covered = vec![false; n_markers];
    for &col_name in &header[1..] {
        let Some(&idx) = marker_index.get(col_name) else {
            return Err(Error::Format {
                file,
                message: format!("column {col_name:?} is not a marker in the map"),
            });
        };
        if covered[idx] {
            return Err(Error::Format {
                file,
                message: format!("marker column {col_name:?} appears twice"),
            });
        }
        covered[idx] = true;
        col_to_marker.push(idx);
    }
    if let Some(missing) = covered.iter().position(|&c| !c) {
        return Err(Error::Format {
            file,
            message: format!(
                "map marker {:?} has no column in the genotype file",
                marker_names[missing]
            ),
        });
    }

    let mut ids = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut calls = vec![GenoCall::Missing; (lines.len() - 1) * n_markers];
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let row = idx + 1;
        let ind = idx - 1;
        let fields = split_fields(line);
        if fields.len() != header.len() {
            return Err(Error::Row {
                file,
                row,
                message: format!("expected {} fields, got {}", header.len(), fields.len()),
            });
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(Error::Cell {
                file,
                row,
                col: 1,
                message: "individual id is empty".to_string(),
            });
        }
        if !seen_ids.insert(id.to_string()) {
            return Err(Error::Row {
                file,
                row,
                message: format!("duplicate individual id {id:?}"),
            });
        }
        ids.push(id.to_string());
        for (j, &cell) in fields[1..].iter().enumerate() {
            let call = GenoCall::from_code(cell).ok_or_else(|| Error::Cell {
                file: file.clone(),
                row,
                col: j + 2,
                message: format!("unknown genotype code {cell:?}"),
            })?;
            if !call.is_legal(cross) {
                return Err(Error::Cell {
                    file,
                    row,
                    col: j + 2,
                    message: format!("genotype code {cell:?} is not valid for {cross:?}"),
                });
            }
            calls[ind * n_markers + col_to_marker[j]] = call;
        }
    }
    GenotypeMatrix::new(ids, n_markers, calls, cross).map_err(|e| Error::Format {
        file: path_str(path),
        message: e.to_string(),
    })
}

/// Read phenotypes from `pheno.csv`.
pub fn read_pheno(path: &Path) -> Result<PhenotypeMatrix> {
    let file = path_str(path);
    let lines = open_lines(path)?;
    let header = split_fields(&lines[0]);
    if header.first() != Some(&"id") {
        return Err(Error::Format {
            file,
            message: format!("first header field must be `id`, got {:?}", header.first()),
        });
    }
    if header.len() < 2 {
        return Err(Error::Format {
            file,
            message: "phenotype file has no time columns".to_string(),
        });
    }
    let mut times = Vec::with_capacity(header.len() - 1);
    for (j, &label) in header[1..].iter().enumerate() {
        let t: f64 = label.parse().map_err(|_| Error::Cell {
            file: file.clone(),
            row: 1,
            col: j + 2,
            message: format!("cannot parse time label {label:?}"),
        })?;
        times.push(t);
    }
    let n_times = times.len();
    let mut ids = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut values = Vec::with_capacity((lines.len() - 1) * n_times);
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let row = idx + 1;
        let fields = split_fields(line);
        if fields.len() != header.len() {
            return Err(Error::Row {
                file,
                row,
                message: format!("expected {} fields, got {}", header.len(), fields.len()),
            });
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(Error::Cell {
                file,
                row,
                col: 1,
                message: "individual id is empty".to_string(),
            });
        }
        if !seen_ids.insert(id.to_string()) {
            return Err(Error::Row {
                file,
                row,
                message: format!("duplicate individual id {id:?}"),
            });
        }
        ids.push(id.to_string());
        for (j, &cell) in fields[1..].iter().enumerate() {
            if cell == "-" {
                values.push(f64::NAN);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Cell {
                file: file.clone(),
                row,
                col: j + 2,
                message: format!("cannot parse phenotype value {cell:?}"),
            })?;
            if v.is_infinite() {
                return Err(Error::Cell {
                    file,
                    row,
                    col: j + 2,
                    message: "phenotype value must be finite or `-`".to_string(),
                });
            }
            values.push(v);
        }
    }
    PhenotypeMatrix::new(ids, times, values).map_err(|e| Error::Format {
        file: path_str(path),
        message: e.to_string(),
    })
}

/// Read the (map, genotype, phenotype) triple, aligning phenotype rows
/// to the genotype file's individual order by id.
pub fn read_dataset(
    geno_path: &Path,
    map_path: &Path,
    pheno_path: &Path,
    cross: CrossType,
) -> Result<Dataset> {
    let map = read_map(map_path)?;
    let geno = read_geno(geno_path, &map, cross)?;
    let pheno = read_pheno(pheno_path)?;

    let geno_ids: std::collections::HashSet<&String> = geno.ids().iter().collect();
    for id in pheno.ids() {
        if !geno_ids.contains(id) {
            return Err(Error::Format {
                file: path_str(pheno_path),
                message: format!("individual {id:?} is not in the genotype file"),
            });
        }
    }
    let pheno_row: std::collections::HashMap<&String, usize> = pheno
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    let mut values = Vec::with_capacity(geno.n_ind() * pheno.n_times());
    for id in geno.ids() {
        let Some(&row) = pheno_row.get(id) else {
            return Err(Error::Format {
                file: path_str(pheno_path),
                message: format!("individual {id:?} has no phenotype row"),
            });
        };
        values.extend_from_slice(pheno.row(row));
    }
    let pheno = PhenotypeMatrix::new(geno.ids().to_vec(), pheno.times().to_vec(), values)?;
    Ok(Dataset { map, geno, pheno })
}

fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).map_err(|e| Error::Format {
        file: path_str(path),
        message: format!("cannot create: {e}"),
    })?;
    Ok(BufWriter::new(file))
}

/// Write a genetic map in `map.csv` format.
pub fn write_map(path: &Path, map: &GeneticMap) -> Result<()> {
    let mut w = create_writer(path)?;
    writeln!(w, "marker,chr,pos")?;
    for chrom in map.chromosomes() {
        for marker in &chrom.markers {
            writeln!(w, "{},{},{}", marker.name, chrom.name, fmt6(marker.pos))?;
        }
    }
    Ok(w.flush()?)
}

/// Write genotypes in `geno.csv` format, columns in map order.
pub fn write_geno(path: &Path, map: &GeneticMap, geno: &GenotypeMatrix) -> Result<()> {
    if geno.n_markers() != map.n_markers() {
        return Err(Error::invalid(format!(
            "genotype matrix has {} markers but map has {}",
            geno.n_markers(),
            map.n_markers()
        )));
    }
    let mut w = create_writer(path)?;
    writeln!(w, "id,{}", map.marker_names().join(","))?;
    for (i, id) in geno.ids().iter().enumerate() {
        let codes: Vec<String> = geno.row(i).iter().map(|c| c.code().to_string()).collect();
        writeln!(w, "{},{}", id, codes.join(","))?;
    }
    Ok(w.flush()?)
}

/// Write phenotypes in `pheno.csv` format; missing cells become `-`.
pub fn write_pheno(path: &Path, pheno: &PhenotypeMatrix) -> Result<()> {
    let mut w = create_writer(path)?;
    let labels: Vec<String> = pheno.times().iter().map(|&t| fmt6(t)).collect();
    writeln!(w, "id,{}", labels.join(","))?;
    for (i, id) in pheno.ids().iter().enumerate() {
        let cells: Vec<String> = pheno
            .row(i)
            .iter()
            .map(|&v| if v.is_nan() { "-".to_string() } else { fmt6(v) })
            .collect();
        writeln!(w, "{},{}", id, cells.join(","))?;
    }
    Ok(w.flush()?)
}

/// Write the full dataset triple.
pub fn write_dataset(
    dataset: &Dataset,
    map_path: &Path,
    geno_path: &Path,
    pheno_path: &Path,
) -> Result<()> {
    write_map(map_path, &dataset.map)?;
    write_geno(geno_path, &dataset.map, &dataset.geno)?;
    write_pheno(pheno_path, &dataset.pheno)
}

/// Serialize `value` as a single JSON line (used for run-metadata
/// sidecars and `model.json`).
pub fn write_json_line<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create_writer(path)?;
    let json = serde_json::to_string(value).map_err(|e| Error::invalid(e.to_string()))?;
    writeln!(w, "{json}")?;
    Ok(w.flush()?)
}

/// Write the signed LOD surface: one row per grid position labelled
/// `chr:pos`, one column per time point.
pub fn write_lod_csv(path: &Path, lods: &SignedLodMatrix) -> Result<()> {
    let mut w = create_writer(path)?;
    let labels: Vec<String> = lods.times().iter().map(|&t| fmt6(t)).collect();
    writeln!(w, "position,{}", labels.join(","))?;
    for block in lods.chromosomes() {
        for (p, &pos) in block.positions().iter().enumerate() {
            let cells: Vec<String> = block.row(p).iter().map(|&v| fmt6(v)).collect();
            writeln!(w, "{}:{},{}", block.name(), fmt6(pos), cells.join(","))?;
        }
    }
    Ok(w.flush()?)
}

/// Write the SLOD/MLOD summary: one row per grid position.
pub fn write_summary_csv(path: &Path, slod: &GenomeCurve, mlod: &GenomeCurve) -> Result<()> {
    let s_chroms = slod.chromosomes();
    let m_chroms = mlod.chromosomes();
    if s_chroms.len() != m_chroms.len()
        || s_chroms
            .iter()
            .zip(m_chroms)
            .any(|(a, b)| a.positions() != b.positions())
    {
        return Err(Error::invalid(
            "SLOD and MLOD curves are on different grids",
        ));
    }
    let mut w = create_writer(path)?;
    writeln!(w, "position,slod,mlod")?;
    for (sc, mc) in s_chroms.iter().zip(m_chroms) {
        for (p, &pos) in sc.positions().iter().enumerate() {
            writeln!(
                w,
                "{}:{},{},{}",
                sc.name(),
                fmt6(pos),
                fmt6(sc.values()[p]),
                fmt6(mc.values()[p])
            )?;
        }
    }
    Ok(w.flush()?)
}

/// Write permutation maxima and thresholds: rows `max,<index>,<value>`
/// then `threshold,<alpha>,<value>`.
pub fn write_perm_csv(path: &Path, perm: &PermutationResult) -> Result<()> {
    let mut w = create_writer(path)?;
    writeln!(w, "kind,key,value")?;
    for (i, &m) in perm.maxima().iter().enumerate() {
        writeln!(w, "max,{i},{}", fmt6(m))?;
    }
    for (&alpha, &thr) in perm.alphas().iter().zip(perm.thresholds()) {
        writeln!(w, "threshold,{},{}", fmt6(alpha), fmt6(thr))?;
    }
    Ok(w.flush()?)
}

/// Write profile curves: one row per (QTL, grid position).
pub fn write_profiles_csv(path: &Path, profiles: &ProfileCurves) -> Result<()> {
    let mut w = create_writer(path)?;
    writeln!(w, "qtl,chr,pos,value")?;
    for entry in profiles.entries() {
        let label = format!(
            "chr{}@{}",
            entry.locus.chrom,
            fmt_pos_label(entry.locus.pos)
        );
        for (&pos, &value) in entry.positions.iter().zip(&entry.values) {
            writeln!(
                w,
                "{label},{},{},{}",
                entry.locus.chrom,
                fmt6(pos),
                fmt6(value)
            )?;
        }
    }
    Ok(w.flush()?)
}

/// Write fitted effect curves: columns `time,mu` then one additive
/// (`beta_chr1@60`) and, for F2 models, one dominance (`dom_chr1@60`)
/// column per locus, then the per-time full-model `lod`.
pub fn write_effects_csv(path: &Path, effects: &EffectCurves) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut header = vec!["time".to_string(), "mu".to_string()];
    for le in effects.loci() {
        let tag = format!("chr{}@{}", le.locus.chrom, fmt_pos_label(le.locus.pos));
        header.push(format!("beta_{tag}"));
        if le.dominance.is_some() {
            header.push(format!("dom_{tag}"));
        }
    }
    header.push("lod".to_string());
    writeln!(w, "{}", header.join(","))?;
    for (t, &time) in effects.times().iter().enumerate() {
        let mut cells = vec![fmt6(time), fmt6(effects.mu()[t])];
        for le in effects.loci() {
            cells.push(fmt6(le.additive[t]));
            if let Some(dom) = &le.dominance {
                cells.push(fmt6(dom[t]));
            }
        }
        cells.push(fmt6(effects.lod()[t]));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(w.flush()?)
}

/// Write the fitted model as a single JSON line.
pub fn write_model_json(path: &Path, model: &QtlModel) -> Result<()> {
    write_json_line(path, model)
}

/// Read a model back from `model.json`.
pub fn read_model_json(path: &Path) -> Result<QtlModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Format {
        file: path_str(path),
        message: format!("cannot open: {e}"),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        file: path_str(path),
        message: format!("invalid model JSON: {e}"),
    })
}

/// Dump genotype probabilities for one chromosome: one row per
/// (individual, position).
pub fn write_probs_csv(path: &Path, probs: &GenoProbs, chrom_index: usize) -> Result<()> {
    let block = probs
        .chromosomes()
        .get(chrom_index)
        .ok_or_else(|| Error::invalid(format!("chromosome index {chrom_index} out of range")))?;
    let mut w = create_writer(path)?;
    let geno_cols: Vec<String> = (0..probs.n_genotypes())
        .map(|g| {
            let call = GenoCall::from_state_index(probs.cross(), g);
            format!("p_{}", call.code().to_ascii_lowercase())
        })
        .collect();
    writeln!(w, "id,pos,{}", geno_cols.join(","))?;
    for (i, id) in probs.ids().iter().enumerate() {
        for (p, &pos) in block.positions().iter().enumerate() {
            let cells: Vec<String> = (0..probs.n_genotypes())
                .map(|g| fmt6(block.prob(i, p, g)))
                .collect();
            writeln!(w, "{id},{},{}", fmt6(pos), cells.join(","))?;
        }
    }
    Ok(w.flush()?)
}
