//! End-to-end experiment run producing every artifact, and re-rendering of
//! the tables from stored artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrate::{long_attack, short_attack};
use crate::catalog::{build_catalog, Catalog, Family};
use crate::config::Defaults;
use crate::defense::{eval_decoy, eval_obfuscation, DefenseReport};
use crate::fingerprint::{
    build_dataset, fit_tree, mutual_information, pca, relabel, train_tree, CvReport, Dataset,
    FeatureImportance, PcaResult, Task,
};
use crate::recon::{
    identify, reconstruct, split_queries, BlockStructure, Candidate, ExtractionReport,
};
use crate::report::{
    defense_table, extraction_table, fingerprint_table, pca_table, projection_table,
    structure_table, Format, Table,
};
use crate::rng::derive_seed;
use crate::trace::{emit_trace, observe, DecoySpec, InsertKind, Mode, NoiseModel, ObfuscationSpec};
use crate::{Error, Result};

pub const DECOYS: [&str; 3] = ["C:1", "C:1,R:1", "C:2,R:2,M:1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconArtifact {
    pub arch: String,
    pub channel: String,
    pub structure: BlockStructure,
    pub ranked: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintArtifact {
    pub channel: String,
    pub cv: CvReport,
    pub mi: FeatureImportance,
}

fn write(dir: &Path, name: &str, contents: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::from(e).in_file(&path))?;
    out.push(path);
    Ok(())
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifacts serialize");
    s.push('\n');
    s
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::from(e).in_file(&path))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(e.line(), e.to_string()).in_file(&path))
}

fn recon_artifact(
    catalog: &Catalog,
    arch: &str,
    noise: &NoiseModel,
    channel: &str,
    seed: u64,
) -> Result<ReconArtifact> {
    let trace = emit_trace(catalog.get(arch)?, 1, Mode::Inference, None)?;
    let obs = observe(&trace, noise, seed);
    let structure = reconstruct(&split_queries(&obs)?[0]);
    let ranked = identify(&structure, catalog)?;
    Ok(ReconArtifact {
        arch: arch.to_string(),
        channel: channel.to_string(),
        structure,
        ranked,
    })
}

fn fingerprint_tasks() -> Vec<Task> {
    let mut tasks = vec![Task::All13, Task::Family];
    tasks.extend(Family::ALL.iter().map(|&f| Task::Variant(f)));
    tasks
}

fn fingerprint_artifacts(
    catalog: &Catalog,
    dataset: &Dataset,
    channel: &str,
    folds: usize,
    seed: u64,
) -> Result<Vec<FingerprintArtifact>> {
    fingerprint_tasks()
        .into_iter()
        .map(|task| {
            let d = relabel(dataset, task, catalog)?;
            let (_, cv) = train_tree(&d, folds, seed)?;
            Ok(FingerprintArtifact {
                channel: channel.to_string(),
                cv,
                mi: mutual_information(&d)?,
            })
        })
        .collect()
}

/// Run every experiment with `defaults` and write the artifacts and rendered
/// tables into `dir` (created if missing). Returns the written paths.
pub fn run_pipeline(dir: &Path, defaults: &Defaults) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    let catalog = build_catalog();
    let noise = defaults.noise()?;
    let seed = defaults.seed;
    let mut out = Vec::new();

    write(dir, "catalog.json", &catalog.export(), &mut out)?;
    write(dir, "defaults.conf", &defaults.to_text(), &mut out)?;

    let mut extraction: Vec<ExtractionReport> = Vec::new();
    for (i, t) in catalog.templates().iter().enumerate() {
        let master = derive_seed(seed, i as u64);
        extraction.push(short_attack(t, &noise, master)?);
        extraction.push(long_attack(t, &noise, master)?);
    }
    write(dir, "extraction.json", &json(&extraction), &mut out)?;

    let mut recon = Vec::new();
    for arch in ["ResNet50", "VGG16"] {
        recon.push(recon_artifact(
            &catalog,
            arch,
            &NoiseModel::noiseless(),
            "noiseless",
            seed,
        )?);
        recon.push(recon_artifact(&catalog, arch, &noise, "calibrated", seed)?);
    }
    write(dir, "reconstruction.json", &json(&recon), &mut out)?;

    let noisy = build_dataset(&catalog, defaults.per_arch_n, &noise, seed)?;
    let clean = build_dataset(
        &catalog,
        defaults.per_arch_n,
        &NoiseModel::noiseless(),
        seed,
    )?;
    write(dir, "dataset.csv", &noisy.to_csv(), &mut out)?;
    write(dir, "dataset_noiseless.csv", &clean.to_csv(), &mut out)?;
    let mut fp = fingerprint_artifacts(&catalog, &clean, "noiseless", defaults.folds, seed)?;
    fp.extend(fingerprint_artifacts(
        &catalog,
        &noisy,
        "calibrated",
        defaults.folds,
        seed,
    )?);
    write(dir, "fingerprint.json", &json(&fp), &mut out)?;
    write(
        dir,
        "tree.txt",
        &fit_tree(&noisy, seed)?.to_text(),
        &mut out,
    )?;

    let p = pca(&noisy)?;
    write(dir, "pca.json", &json(&p), &mut out)?;
    write(
        dir,
        "projection.csv",
        &projection_table(&p, &noisy.labels).to_csv(),
        &mut out,
    )?;

    let victim = catalog.get("ResNet50")?;
    let decoys = DECOYS
        .iter()
        .map(|d| {
            let spec = DecoySpec::parse(d, defaults.decoy_rate)?;
            eval_decoy(victim, &spec, defaults.runs, &noise, seed, &catalog)
        })
        .collect::<Result<Vec<_>>>()?;
    write(dir, "decoy.json", &json(&decoys), &mut out)?;

    let specs = [
        ObfuscationSpec::Unravel {
            k_blocks: defaults.unravel_k,
        },
        ObfuscationSpec::InsertPreserving {
            count: 5,
            kind: InsertKind::ConvRelu,
        },
        ObfuscationSpec::InsertPreserving {
            count: 1,
            kind: InsertKind::IdentityBlock,
        },
    ];
    let obfuscation = specs
        .iter()
        .map(|s| eval_obfuscation(victim, s, defaults.runs, &noise, seed, &catalog))
        .collect::<Result<Vec<_>>>()?;
    write(dir, "obfuscation.json", &json(&obfuscation), &mut out)?;

    out.extend(render_tables(dir, &[Format::Markdown, Format::Csv])?);
    Ok(out)
}

/// Rebuild the tables from the JSON artifacts in `dir` into `dir/tables`.
pub fn render_tables(dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    let extraction: Vec<ExtractionReport> = read_json(dir, "extraction.json")?;
    let recon: Vec<ReconArtifact> = read_json(dir, "reconstruction.json")?;
    let fp: Vec<FingerprintArtifact> = read_json(dir, "fingerprint.json")?;
    let p: PcaResult = read_json(dir, "pca.json")?;
    let decoys: Vec<DefenseReport> = read_json(dir, "decoy.json")?;
    let obfuscation: Vec<DefenseReport> = read_json(dir, "obfuscation.json")?;

    let mut tables: Vec<(String, Table)> = Vec::new();
    let headline: Vec<ExtractionReport> = extraction
        .iter()
        .filter(|r| matches!(r.arch.as_deref(), Some("VGG19" | "ResNet50")))
        .cloned()
        .collect();
    tables.push((
        "extraction".into(),
        extraction_table("Observed attributes of VGG19 and ResNet50", &headline),
    ));
    tables.push((
        "extraction_all".into(),
        extraction_table("Observed attributes of all networks", &extraction),
    ));
    for r in &recon {
        tables.push((
            format!("reconstruction_{}_{}", r.arch.to_lowercase(), r.channel),
            structure_table(
                &format!("Reconstruction of {} ({})", r.arch, r.channel),
                &r.structure,
                &r.ranked,
            ),
        ));
    }
    for channel in ["noiseless", "calibrated"] {
        let rows: Vec<(CvReport, FeatureImportance)> = fp
            .iter()
            .filter(|f| f.channel == channel)
            .map(|f| (f.cv.clone(), f.mi.clone()))
            .collect();
        tables.push((
            format!("fingerprint_{channel}"),
            fingerprint_table(&format!("Decision-tree fingerprinting ({channel})"), &rows),
        ));
    }
    tables.push((
        "decoy".into(),
        defense_table("Decoy process defense", &decoys),
    ));
    tables.push((
        "obfuscation".into(),
        defense_table("Obfuscated computation defense", &obfuscation),
    ));
    tables.push((
        "pca".into(),
        pca_table("Attribute loadings per principal axis", &p),
    ));

    let tables_dir = dir.join("tables");
    std::fs::create_dir_all(&tables_dir).map_err(|e| Error::from(e).in_file(&tables_dir))?;
    let mut out = Vec::new();
    for &format in formats {
        for (name, table) in &tables {
            write(
                &tables_dir,
                &format!("{name}.{}", format.extension()),
                &table.render(format),
                &mut out,
            )?;
        }
    }
    Ok(out)
}
