//! Decoy-process and obfuscation defense experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{
    attributes_of, ArchTemplate, Attribute, AttributeVector, Catalog, FunctionCode,
};
use crate::recon::{extract_attributes, identify, reconstruct, split_queries, Candidate};
use crate::rng::derive_seed;
use crate::trace::{
    emit_trace, merge_decoy, obfuscate, observe, DecoySpec, GroundTruthTrace, Mode, NoiseModel,
    ObfuscationSpec,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub per_run: Vec<AttributeVector>,
    pub errors: Vec<f64>,
    /// Ground-truth event count of each run's single-query trace.
    pub events: Vec<usize>,
    pub mean: AttributeVector,
    pub mean_error: f64,
    pub mean_events: f64,
}

impl RunStats {
    fn new(per_run: Vec<AttributeVector>, events: Vec<usize>, truth: &AttributeVector) -> Self {
        let errors: Vec<f64> = per_run.iter().map(|v| v.l1_error(truth)).collect();
        let n = per_run.len() as f64;
        RunStats {
            mean: AttributeVector::mean(&per_run),
            mean_error: errors.iter().sum::<f64>() / n,
            mean_events: events.iter().sum::<usize>() as f64 / n,
            per_run,
            errors,
            events,
        }
    }

    /// Standard error of the mean of one attribute across runs.
    pub fn standard_error(&self, a: Attribute) -> f64 {
        let n = self.per_run.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean.get(a);
        let var = self
            .per_run
            .iter()
            .map(|v| (v.get(a) - m).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        (var / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseReport {
    pub arch: String,
    pub defense: String,
    pub runs: usize,
    pub seed: u64,
    pub truth: AttributeVector,
    pub defended: RunStats,
    pub baseline: RunStats,
    /// Best catalog match for each defended run's reconstructed structure.
    pub identified: Vec<Candidate>,
}

impl DefenseReport {
    pub fn denominator(&self) -> f64 {
        self.truth.total()
    }

    /// Whether the defense leaves attribute `a` within three combined
    /// standard errors of the baseline.
    pub fn within_baseline_noise(&self, a: Attribute) -> bool {
        let diff = (self.defended.mean.get(a) - self.baseline.mean.get(a)).abs();
        let se = (self.defended.standard_error(a).powi(2)
            + self.baseline.standard_error(a).powi(2))
        .sqrt();
        if se == 0.0 {
            diff == 0.0
        } else {
            diff <= 3.0 * se
        }
    }
}

struct RunOutcome {
    defended: AttributeVector,
    defended_events: usize,
    baseline: AttributeVector,
    baseline_events: usize,
    top: Candidate,
}

fn first_query(
    trace: &GroundTruthTrace,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Vec<FunctionCode>> {
    let obs = observe(trace, noise, seed);
    Ok(split_queries(&obs)?.swap_remove(0))
}

fn run_all(
    victim: &ArchTemplate,
    defense: String,
    runs: usize,
    seed: u64,
    catalog: &Catalog,
    run: impl Fn(u64) -> Result<RunOutcome> + Sync,
) -> Result<DefenseReport> {
    if runs == 0 {
        return Err(Error::contract("runs must be at least 1"));
    }
    if catalog.is_empty() {
        return Err(Error::contract("catalog is empty"));
    }
    let outcomes = (0..runs as u64)
        .into_par_iter()
        .map(|r| run(derive_seed(seed, r)))
        .collect::<Result<Vec<_>>>()?;
    let truth = attributes_of(victim);
    let defended = RunStats::new(
        outcomes.iter().map(|o| o.defended).collect(),
        outcomes.iter().map(|o| o.defended_events).collect(),
        &truth,
    );
    let baseline = RunStats::new(
        outcomes.iter().map(|o| o.baseline).collect(),
        outcomes.iter().map(|o| o.baseline_events).collect(),
        &truth,
    );
    Ok(DefenseReport {
        arch: victim.name.clone(),
        defense,
        runs,
        seed,
        truth,
        defended,
        baseline,
        identified: outcomes.into_iter().map(|o| o.top).collect(),
    })
}

fn top_candidate(seq: &[FunctionCode], catalog: &Catalog) -> Result<Candidate> {
    Ok(identify(&reconstruct(seq), catalog)?.swap_remove(0))
}

/// Run `runs` single-query victim inferences alongside the decoy. Run `r`
/// uses stream `s = derive_seed(seed, r)`: the decoy is merged with
/// `derive_seed(s, 0)` and observed with `derive_seed(s, 1)`; the baseline is
/// the undefended trace observed with the same `derive_seed(s, 1)`.
pub fn eval_decoy(
    victim: &ArchTemplate,
    decoy: &DecoySpec,
    runs: usize,
    noise: &NoiseModel,
    seed: u64,
    catalog: &Catalog,
) -> Result<DefenseReport> {
    decoy.validate()?;
    noise.validate()?;
    let trace = emit_trace(victim, 1, Mode::Inference, None)?;
    let name = format!("decoy {} x{}", decoy.name().replace(',', " "), decoy.rate);
    run_all(victim, name, runs, seed, catalog, |s| {
        let merged = merge_decoy(&trace, decoy, derive_seed(s, 0))?;
        let defended = first_query(&merged, noise, derive_seed(s, 1))?;
        let baseline = first_query(&trace, noise, derive_seed(s, 1))?;
        Ok(RunOutcome {
            defended: extract_attributes(&defended),
            defended_events: merged.events.len(),
            baseline: extract_attributes(&baseline),
            baseline_events: trace.events.len(),
            top: top_candidate(&defended, catalog)?,
        })
    })
}

/// Obfuscate the victim once (insertion positions drawn from `seed`), then
/// run as in [`eval_decoy`], comparing against the original ground truth.
pub fn eval_obfuscation(
    victim: &ArchTemplate,
    spec: &ObfuscationSpec,
    runs: usize,
    noise: &NoiseModel,
    seed: u64,
    catalog: &Catalog,
) -> Result<DefenseReport> {
    noise.validate()?;
    let obfuscated = obfuscate(victim, spec, seed)?;
    let trace = emit_trace(victim, 1, Mode::Inference, None)?;
    let defended_trace = emit_trace(&obfuscated, 1, Mode::Inference, None)?;
    run_all(victim, spec.to_string(), runs, seed, catalog, |s| {
        let defended = first_query(&defended_trace, noise, derive_seed(s, 1))?;
        let baseline = first_query(&trace, noise, derive_seed(s, 1))?;
        Ok(RunOutcome {
            defended: extract_attributes(&defended),
            defended_events: defended_trace.events.len(),
            baseline: extract_attributes(&baseline),
            baseline_events: trace.events.len(),
            top: top_candidate(&defended, catalog)?,
        })
    })
}
