//! `archspy` command-line front end.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use archspy_core::calibrate::{calibrate_noise, master_seeds, Calibration};
use archspy_core::catalog::{attributes_of, build_catalog, Catalog};
use archspy_core::config::Defaults;
use archspy_core::defense::{eval_decoy, eval_obfuscation};
use archspy_core::fingerprint::{
    build_dataset, fit_tree, mutual_information, pca, relabel, train_tree, Dataset, Task,
};
use archspy_core::pipeline::{render_tables, run_pipeline};
use archspy_core::probe::{classify_latency, histogram_csv, otsu_threshold, parse_samples, Access};
use archspy_core::recon::{
    attack_report_long, attack_report_short, detect_freeze, identify, reconstruct, split_queries,
    AttackMode,
};
use archspy_core::report::{
    defense_table, extraction_table, fingerprint_table, pca_table, structure_table, Format, Table,
};
use archspy_core::rng::derive_seed;
use archspy_core::trace::{
    emit_trace, merge_decoy, obfuscate, observe, DecoySpec, Mode, NoiseModel, ObfuscationSpec,
    Observation,
};
use archspy_core::tracefile::{self, TraceDoc};
use archspy_core::{Error, VERSION};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "archspy",
    version,
    about = "DNN architecture extraction through cache side channels"
)]
struct Cli {
    /// Defaults file to use instead of the shipped one.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one defaults key, e.g. `--set p_miss=0.02`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for batch work. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Channel {
    #[arg(long)]
    seed: Option<u64>,
    /// Miss probability per victim event.
    #[arg(long)]
    p_miss: Option<f64>,
    /// Spurious hit rates per query, e.g. `CONV:0.2;MERGE:0.1`.
    #[arg(long, value_name = "RATES")]
    spurious: Option<String>,
    /// Perfect channel: no misses, no spurious hits.
    #[arg(long, conflicts_with_all = ["p_miss", "spurious"])]
    noiseless: bool,
}

#[derive(Args, Clone)]
struct Output {
    /// Output file; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, default_value = "md", value_parser = parse_format)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a victim trace and observe it through the channel.
    Simulate {
        #[arg(long)]
        arch: String,
        #[arg(long, default_value_t = 1)]
        queries: usize,
        #[arg(long, default_value = "inference")]
        mode: Mode,
        /// Frozen leading bias layers (training mode).
        #[arg(long)]
        frozen_prefix: Option<usize>,
        /// Write the ground-truth trace instead of an observation.
        #[arg(long)]
        ground_truth: bool,
        /// Co-run a TinyNet decoy, e.g. `C:1,R:1`.
        #[arg(long, value_name = "LAYERS")]
        decoy: Option<String>,
        #[arg(long)]
        decoy_rate: Option<f64>,
        /// Obfuscate the victim, e.g. `unravel:3` or `insert:5xconv`.
        #[arg(long, value_name = "SPEC")]
        obfuscate: Option<ObfuscationSpec>,
        #[command(flatten)]
        channel: Channel,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Pass a ground-truth trace file through the channel.
    Observe {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[command(flatten)]
        channel: Channel,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Per-query attribute counts from observations.
    Extract {
        /// Observation files. Short mode reads the first query of each of ten.
        #[arg(long, value_name = "PATH", required = true)]
        input: Vec<PathBuf>,
        #[arg(long, default_value = "L")]
        mode: AttackMode,
        /// Score against the catalog entry named in the file header.
        #[arg(long)]
        truth: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Recover the block structure of one query and rank catalog matches.
    Reconstruct {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        query: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Detect the frozen layer prefix from a training-mode observation.
    Freeze {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Victim architecture; defaults to the file header.
        #[arg(long)]
        arch: Option<String>,
        #[command(flatten)]
        output: Output,
    },
    /// Train and cross-validate decision trees on attribute vectors.
    Fingerprint {
        #[arg(long, default_value = "all13")]
        task: Task,
        #[arg(long)]
        per_arch_n: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        /// Use this dataset CSV instead of simulating one.
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        save_dataset: Option<PathBuf>,
        /// Write a tree fitted to the whole dataset.
        #[arg(long, value_name = "PATH")]
        save_tree: Option<PathBuf>,
        /// Write the PCA loadings table.
        #[arg(long, value_name = "PATH")]
        pca: Option<PathBuf>,
        #[command(flatten)]
        channel: Channel,
        #[command(flatten)]
        output: Output,
    },
    /// Measure how well decoys or obfuscation hide the victim.
    Defend {
        #[arg(long, default_value = "ResNet50")]
        arch: String,
        /// TinyNet layers, e.g. `C:1,R:1`. Repeatable.
        #[arg(long, value_name = "LAYERS")]
        decoy: Vec<String>,
        #[arg(long)]
        decoy_rate: Option<f64>,
        /// `unravel:K` or `insert:NxKIND`. Repeatable.
        #[arg(long, value_name = "SPEC")]
        obfuscate: Vec<ObfuscationSpec>,
        #[arg(long)]
        runs: Option<usize>,
        #[command(flatten)]
        channel: Channel,
        #[command(flatten)]
        output: Output,
    },
    /// Calibrate the probe threshold or the channel noise.
    Calibrate {
        #[command(subcommand)]
        what: CalibrateCommand,
    },
    /// Run every experiment into a directory, or re-render its tables.
    Report {
        #[arg(long, value_name = "DIR")]
        dir: PathBuf,
        /// Only rebuild `DIR/tables` from the stored artifacts.
        #[arg(long)]
        render_only: bool,
        #[arg(long, value_parser = parse_format)]
        format: Vec<Format>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum CalibrateCommand {
    /// Otsu hit/miss threshold from reload latencies, one per line.
    Otsu {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        histogram: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Grid search for p_miss and spurious rates.
    Noise {
        #[arg(long, default_value_t = 20)]
        masters: u64,
        /// Write the defaults with the chosen channel applied.
        #[arg(long, value_name = "PATH")]
        write_config: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse()
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = Result<(), Failure>;

fn write_out(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::from(e).in_file(p).into()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_doc(path: &Path) -> Result<TraceDoc, Failure> {
    Ok(tracefile::read(path)?)
}

fn read_observation(path: &Path) -> Result<Observation, Failure> {
    Ok(read_doc(path)?.into_observation())
}

impl Channel {
    fn apply(&self, d: &mut Defaults) -> Result<(), Failure> {
        if let Some(s) = self.seed {
            d.seed = s;
        }
        if let Some(p) = self.p_miss {
            d.p_miss = p;
        }
        if let Some(r) = &self.spurious {
            d.spurious = NoiseModel::parse_rates(r).map_err(Failure::Usage)?;
        }
        Ok(())
    }

    fn noise(&self, d: &Defaults) -> Result<NoiseModel, Failure> {
        if self.noiseless {
            Ok(NoiseModel::noiseless())
        } else {
            Ok(d.noise()?)
        }
    }
}

fn noise_meta(t: Table, noise: &NoiseModel) -> Table {
    t.meta("p_miss", noise.p_miss)
        .meta("rates", noise.rates_string())
}

fn channel_meta(t: Table, seed: u64, noise: &NoiseModel) -> Table {
    noise_meta(t.meta("seed", seed), noise)
}

fn load_defaults(cli: &Cli) -> Result<Defaults, Failure> {
    let mut d = match &cli.config {
        Some(p) => Defaults::load(p)?,
        None => Defaults::shipped(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        d.set(k.trim(), v.trim()).map_err(Failure::Usage)?;
    }
    Ok(d)
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    }
    let mut defaults = load_defaults(&cli)?;
    let catalog = build_catalog();
    match cli.command {
        Command::Simulate {
            arch,
            queries,
            mode,
            frozen_prefix,
            ground_truth,
            decoy,
            decoy_rate,
            obfuscate: obf,
            channel,
            out,
        } => {
            channel.apply(&mut defaults)?;
            let seed = defaults.seed;
            let mut template = catalog.get(&arch)?.clone();
            if let Some(spec) = &obf {
                template = obfuscate(&template, spec, seed)?;
            }
            let mut trace = emit_trace(&template, queries, mode, frozen_prefix)?;
            if let Some(spec) = &obf {
                trace.notes.push(("obfuscation".into(), spec.to_string()));
            }
            if let Some(layers) = &decoy {
                let spec = DecoySpec::parse(layers, decoy_rate.unwrap_or(defaults.decoy_rate))?;
                trace = merge_decoy(&trace, &spec, derive_seed(seed, 0))?;
            }
            let text = if ground_truth {
                tracefile::write_trace(&trace)
            } else {
                let noise = channel.noise(&defaults)?;
                tracefile::write_observation(&observe(&trace, &noise, seed))
            };
            write_out(out.as_deref(), &text)
        }
        Command::Observe {
            input,
            channel,
            out,
        } => {
            channel.apply(&mut defaults)?;
            let trace = match read_doc(&input)? {
                TraceDoc::Trace(t) => t,
                TraceDoc::Observation(_) => {
                    return Err(Error::contract("input is already an observation")
                        .in_file(&input)
                        .into())
                }
            };
            let noise = channel.noise(&defaults)?;
            let obs = observe(&trace, &noise, defaults.seed);
            write_out(out.as_deref(), &tracefile::write_observation(&obs))
        }
        Command::Extract {
            input,
            mode,
            truth,
            output,
        } => {
            let obs = input
                .iter()
                .map(|p| read_observation(p))
                .collect::<Result<Vec<_>, _>>()?;
            let g = if truth {
                let arch = obs[0].arch.as_deref().ok_or_else(|| {
                    Error::contract("--truth needs an arch header in the input").in_file(&input[0])
                })?;
                Some(attributes_of(catalog.get(arch)?))
            } else {
                None
            };
            let report = match mode {
                AttackMode::Short => attack_report_short(&obs, g.as_ref())?,
                AttackMode::Long => attack_report_long(&obs[0], g.as_ref())?,
            };
            let seeds = obs
                .iter()
                .map(|o| o.seed.to_string())
                .collect::<Vec<_>>()
                .join(";");
            let t = extraction_table("Observed attributes", &[report]).meta("seed", seeds);
            let t = noise_meta(t, &obs[0].noise);
            write_out(output.out.as_deref(), &t.render(output.format))
        }
        Command::Reconstruct {
            input,
            query,
            output,
        } => {
            let obs = read_observation(&input)?;
            let queries = split_queries(&obs)?;
            let seq = queries.get(query).ok_or_else(|| {
                Error::contract(format!(
                    "query {query} requested, observation has {}",
                    queries.len()
                ))
                .in_file(&input)
            })?;
            let structure = reconstruct(seq);
            let ranked = identify(&structure, &catalog)?;
            let title = format!(
                "Reconstruction of {}",
                obs.arch.as_deref().unwrap_or("unknown victim")
            );
            let t = channel_meta(
                structure_table(&title, &structure, &ranked),
                obs.seed,
                &obs.noise,
            )
            .meta("query", query);
            write_out(output.out.as_deref(), &t.render(output.format))
        }
        Command::Freeze {
            input,
            arch,
            output,
        } => {
            let obs = read_observation(&input)?;
            let name = arch
                .or_else(|| obs.arch.clone())
                .ok_or_else(|| Failure::Usage("no arch header in the input; pass --arch".into()))?;
            let r = detect_freeze(&obs, catalog.get(&name)?)?;
            let mut t = Table::new(
                "Frozen layer detection",
                &[
                    "network",
                    "queries",
                    "mean grads",
                    "updated layers",
                    "frozen prefix",
                ],
            );
            t.push(vec![
                r.arch.clone(),
                r.queries.to_string(),
                format!("{:.2}", r.mean_grads),
                r.updated_layers.to_string(),
                r.frozen_prefix.to_string(),
            ]);
            let t = channel_meta(t, obs.seed, &obs.noise);
            write_out(output.out.as_deref(), &t.render(output.format))
        }
        Command::Fingerprint {
            task,
            per_arch_n,
            folds,
            dataset,
            save_dataset,
            save_tree,
            pca: pca_out,
            channel,
            output,
        } => {
            channel.apply(&mut defaults)?;
            if let Some(n) = per_arch_n {
                defaults.per_arch_n = n;
            }
            if let Some(f) = folds {
                defaults.folds = f;
            }
            let seed = defaults.seed;
            let noise = channel.noise(&defaults)?;
            let base = match &dataset {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::from(e).in_file(p))?;
                    Dataset::from_csv(&text).map_err(|e| e.in_file(p))?
                }
                None => build_dataset(&catalog, defaults.per_arch_n, &noise, seed)?,
            };
            if let Some(p) = &save_dataset {
                write_out(Some(p), &base.to_csv())?;
            }
            let d = if base.task == task {
                base
            } else {
                relabel(&base, task, &catalog)?
            };
            let (_, cv) = train_tree(&d, defaults.folds, seed)?;
            let mi = mutual_information(&d)?;
            if let Some(p) = &save_tree {
                write_out(Some(p), &fit_tree(&d, seed)?.to_text())?;
            }
            if let Some(p) = &pca_out {
                let t = pca_table("Attribute loadings per principal axis", &pca(&d)?)
                    .meta("seed", seed);
                write_out(Some(p), &t.render(output.format))?;
            }
            let mut t = fingerprint_table("Decision-tree fingerprinting", &[(cv, mi)])
                .meta("folds", defaults.folds);
            t = match &dataset {
                Some(p) => t.meta("seed", seed).meta("dataset", p.display()),
                None => channel_meta(t, seed, &noise).meta("per_arch_n", defaults.per_arch_n),
            };
            write_out(output.out.as_deref(), &t.render(output.format))
        }
        Command::Defend {
            arch,
            decoy,
            decoy_rate,
            obfuscate: specs,
            runs,
            channel,
            output,
        } => {
            channel.apply(&mut defaults)?;
            if decoy.is_empty() && specs.is_empty() {
                return Err(Failure::Usage(
                    "defend needs at least one --decoy or --obfuscate".into(),
                ));
            }
            let runs = runs.unwrap_or(defaults.runs);
            let rate = decoy_rate.unwrap_or(defaults.decoy_rate);
            let seed = defaults.seed;
            let noise = channel.noise(&defaults)?;
            let victim = catalog.get(&arch)?;
            let mut reports = Vec::new();
            for layers in &decoy {
                let spec = DecoySpec::parse(layers, rate)?;
                reports.push(eval_decoy(victim, &spec, runs, &noise, seed, &catalog)?);
            }
            for spec in &specs {
                reports.push(eval_obfuscation(
                    victim, spec, runs, &noise, seed, &catalog,
                )?);
            }
            // the defense table already records runs and seed
            let t = noise_meta(defense_table("Defense evaluation", &reports), &noise);
            write_out(output.out.as_deref(), &t.render(output.format))
        }
        Command::Calibrate { what } => calibrate(what, &defaults, &catalog),
        Command::Report {
            dir,
            render_only,
            format,
            seed,
        } => {
            if let Some(s) = seed {
                defaults.seed = s;
            }
            let formats = if format.is_empty() {
                vec![Format::Markdown, Format::Csv]
            } else {
                format
            };
            let written = if render_only {
                render_tables(&dir, &formats)?
            } else {
                run_pipeline(&dir, &defaults)?
            };
            for p in written {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn calibrate(what: CalibrateCommand, defaults: &Defaults, catalog: &Catalog) -> Outcome {
    match what {
        CalibrateCommand::Otsu {
            input,
            histogram,
            output,
        } => {
            let text =
                std::fs::read_to_string(&input).map_err(|e| Error::from(e).in_file(&input))?;
            let samples = parse_samples(&text).map_err(|e| e.in_file(&input))?;
            let threshold = otsu_threshold(&samples).map_err(|e| e.in_file(&input))?;
            if let Some(p) = &histogram {
                write_out(Some(p), &histogram_csv(&samples))?;
            }
            let hits = samples
                .iter()
                .filter(|&&s| classify_latency(s, threshold) == Access::Hit)
                .count();
            let mut t = Table::new(
                "Probe threshold",
                &["samples", "threshold", "hits", "misses"],
            )
            .meta("input", input.display());
            t.push(vec![
                samples.len().to_string(),
                threshold.to_string(),
                hits.to_string(),
                (samples.len() - hits).to_string(),
            ]);
            write_out(output.out.as_deref(), &t.render(output.format))
        }
        CalibrateCommand::Noise {
            masters,
            write_config,
            output,
        } => {
            let cal = calibrate_noise(catalog, &master_seeds(masters))?;
            if let Some(p) = &write_config {
                let pt = cal.chosen_point().ok_or_else(|| {
                    Error::Degenerate("no grid point falls inside both bands".into())
                })?;
                let mut d = defaults.clone();
                d.p_miss = pt.p_miss;
                d.spurious = pt.noise().spurious;
                write_out(Some(p), &d.to_text())?;
            }
            write_out(
                output.out.as_deref(),
                &grid_table(&cal).render(output.format),
            )
        }
    }
}

fn grid_table(cal: &Calibration) -> Table {
    let mut t = Table::new(
        "Channel calibration grid",
        &[
            "p_miss", "MERGE", "CONV", "VGG19", "ResNet50", "in bands", "chosen",
        ],
    )
    .meta("masters", cal.masters);
    for (i, p) in cal.points.iter().enumerate() {
        t.push(vec![
            p.p_miss.to_string(),
            p.merge_rate.to_string(),
            p.conv_rate.to_string(),
            format!("{:.2}", p.vgg19_error),
            format!("{:.2}", p.resnet50_error),
            p.in_bands().to_string(),
            (cal.chosen == Some(i)).to_string(),
        ]);
    }
    t
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("archspy: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("archspy {VERSION}: {e}");
            ExitCode::from(2)
        }
    }
}
