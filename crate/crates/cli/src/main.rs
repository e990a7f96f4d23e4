use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use asr_router::config::{ConfigError, QeSource, RunConfig, CONFIG_ENV};
use asr_router::datamodel::{load_dataset, split_dataset, DataError, Dataset, SystemProfile};
use asr_router::ensemble::{write_decisions, EnsembleError, RescoreMode, RouterModel, TrainingInfo};
use asr_router::features::{read_wav, signal_properties, FeatureSchema, SignalError, WavError};
use asr_router::hpo::{search, write_trial_log, Budget, CvConfig, HpoError};
use asr_router::labeling::Weighting;
use asr_router::modelio::ModelIoError;
use asr_router::pipeline::{
    ablation_table, evaluation_table, importance_report, pair_table, rescore_all, route_records,
    PairVariant, PipelineError, Policy, LABEL_AUTOMODE, LABEL_RESCORING, LABEL_WEIGHTS,
};
use asr_router::synth::{synthesize_dataset, SynthConfig};
use asr_router::training::{add_system, train_router};

#[derive(Parser)]
#[command(name = "asr-router", version, about = "Pick an ASR system per audio segment")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// HPO budget: a trial count ("20") or wall-clock seconds ("300s"). Enables HPO.
    #[arg(long, global = true)]
    budget: Option<String>,
    #[arg(long, global = true)]
    pivot: Option<String>,
    /// Dataset file; overrides the config.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the router and write a per-pair validation report.
    Train {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare the router with baseline policies on the test split.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Evaluate on every record instead of the test split.
        #[arg(long)]
        all: bool,
    },
    /// Write a decisions file for every record of the dataset.
    Route {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train and evaluate one router per feature-group combination.
    Ablate,
    /// Mean feature importance of the router's classifiers.
    Importance {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
    /// Train one classifier for a new system and add it to a router.
    AddSystem {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Id of the new system; its profile comes from the config unless rates are given.
        #[arg(long)]
        system: String,
        #[arg(long)]
        cost_rate: Option<f64>,
        #[arg(long)]
        latency_rate: Option<f64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a planted-rule dataset and a matching run config.
    Synth {
        /// Generator config (JSON); defaults to the four-system preset.
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long)]
        output: PathBuf,
        /// Where to write a run config pointing at the new dataset.
        #[arg(long)]
        config_out: Option<PathBuf>,
    },
    /// Signal properties of WAV files as JSON lines.
    Features {
        #[arg(required = true)]
        wavs: Vec<PathBuf>,
    },
}

/// Marks an error as the caller's fault (exit code 2).
#[derive(Debug)]
struct UserError(String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn is_user_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<UserError>()
            || c.is::<ConfigError>()
            || c.is::<DataError>()
            || c.is::<ModelIoError>()
            || c.is::<WavError>()
            || c.is::<SignalError>()
            || matches!(
                c.downcast_ref::<HpoError>(),
                Some(HpoError::BadK(_) | HpoError::FoldTooSmall { .. } | HpoError::Space(_) | HpoError::Budget)
            )
            || matches!(
                c.downcast_ref::<EnsembleError>(),
                Some(
                    EnsembleError::SchemaMismatch { .. }
                        | EnsembleError::DuplicateChallenger(_)
                        | EnsembleError::PivotMismatch { .. }
                        | EnsembleError::MissingTranscription { .. }
                        | EnsembleError::Features(_)
                        | EnsembleError::Qe(_)
                )
            )
            || matches!(c.downcast_ref::<PipelineError>(), Some(PipelineError::Invalid(_)))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_user_error(&e) { 2 } else { 1 })
        }
    }
}

fn user(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UserError(msg.into()))
}

fn parse_budget(s: &str) -> Result<Budget> {
    let parsed = match s.strip_suffix('s') {
        Some(secs) => secs.parse::<f64>().ok().map(Budget::WallClock),
        None => s.parse::<usize>().ok().map(Budget::Trials),
    };
    parsed.ok_or_else(|| user(format!("bad --budget '{s}': use a trial count or seconds like 300s")))
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(p) = &g.pivot {
        cfg.pivot = Some(p.clone());
    }
    if let Some(b) = &g.budget {
        cfg.hpo.enabled = true;
        cfg.hpo.budget = parse_budget(b)?;
    }
    if let Some(d) = &g.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(o) = &g.out_dir {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    let systems = cfg.validate()?;
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| user("no dataset given (--dataset or config \"dataset\")"))?;
    Ok(load_dataset(path, &systems)?)
}

fn model_path(cfg: &RunConfig, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| cfg.model.clone())
        .unwrap_or_else(|| cfg.output_dir.join("model.json"))
}

fn load_model(path: &Path) -> Result<RouterModel> {
    if !path.exists() {
        return Err(user(format!("model file not found: {}", path.display())));
    }
    Ok(RouterModel::load(path)?)
}

fn write(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            generator,
            n,
            noise,
            output,
            config_out,
        } => cmd_synth(&cli.global, generator, n, noise, &output, config_out),
        Command::Features { wavs } => cmd_features(&wavs),
        cmd => {
            let cfg = load_config(&cli.global)?;
            match cmd {
                Command::Train { model } => cmd_train(&cfg, &model_path(&cfg, &model)),
                Command::Evaluate { model, all } => cmd_evaluate(&cfg, &model_path(&cfg, &model), all),
                Command::Route { model, output } => cmd_route(&cfg, &model_path(&cfg, &model), &output),
                Command::Ablate => cmd_ablate(&cfg),
                Command::Importance { model, top } => cmd_importance(&cfg, &model_path(&cfg, &model), top),
                Command::AddSystem {
                    model,
                    system,
                    cost_rate,
                    latency_rate,
                    output,
                } => cmd_add_system(&cfg, &model_path(&cfg, &model), &system, cost_rate, latency_rate, &output),
                Command::Synth { .. } | Command::Features { .. } => unreachable!(),
            }
        }
    }
}

fn splits(cfg: &RunConfig, ds: &Dataset) -> Result<(Dataset, Dataset, Dataset)> {
    Ok(split_dataset(ds, cfg.split, cfg.seed)?)
}

fn cmd_train(cfg: &RunConfig, model_out: &Path) -> Result<()> {
    let ds = dataset(cfg)?;
    let (train, valid, _) = splits(cfg, &ds)?;
    if train.is_empty() || valid.is_empty() {
        return Err(user("train and validation splits must be non-empty"));
    }
    let schema = FeatureSchema::for_records(&train.schema, &train.records, cfg.features);
    let mut report = String::new();
    let hyperparams = if cfg.hpo.enabled {
        let cv = CvConfig {
            k: cfg.hpo.folds,
            weighting: cfg.weighting(),
            objective: cfg.hpo.objective,
            seed: cfg.seed,
        };
        let result = search(&train, &cfg.hpo.space, &schema, &cv, cfg.hpo.budget)?;
        let mut log = Vec::new();
        write_trial_log(&result, &mut log)?;
        write(&cfg.output_dir, "trial_log.jsonl", &String::from_utf8(log)?)?;
        if let Some(w) = &result.warning {
            eprintln!("warning: {w}");
        }
        report.push_str(&format!(
            "# hpo: {} trials, best cv WER reduction {} points\n# hyperparams: {}\n",
            result.trials.len(),
            result
                .best_objective
                .map_or("n/a".to_string(), |o| format!("{o:.4}")),
            serde_json::to_string(&result.best)?
        ));
        result.best
    } else {
        cfg.hyperparams
    };
    let info = |weighting| TrainingInfo {
        hyperparams,
        weighting,
        seed: cfg.seed,
    };
    let plain = train_router(&train, &schema, &info(Weighting::Uniform))?;
    let weighted = match cfg.weighting() {
        Weighting::Uniform => None,
        w => Some(train_router(&train, &schema, &info(w))?),
    };
    let qe = match &cfg.qe {
        Some(src) => Some(src.build(&valid)?),
        None => None,
    };
    let mut variants = vec![PairVariant {
        label: LABEL_AUTOMODE.into(),
        router: &plain,
        rescore: None,
    }];
    if let Some(w) = &weighted {
        variants.push(PairVariant {
            label: LABEL_WEIGHTS.into(),
            router: w,
            rescore: None,
        });
    }
    if let Some(qe) = &qe {
        variants.push(PairVariant {
            label: LABEL_RESCORING.into(),
            router: weighted.as_ref().unwrap_or(&plain),
            rescore: Some(qe.as_ref()),
        });
    }
    let table = pair_table(&valid, &variants, cfg.threshold)?;
    let model = weighted.as_ref().unwrap_or(&plain);
    if let Some(dir) = model_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    model.save(model_out)?;
    report.push_str(&table.render());
    let path = write(&cfg.output_dir, "train_report.txt", &report)?;
    write(
        &cfg.output_dir,
        "train_report.json",
        &(serde_json::to_string_pretty(&table)? + "\n"),
    )?;
    print!("{report}");
    eprintln!("model: {}\nreport: {}", model_out.display(), path.display());
    Ok(())
}

fn check_systems(model: &RouterModel, ds: &Dataset) -> Result<()> {
    if model.systems != ds.systems {
        return Err(user(format!(
            "model systems {:?} differ from configured systems {:?}",
            model.systems.ids(),
            ds.systems.ids()
        )));
    }
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, model_path: &Path, all: bool) -> Result<()> {
    let model = load_model(model_path)?;
    let ds = dataset(cfg)?;
    check_systems(&model, &ds)?;
    let test = if all { ds } else { splits(cfg, &ds)?.2 };
    if test.is_empty() {
        return Err(user("evaluation split is empty"));
    }
    let decisions = route_records(&model, &test.records, cfg.threshold)?;
    let label = if model.training.weighting.is_weighted() {
        LABEL_WEIGHTS
    } else {
        LABEL_AUTOMODE
    };
    let mut policies = vec![Policy::from_decisions(label, &decisions, Default::default())];
    if cfg.rescoring != RescoreMode::Off {
        let src = cfg.qe.as_ref().expect("validated");
        let qe = src.build(&test)?;
        let rescored = rescore_all(&model, &decisions, &test, qe.as_ref(), cfg.rescoring)?;
        policies.push(Policy::from_decisions(LABEL_RESCORING, &rescored, cfg.rescore_overhead));
    }
    let table = evaluation_table(&test, &policies)?;
    let text = table.render();
    write(&cfg.output_dir, "evaluation.txt", &text)?;
    write(&cfg.output_dir, "evaluation.json", &table.to_json())?;
    print!("{text}");
    Ok(())
}

fn cmd_route(cfg: &RunConfig, model_path: &Path, output: &Path) -> Result<()> {
    let model = load_model(model_path)?;
    let ds = dataset(cfg)?;
    check_systems(&model, &ds)?;
    let mut decisions = route_records(&model, &ds.records, cfg.threshold)?;
    if cfg.rescoring != RescoreMode::Off {
        let qe = cfg.qe.as_ref().expect("validated").build(&ds)?;
        decisions = rescore_all(&model, &decisions, &ds, qe.as_ref(), cfg.rescoring)?;
    }
    let mut buf = Vec::new();
    write_decisions(&decisions, &mut buf)?;
    fs::write(output, buf).with_context(|| format!("writing {}", output.display()))?;
    eprintln!("{} decisions written to {}", decisions.len(), output.display());
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    let (train, _, test) = splits(cfg, &ds)?;
    if cfg.ablation.is_empty() {
        return Err(user("no ablation combinations configured"));
    }
    let info = TrainingInfo {
        hyperparams: cfg.hyperparams,
        weighting: cfg.weighting(),
        seed: cfg.seed,
    };
    let qe = match (&cfg.qe, cfg.rescoring) {
        (Some(src), mode) if mode != RescoreMode::Off => Some(src.build(&test)?),
        _ => None,
    };
    let rescore = qe.as_ref().map(|q| (q.as_ref(), cfg.rescoring));
    let (table, _) = ablation_table(&train, &test, &cfg.ablation, &info, cfg.threshold, rescore)?;
    let text = table.render();
    write(&cfg.output_dir, "ablation.txt", &text)?;
    write(
        &cfg.output_dir,
        "ablation.json",
        &(serde_json::to_string_pretty(&table)? + "\n"),
    )?;
    print!("{text}");
    Ok(())
}

fn cmd_importance(cfg: &RunConfig, model_path: &Path, top: usize) -> Result<()> {
    let model = load_model(model_path)?;
    let report = importance_report(&model).map_err(|e| user(format!("{}: {e}", model_path.display())))?;
    let text = report.render(top);
    write(&cfg.output_dir, "importance.txt", &text)?;
    write(&cfg.output_dir, "importance.csv", &report.to_csv())?;
    write(
        &cfg.output_dir,
        "importance.json",
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    print!("{text}");
    Ok(())
}

fn cmd_add_system(
    cfg: &RunConfig,
    model_path: &Path,
    system: &str,
    cost_rate: Option<f64>,
    latency_rate: Option<f64>,
    output: &Path,
) -> Result<()> {
    let model = load_model(model_path)?;
    let profile = match (cost_rate, latency_rate) {
        (Some(c), Some(l)) => SystemProfile::new(system, c, l, false),
        (None, None) => cfg
            .systems
            .iter()
            .find(|s| s.id == system)
            .cloned()
            .map(|mut p| {
                p.is_pivot = false;
                p
            })
            .ok_or_else(|| user(format!("system '{system}' is not in the config; pass --cost-rate and --latency-rate")))?,
        _ => bail!(UserError("give both --cost-rate and --latency-rate".into())),
    };
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| user("no dataset given (--dataset or config \"dataset\")"))?;
    let systems = model.systems.with_challenger(profile.clone())?;
    let ds = load_dataset(path, &systems)?;
    let train = splits(cfg, &ds)?.0;
    let updated = add_system(&model, profile, &train)?;
    updated.save(output)?;
    eprintln!(
        "added '{system}': {} classifiers, written to {}",
        updated.classifiers.len(),
        output.display()
    );
    Ok(())
}

fn cmd_synth(
    g: &Global,
    generator: Option<PathBuf>,
    n: usize,
    noise: f64,
    output: &Path,
    config_out: Option<PathBuf>,
) -> Result<()> {
    let gen = match &generator {
        Some(p) => {
            if !p.exists() {
                return Err(user(format!("file not found: {}", p.display())));
            }
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| user(format!("invalid generator config {}: {e}", p.display())))?
        }
        None => SynthConfig::four_system(n, noise),
    };
    let ds = synthesize_dataset(&gen, g.seed.unwrap_or(0))?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ds.save(output)?;
    if let Some(cfg_path) = config_out {
        let cfg = RunConfig {
            dataset: Some(output.to_path_buf()),
            systems: ds.systems.all().to_vec(),
            qe: Some(QeSource::Oracle),
            seed: g.seed.unwrap_or(0),
            ..Default::default()
        };
        fs::write(&cfg_path, serde_json::to_string_pretty(&cfg)? + "\n")
            .with_context(|| format!("writing {}", cfg_path.display()))?;
    }
    eprintln!("{} records written to {}", ds.len(), output.display());
    Ok(())
}

fn cmd_features(wavs: &[PathBuf]) -> Result<()> {
    const NAMES: [&str; 6] = [
        "duration_s",
        "rms_energy",
        "zero_crossing_rate",
        "peak_amplitude",
        "silence_ratio",
        "spectral_centroid_proxy",
    ];
    for p in wavs {
        let (pcm, rate) = read_wav(p).with_context(|| format!("reading {}", p.display()))?;
        let props = signal_properties(&pcm, rate).with_context(|| format!("analysing {}", p.display()))?;
        let mut obj = serde_json::Map::new();
        obj.insert("file".into(), p.display().to_string().into());
        for (name, v) in NAMES.iter().zip(props) {
            obj.insert((*name).into(), v.into());
        }
        obj.insert("signal_props".into(), props.to_vec().into());
        println!("{}", serde_json::Value::Object(obj));
    }
    Ok(())
}
