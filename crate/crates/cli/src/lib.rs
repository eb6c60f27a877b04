//! `transex` command-line driver. Every subcommand reads one experiment
//! config, applies flag overrides, writes only under `--workspace` and leaves
//! a manifest in `manifests/`.

pub mod server;

use std::collections::BTreeSet;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use transex_core::config::{Augmentation, DefenseKind, ExperimentConfig, Task};
use transex_core::dataset::{load_images, load_paired, load_unpaired, subsample};
use transex_core::defenses::{flip_rate, verify_watermark, PgdParams, PoisonHook, WatermarkHook};
use transex_core::extraction::{
    augment_dataset, evaluate_surrogate, harvest, run_cell, train_surrogate, CellKey, CellMetrics, CellResult,
    EvalSet,
    SurrogateArch, SweepSpec,
};
use transex_core::metrics::{fid, mean_pairwise, psnr, ssim, translate_all, FeatureExtractor, FeatureTable, WindowConfig};
use transex_core::models::{DiscriminatorSpec, GeneratorSpec, Preset, Translator};
use transex_core::par::{self, Exec};
use transex_core::report::{emit_report, read_records, ResultRecord, ResultsStore, VictimRecord};
use transex_core::service::{cost_estimate, BlackBoxService, BudgetPolicy, Usd};
use transex_core::stats::{analyze, ingest_scores, DEFAULT_ALPHA};
use transex_core::synthetic::{Stream, ToyTask};
use transex_core::training::{train_sr_victim, train_unpaired_victim, TrainingLog};
use transex_core::{seed, Error, ImageTensor, PairedDataset, Split};

use crate::server::HttpClient;

pub const SECRET_KEY_ENV: &str = "TRANSEX_SECRET_KEY";
pub const MANIFEST_VERSION: u32 = 1;
pub const FID_EMBEDDING_DIM: usize = 16;
pub const DEFAULT_D_BOUND: f64 = 0.3;

/// Exit status for invalid configuration or overrides.
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_FAILURE: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "transex", version, about = "Model-extraction benchmark for image-translation GANs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PresetArg {
    Tiny,
    Small,
    Full,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Tiny => Preset::Tiny,
            PresetArg::Small => Preset::Small,
            PresetArg::Full => Preset::Full,
        }
    }
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct GlobalArgs {
    /// Experiment config (TOML); defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving every artifact.
    #[arg(long, global = true, default_value = "workspace")]
    #[serde(skip)]
    pub workspace: PathBuf,
    #[arg(long, global = true)]
    pub task: Option<String>,
    /// Comma-separated budget fractions for the sweep.
    #[arg(long, global = true, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Comma-separated augmentations, or `none`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub augment: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub defense: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<PresetArg>,
    /// Watermark key of the service.
    #[arg(long, global = true, env = SECRET_KEY_ENV, hide_env_values = true)]
    #[serde(skip)]
    pub secret_key: Option<String>,
}

#[derive(Subcommand, Clone, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train the victim and store it under `victim/`.
    TrainVictim,
    /// Serve the victim over HTTP until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Query the victim with the adversary's inputs and store the pairs under `harvest/`.
    Harvest {
        /// Remote service; the victim is served in-process when absent.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = "adversary")]
        client: String,
        #[arg(long)]
        model_id: Option<String>,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
    },
    /// Train one surrogate on the harvest and store it with its metrics under `surrogate/`.
    Extract,
    /// Record victim-vs-truth metrics, or compare two image directories.
    Evaluate {
        #[arg(long, requires = "candidate")]
        reference: Option<PathBuf>,
        #[arg(long, requires = "reference")]
        candidate: Option<PathBuf>,
    },
    /// Budget sweep over fractions and repetitions; resumes finished cells.
    Sweep,
    /// Budget sweep once per augmentation, plus the unaugmented baseline.
    AugmentAblation,
    /// Run the configured defense end to end.
    Defend {
        #[arg(long, default_value = "adversary")]
        client: String,
    },
    /// Welch, Cohen's d and TOST on human-study scores.
    Stats {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = DEFAULT_D_BOUND)]
        d_bound: f64,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
    },
    /// Tables, curves and reference values from `results.jsonl`.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainVictim => "train-victim",
            Command::Serve { .. } => "serve",
            Command::Harvest { .. } => "harvest",
            Command::Extract => "extract",
            Command::Evaluate { .. } => "evaluate",
            Command::Sweep => "sweep",
            Command::AugmentAblation => "augment-ablation",
            Command::Defend { .. } => "defend",
            Command::Stats { .. } => "stats",
            Command::Report => "report",
        }
    }
}

/// Exit status for a failed run.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. }) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Loads the config and applies flag overrides, then validates the result.
pub fn effective_config(g: &GlobalArgs) -> transex_core::Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(t) = &g.task {
        cfg.task = t.parse()?;
    }
    if let Some(f) = &g.fractions {
        cfg.sweep.fractions = f.clone();
    }
    if let Some(a) = &g.augment {
        cfg.augmentations = parse_augmentations(a)?;
    }
    if let Some(d) = &g.defense {
        cfg.service.defense = d.parse()?;
    }
    if let Some(p) = g.preset {
        cfg.preset = p.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_augmentations(items: &[String]) -> transex_core::Result<BTreeSet<Augmentation>> {
    items
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty() && *s != "none")
        .map(str::parse)
        .collect()
}

/// Paths inside one workspace.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn victim_generator(&self) -> PathBuf {
        self.root.join("victim/generator")
    }

    pub fn victim_discriminator(&self) -> PathBuf {
        self.root.join("victim/discriminator")
    }

    pub fn harvest(&self) -> PathBuf {
        self.root.join("harvest")
    }

    pub fn surrogate_generator(&self) -> PathBuf {
        self.root.join("surrogate/generator")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.jsonl")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn ledger(&self) -> PathBuf {
        self.root.join("ledger.jsonl")
    }

    pub fn watermark(&self) -> PathBuf {
        self.root.join("watermark")
    }

    pub fn defense(&self) -> PathBuf {
        self.root.join("defense")
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.json"))
    }

    pub fn timings(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.timings.json"))
    }
}

/// Run record without wall-clock data, so identical runs give identical bytes.
#[derive(Serialize)]
struct Manifest<'a> {
    manifest_version: u32,
    subcommand: &'a str,
    seed: u64,
    versions: Versions,
    overrides: &'a GlobalArgs,
    arguments: &'a Command,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct Versions {
    transex: &'static str,
    parallel: bool,
}

#[derive(Serialize)]
struct Timings {
    started_unix_ms: u128,
    wall_seconds: f64,
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = effective_config(&cli.global)?;
    let ws = Workspace::new(&cli.global.workspace);
    fs::create_dir_all(&ws.root).with_context(|| format!("creating {}", ws.root.display()))?;
    let name = cli.command.name();
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        subcommand: name,
        seed: cfg.seed,
        versions: Versions {
            transex: env!("CARGO_PKG_VERSION"),
            parallel: cfg!(feature = "parallel"),
        },
        overrides: &cli.global,
        arguments: &cli.command,
        config: &cfg,
    };
    write_json(&ws.manifest(name), &manifest)?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let clock = Instant::now();
    let ctx = Runner {
        cfg: &cfg,
        ws: &ws,
        secret: cli.global.secret_key.as_deref(),
    };
    let outcome = match &cli.command {
        Command::TrainVictim => ctx.train_victim(),
        Command::Serve { addr } => ctx.serve(*addr),
        Command::Harvest {
            endpoint,
            client,
            model_id,
            parallelism,
        } => ctx.harvest(endpoint.as_deref(), client, model_id.as_deref(), *parallelism),
        Command::Extract => ctx.extract(),
        Command::Evaluate { reference, candidate } => match (reference, candidate) {
            (Some(r), Some(c)) => ctx.compare(r, c),
            _ => ctx.evaluate_victim(),
        },
        Command::Sweep => ctx.sweep(),
        Command::AugmentAblation => ctx.augment_ablation(),
        Command::Defend { client } => ctx.defend(client),
        Command::Stats { scores, d_bound, alpha } => ctx.stats(scores, *d_bound, *alpha),
        Command::Report => ctx.report(),
    };
    write_json(
        &ws.timings(name),
        &Timings {
            started_unix_ms: started.as_millis(),
            wall_seconds: clock.elapsed().as_secs_f64(),
        },
    )?;
    outcome
}

fn require<'a>(path: &'a Option<PathBuf>, field: &str, task: Task) -> transex_core::Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::config(field, format!("required for task `{task}`")))
}

fn surrogate_arch(task: Task) -> SurrogateArch {
    if task.is_super_resolution() {
        SurrogateArch::Srresnet
    } else {
        SurrogateArch::Pix2pix
    }
}

/// Held-out inputs with victim outputs and ground truth.
struct EvalData {
    inputs: Vec<ImageTensor>,
    victim_outputs: Vec<ImageTensor>,
    truth: Vec<ImageTensor>,
    extractor: FeatureExtractor,
}

impl EvalData {
    fn set(&self) -> EvalSet<'_> {
        EvalSet {
            inputs: &self.inputs,
            victim_outputs: &self.victim_outputs,
            truth: &self.truth,
            extractor: &self.extractor,
        }
    }
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    ws: &'a Workspace,
    secret: Option<&'a str>,
}

impl Runner<'_> {
    fn toy(&self) -> ToyTask {
        ToyTask::new(self.cfg.seed, self.cfg.image_size)
    }

    fn task_name(&self) -> String {
        self.cfg.task.to_string()
    }

    fn test_set_name(&self) -> String {
        match &self.cfg.paths.test_data {
            Some(p) => p.display().to_string(),
            None => format!("synthetic-{}", self.cfg.task),
        }
    }

    fn test_pairs(&self) -> transex_core::Result<PairedDataset> {
        let cfg = self.cfg;
        match (&cfg.paths.test_data, cfg.task) {
            (Some(p), _) => load_paired(p, Split::Test),
            (None, Task::Toy) => Ok(self.toy().test_pairs(cfg.sweep.test_size)),
            (None, Task::Superres) => self.toy().super_resolution_pairs(Stream::Test, cfg.sweep.test_size),
            (None, t) => Err(Error::config("paths.test_data", format!("required for task `{t}`"))),
        }
    }

    fn adversary_inputs(&self) -> transex_core::Result<Vec<ImageTensor>> {
        let cfg = self.cfg;
        let n = cfg.sweep.harvest_size;
        match (&cfg.paths.adversary_inputs, cfg.task) {
            (Some(p), _) => Ok(load_images(p)?.into_iter().take(n).collect()),
            (None, Task::Toy) => Ok(self.toy().adversary_inputs(n)),
            (None, Task::Superres) => Ok(self
                .toy()
                .super_resolution_pairs(Stream::Adversary, n)?
                .pairs
                .into_iter()
                .map(|p| p.input)
                .collect()),
            (None, t) => Err(Error::config("paths.adversary_inputs", format!("required for task `{t}`"))),
        }
    }

    fn extractor(&self) -> transex_core::Result<FeatureExtractor> {
        Ok(match &self.cfg.paths.inception_features {
            Some(p) => FeatureExtractor::inception_pool(FeatureTable::load(p)?),
            None => FeatureExtractor::frozen_random(seed::derive(self.cfg.seed, 5), FID_EMBEDDING_DIM),
        })
    }

    fn victim(&self) -> anyhow::Result<GeneratorSpec> {
        let dir = self.ws.victim_generator();
        GeneratorSpec::load(&dir).with_context(|| format!("loading victim from {} (run train-victim first)", dir.display()))
    }

    fn eval_data(&self, victim: &dyn Translator) -> anyhow::Result<EvalData> {
        let test = self.test_pairs()?;
        let inputs: Vec<ImageTensor> = test.inputs().cloned().collect();
        let truth = test.targets().cloned().collect();
        let victim_outputs = translate_all(victim, &inputs)?;
        Ok(EvalData {
            inputs,
            victim_outputs,
            truth,
            extractor: self.extractor()?,
        })
    }

    fn harvested(&self) -> anyhow::Result<PairedDataset> {
        let dir = self.ws.harvest();
        load_paired(&dir, Split::Train).with_context(|| format!("loading harvest from {} (run harvest first)", dir.display()))
    }

    fn store(&self) -> transex_core::Result<ResultsStore> {
        ResultsStore::open(self.ws.results())
    }

    fn train_victim(&self) -> anyhow::Result<()> {
        let cfg = self.cfg;
        let s = seed::derive(cfg.seed, 1);
        let (g, d, log): (GeneratorSpec, DiscriminatorSpec, TrainingLog) = match cfg.task {
            Task::Superres => {
                let pairs = match &cfg.paths.victim_data {
                    Some(p) => load_paired(p, Split::Train)?,
                    None => self.toy().super_resolution_pairs(Stream::VictimContent, cfg.toy_images)?,
                };
                let out = train_sr_victim(&pairs, cfg.preset, &cfg.victim, s)?;
                (out.generator, out.discriminator, out.log)
            }
            task => {
                let data = match task {
                    Task::Toy => self.toy().victim_data(cfg.toy_images),
                    _ => load_unpaired(require(&cfg.paths.victim_data, "paths.victim_data", task)?, Split::Train)?,
                };
                let out = train_unpaired_victim(&data, cfg.preset, &cfg.victim, s)?;
                (out.models.g_ab, out.models.d_b, out.log)
            }
        };
        g.save(self.ws.victim_generator())?;
        d.save(self.ws.victim_discriminator())?;
        log.write_jsonl(self.ws.root.join("victim/training_log.jsonl"))?;
        let last = log.epochs.last().map(|e| e.generator).unwrap_or(f64::NAN);
        println!(
            "victim {} trained: {} epochs, final generator loss {last:.4}, saved to {}",
            cfg.task,
            log.epochs.len(),
            self.ws.victim_generator().display()
        );
        Ok(())
    }

    fn policy(&self) -> transex_core::Result<BudgetPolicy> {
        Ok(BudgetPolicy {
            max_queries: self.cfg.service.max_queries,
            unit_price: Usd::parse(&self.cfg.service.unit_price)?,
        })
    }

    /// The served victim with the configured defense and the workspace ledger.
    fn service(&self) -> anyhow::Result<(Arc<BlackBoxService>, Option<Arc<WatermarkHook>>)> {
        let victim: Arc<dyn Translator> = Arc::new(self.victim()?);
        let mut svc = BlackBoxService::new(victim, self.policy()?)
            .with_model_id(format!("{}-victim", self.cfg.task))
            .with_ledger_file(self.ws.ledger())?;
        let mut watermark = None;
        match self.cfg.service.defense {
            DefenseKind::None => {}
            DefenseKind::Watermark => {
                let key = self
                    .secret
                    .ok_or_else(|| Error::config(SECRET_KEY_ENV, "required when service.defense = watermark"))?;
                let hook = Arc::new(WatermarkHook::new(key.as_bytes(), self.cfg.service.watermark.clone())?);
                svc = svc.with_hook(hook.clone());
                watermark = Some(hook);
            }
            DefenseKind::Poison => {
                let d = DiscriminatorSpec::load(self.ws.victim_discriminator())?;
                svc = svc.with_hook(Arc::new(PoisonHook::new(d, PgdParams::from(&self.cfg.service.pgd))?));
            }
        }
        Ok((Arc::new(svc), watermark))
    }

    fn serve(&self, addr: SocketAddr) -> anyhow::Result<()> {
        let (svc, watermark) = self.service()?;
        let app = server::router(Arc::clone(&svc), self.cfg.service.max_payload_bytes);
        let rt = tokio::runtime::Runtime::new()?;
        rt.block_on(async {
            let listener = tokio::net::TcpListener::bind(addr).await?;
            println!("serving {} on http://{}", svc.model_id(), listener.local_addr()?);
            server::serve(listener, app, async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
        })?;
        if let Some(hook) = watermark {
            let n = hook.export(self.ws.watermark())?;
            println!("exported {n} watermark triggers");
        }
        println!("served {} queries", svc.total_queries());
        Ok(())
    }

    fn harvest(&self, endpoint: Option<&str>, client: &str, model_id: Option<&str>, parallelism: usize) -> anyhow::Result<()> {
        let inputs = self.adversary_inputs()?;
        let dir = self.ws.harvest();
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        let (n, watermark) = match endpoint {
            Some(url) => {
                let mut c = HttpClient::new(url, client);
                if let Some(id) = model_id {
                    c = c.with_model_id(id);
                }
                (harvest(&c, &inputs, parallelism, Some(&dir))?.len(), None)
            }
            None => {
                let (svc, watermark) = self.service()?;
                let c = svc.client(client);
                (harvest(&c, &inputs, parallelism, Some(&dir))?.len(), watermark)
            }
        };
        if let Some(hook) = watermark {
            hook.export(self.ws.watermark())?;
        }
        let cost = cost_estimate(n as u64, &self.policy()?)?;
        println!("harvested {n} pairs as `{client}` into {} (cost {cost})", dir.display());
        Ok(())
    }

    fn extract(&self) -> anyhow::Result<()> {
        let cfg = self.cfg;
        let harvested = self.harvested()?;
        let key = CellKey {
            fraction: cfg.budget_fraction,
            repetition: 0,
            augmentations: cfg.augmentations.clone(),
            seed: seed::derive(cfg.seed, 3),
        };
        let sub = subsample(&harvested, key.fraction, key.seed)?;
        let train = augment_dataset(&sub, &key.augmentations, seed::derive(key.seed, 7))?;
        let out = train_surrogate(&train, surrogate_arch(cfg.task), cfg.preset, &cfg.surrogate, key.seed)?;
        out.generator.save(self.ws.surrogate_generator())?;
        out.log.write_jsonl(self.ws.root.join("surrogate/training_log.jsonl"))?;
        let victim = self.victim()?;
        let eval = self.eval_data(&victim)?;
        let metrics = evaluate_surrogate(&out.generator, &eval.set())?;
        let cell = CellResult {
            key,
            train_pairs: train.len(),
            metrics: Some(metrics),
            error: None,
            final_generator_loss: out.log.epochs.last().map(|e| e.generator),
        };
        write_json(&self.ws.root.join("surrogate/metrics.json"), &cell)?;
        print_metrics("surrogate", &metrics);
        Ok(())
    }

    fn evaluate_victim(&self) -> anyhow::Result<()> {
        let victim = self.victim()?;
        let eval = self.eval_data(&victim)?;
        let w = WindowConfig::default();
        let record = VictimRecord {
            task: self.task_name(),
            test_set: self.test_set_name(),
            seed: self.cfg.seed,
            ssim_vs_truth: mean_pairwise(&eval.victim_outputs, &eval.truth, |a, b| ssim(a, b, &w))?,
            psnr_vs_truth: mean_pairwise(&eval.truth, &eval.victim_outputs, |a, b| psnr(a, b, 1.0))?,
            fid_vs_truth: fid(&eval.victim_outputs, &eval.truth, &eval.extractor)?,
        };
        self.store()?.append(&ResultRecord::Victim(record.clone()))?;
        println!(
            "victim vs truth: SSIM {:.4}, PSNR {:.2} dB, FID {:.4}",
            record.ssim_vs_truth, record.psnr_vs_truth, record.fid_vs_truth
        );
        Ok(())
    }

    /// Pairs two directories by file order and writes `report/evaluation.csv`.
    fn compare(&self, reference: &Path, candidate: &Path) -> anyhow::Result<()> {
        let a = load_images(reference)?;
        let b = load_images(candidate)?;
        if a.len() != b.len() {
            return Err(Error::InvalidArgument(format!(
                "{} has {} images, {} has {}",
                reference.display(),
                a.len(),
                candidate.display(),
                b.len()
            ))
            .into());
        }
        let w = WindowConfig::default();
        let s = mean_pairwise(&b, &a, |x, y| ssim(x, y, &w))?;
        let p = mean_pairwise(&a, &b, |x, y| psnr(x, y, 1.0))?;
        let f = fid(&b, &a, &self.extractor()?)?;
        let path = self.ws.report().join("evaluation.csv");
        fs::create_dir_all(self.ws.report())?;
        let text = format!(
            "reference,candidate,images,ssim,psnr,fid\n{},{},{},{s},{p},{f}\n",
            reference.display(),
            candidate.display(),
            a.len()
        );
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        println!("SSIM {s:.4}, PSNR {p:.2} dB, FID {f:.6} over {} pairs", a.len());
        Ok(())
    }

    fn sweep_spec(&self, augmentations: BTreeSet<Augmentation>) -> SweepSpec {
        let cfg = self.cfg;
        SweepSpec {
            fractions: cfg.sweep.fractions.clone(),
            repetitions: cfg.repetitions,
            augmentations,
            arch: surrogate_arch(cfg.task),
            preset: cfg.preset,
            train: cfg.surrogate.clone(),
            seed: seed::derive(cfg.seed, 17),
        }
    }

    /// Runs the unfinished cells of `spec` in parallel chunks and appends each
    /// chunk in cell order.
    fn run_cells(&self, spec: &SweepSpec, harvested: &PairedDataset, eval: &EvalData) -> anyhow::Result<(usize, usize)> {
        let store = self.store()?;
        let task = self.task_name();
        let test_set = self.test_set_name();
        let done = store.completed_cells(&task)?;
        let todo: Vec<CellKey> = spec.cells().into_iter().filter(|k| !done.contains(k)).collect();
        let set = eval.set();
        let width = std::thread::available_parallelism().map_or(1, |n| n.get());
        for chunk in todo.chunks(width) {
            for cell in par::map(Exec::default(), chunk, |key| run_cell(harvested, spec, key, &set)) {
                if let Some(e) = &cell.error {
                    eprintln!("cell fraction {} repetition {} failed: {e}", cell.key.fraction, cell.key.repetition);
                }
                store.append(&ResultRecord::Cell {
                    task: task.clone(),
                    test_set: test_set.clone(),
                    cell,
                })?;
            }
        }
        Ok((todo.len(), spec.cells().len() - todo.len()))
    }

    fn sweep(&self) -> anyhow::Result<()> {
        let harvested = self.harvested()?;
        let victim = self.victim()?;
        let eval = self.eval_data(&victim)?;
        let (ran, skipped) = self.run_cells(&self.sweep_spec(self.cfg.augmentations.clone()), &harvested, &eval)?;
        println!("sweep: {ran} cells run, {skipped} already complete");
        self.report()
    }

    fn augment_ablation(&self) -> anyhow::Result<()> {
        let harvested = self.harvested()?;
        let victim = self.victim()?;
        let eval = self.eval_data(&victim)?;
        let candidates: Vec<Augmentation> = if self.cfg.augmentations.is_empty() {
            Augmentation::ALL.to_vec()
        } else {
            self.cfg.augmentations.iter().copied().collect()
        };
        let mut variants = vec![BTreeSet::new()];
        for a in candidates {
            if a == Augmentation::Cutout && self.cfg.task.is_super_resolution() {
                continue;
            }
            variants.push(BTreeSet::from([a]));
        }
        for v in variants {
            let (ran, skipped) = self.run_cells(&self.sweep_spec(v.clone()), &harvested, &eval)?;
            println!(
                "augmentation {}: {ran} cells run, {skipped} already complete",
                transex_core::report::augmentation_label(&v)
            );
        }
        self.report()
    }

    fn defend(&self, client: &str) -> anyhow::Result<()> {
        let cfg = self.cfg;
        if cfg.service.defense == DefenseKind::None {
            return Err(Error::config("service.defense", "defend needs `watermark` or `poison`").into());
        }
        let (svc, watermark) = self.service()?;
        let inputs = self.adversary_inputs()?;
        let dir = self.ws.defense();
        let harvest_dir = dir.join("harvest");
        if harvest_dir.exists() {
            fs::remove_dir_all(&harvest_dir)?;
        }
        let harvested = harvest(&svc.client(client), &inputs, 4, Some(&harvest_dir))?;
        let s = seed::derive(cfg.seed, 3);
        let surrogate = train_surrogate(&harvested, surrogate_arch(cfg.task), cfg.preset, &cfg.surrogate, s)?.generator;
        let victim = self.victim()?;
        match watermark {
            Some(hook) => {
                let n = hook.export(dir.join("watermark"))?;
                let triggers = hook.trigger_set(client);
                let wm = hook.config();
                let report = if triggers.is_empty() {
                    None
                } else {
                    Some(verify_watermark(&surrogate, &triggers, wm.ssim_threshold, wm.match_threshold)?)
                };
                let control = verify_watermark(&victim, &triggers, wm.ssim_threshold, wm.match_threshold).ok();
                write_json(
                    &dir.join("watermark.json"),
                    &serde_json::json!({
                        "client_id": client,
                        "triggers_issued": n,
                        "surrogate": report,
                        "unmarked_victim": control,
                    }),
                )?;
                match report {
                    Some(r) => println!(
                        "watermark: {n} triggers, surrogate match rate {:.2}, theft detected: {}",
                        r.match_rate, r.theft_detected
                    ),
                    None => println!("watermark: no triggers issued to `{client}`"),
                }
            }
            None => {
                let d = DiscriminatorSpec::load(self.ws.victim_discriminator())?;
                let clean = translate_all(&victim, &inputs)?;
                let poisoned: Vec<ImageTensor> = harvested.targets().cloned().collect();
                let cond = d.conditional.then_some(inputs.as_slice());
                let flips = flip_rate(&d, cond, &clean, &poisoned)?;
                let eval = self.eval_data(&victim)?;
                let metrics = evaluate_surrogate(&surrogate, &eval.set())?;
                write_json(
                    &dir.join("poison.json"),
                    &serde_json::json!({
                        "client_id": client,
                        "queries": harvested.len(),
                        "victim_discriminator_flip_rate": flips,
                        "surrogate": metrics,
                    }),
                )?;
                println!("poison: discriminator flip rate {flips:.2}");
                print_metrics("poisoned surrogate", &metrics);
            }
        }
        Ok(())
    }

    fn stats(&self, scores: &Path, d_bound: f64, alpha: f64) -> anyhow::Result<()> {
        let samples = ingest_scores(scores)?;
        let results = analyze(&samples, d_bound, alpha)?;
        if results.is_empty() {
            return Err(Error::InsufficientData("no task has both victim and surrogate scores".into()).into());
        }
        write_json(&self.ws.root.join("stats.json"), &results)?;
        for r in &results {
            let tost = r
                .tost
                .map(|t| format!("TOST p {:.3e} (reject non-equivalence: {})", t.p_tost, t.reject_nonequivalence))
                .unwrap_or_else(|| "TOST undefined".into());
            println!(
                "{}: Welch t {:.3}, p {:.3e}, d {}, {tost}",
                r.task,
                r.welch.t_statistic,
                r.welch.p_value,
                r.cohens_d.map_or("undefined".into(), |d| format!("{d:.3}"))
            );
        }
        Ok(())
    }

    fn report(&self) -> anyhow::Result<()> {
        let records = read_records(self.ws.results())?;
        let files = emit_report(&records, self.ws.report())?;
        println!("report written to {}", files.table_csv.parent().unwrap_or(Path::new(".")).display());
        print!("{}", fs::read_to_string(&files.table_md)?);
        Ok(())
    }
}

fn print_metrics(label: &str, m: &CellMetrics) {
    println!(
        "{label}: proxy SSIM {:.4}, PSNR vs victim {:.2} dB, FID vs victim {:.4}, SSIM vs truth {:.4}",
        m.proxy_ssim, m.psnr_vs_victim, m.fid_vs_victim, m.ssim_vs_truth
    );
}
