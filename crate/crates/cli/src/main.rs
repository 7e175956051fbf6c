use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use poincare_music::eval::{euclidean_baseline_train, evaluate_reconstruction, permutation_test};
use poincare_music::graph::{EntityId, EntityKind};
use poincare_music::pipeline::{self, PipelineConfig, Stage};
use poincare_music::recommend::{recommend, Query};

#[derive(Parser)]
#[command(name = "poincare-music", version, about = "Hyperbolic music-entity embeddings from play logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one prior per station.
    FitPriors(PipelineArgs),
    /// Score station children with cached priors.
    Score(PipelineArgs),
    /// Select top-quantile links, add dimensional links and prune.
    BuildLinks(PipelineArgs),
    /// Train embeddings on the cached link list.
    Train(PipelineArgs),
    /// Run every stage, optionally starting later with cached artifacts.
    Run {
        #[command(flatten)]
        args: PipelineArgs,
        #[arg(long, value_parser = parse_stage, default_value = "fit-priors")]
        from: Stage,
    },
    /// Nearest entities of one kind to a set of seeds.
    Recommend(RecommendArgs),
    /// Reconstruction metrics of an embedding against a link list.
    Eval(EvalArgs),
    /// Permutation test for a difference of group means.
    Permtest(PermArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    spins: Option<PathBuf>,
    #[arg(long)]
    completions: Option<PathBuf>,
    #[arg(long)]
    dims: Option<PathBuf>,
    #[arg(long = "output-dir", short)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    max_days_presented: Option<u64>,
    #[arg(long)]
    score_quantile: Option<f64>,
    #[arg(long)]
    quartile_level: Option<f64>,
    #[arg(long)]
    min_links: Option<usize>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    burn_in_epochs: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainArgs {
    fn apply(&self, t: &mut poincare_music::poincare::TrainConfig) {
        set(&mut t.rank, self.rank);
        set(&mut t.epochs, self.epochs);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.burn_in_epochs, self.burn_in_epochs);
        set(&mut t.negatives_per_positive, self.negatives);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.threads, self.threads);
        set(&mut t.rng_seed, self.seed);
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

impl PipelineArgs {
    fn config(&self) -> anyhow::Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::from_json_file(p).with_context(|| format!("[config] reading {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        set(&mut c.spins, self.spins.clone());
        set(&mut c.completions, self.completions.clone());
        set(&mut c.dims, self.dims.clone());
        set(&mut c.output_dir, self.output_dir.clone());
        set(&mut c.max_days_presented, self.max_days_presented);
        set(&mut c.score_quantile, self.score_quantile);
        set(&mut c.quartile_level, self.quartile_level);
        set(&mut c.min_links, self.min_links);
        self.train.apply(&mut c.train);
        Ok(c)
    }
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Seed entity as kind:key; repeat for several.
    #[arg(long = "seed", required = true)]
    seeds: Vec<EntityId>,
    #[arg(long, value_parser = parse_kind, default_value = "track")]
    kind: EntityKind,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    include_seeds: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    links: PathBuf,
    /// Also train and score the cosine baseline on the same links.
    #[arg(long)]
    baseline: bool,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct PermArgs {
    /// Comma-separated values, or a file with one value per line.
    #[arg(long)]
    a: String,
    #[arg(long)]
    b: String,
    #[arg(long, default_value_t = 10_000)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Include every permutation difference in the output.
    #[arg(long)]
    full: bool,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse().map_err(|e: poincare_music::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<EntityKind, String> {
    s.parse().map_err(|e: poincare_music::Error| e.to_string())
}

fn read_values(arg: &str) -> anyhow::Result<Vec<f64>> {
    let text = if Path::new(arg).is_file() {
        std::fs::read_to_string(arg)?
    } else {
        arg.replace(',', "\n")
    };
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<f64>().with_context(|| format!("bad value {l:?}")))
        .collect()
}

fn stages(args: &PipelineArgs, from: Stage, to: Stage, out: &mut impl Write) -> anyhow::Result<()> {
    let manifest = pipeline::run_stages(&args.config()?, from, to)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    let mut out = io::stdout().lock();
    match command {
        Command::FitPriors(a) => stages(&a, Stage::FitPriors, Stage::FitPriors, &mut out)?,
        Command::Score(a) => stages(&a, Stage::Score, Stage::Score, &mut out)?,
        Command::BuildLinks(a) => stages(&a, Stage::BuildLinks, Stage::BuildLinks, &mut out)?,
        Command::Train(a) => stages(&a, Stage::Train, Stage::Train, &mut out)?,
        Command::Run { args, from } => stages(&args, from, Stage::Train, &mut out)?,
        Command::Recommend(a) => {
            let table = pipeline::read_embeddings(&a.embeddings).context("[recommend] loading embeddings")?;
            let mut query = Query::new(a.seeds, a.kind, a.k).context("[recommend] query")?;
            query.exclude_seeds = !a.include_seeds;
            for r in recommend(&table, &query).context("[recommend] query")? {
                serde_json::to_writer(&mut out, &r)?;
                writeln!(out)?;
            }
        }
        Command::Eval(a) => {
            let table = pipeline::read_embeddings(&a.embeddings).context("[eval] loading embeddings")?;
            let graph = pipeline::read_graph(&a.links).context("[eval] loading links")?;
            let mut reports = vec![evaluate_reconstruction(&table, &graph).context("[eval] embeddings")?];
            if a.baseline {
                let mut config = poincare_music::poincare::TrainConfig {
                    rank: table.rank(),
                    ..Default::default()
                };
                a.train.apply(&mut config);
                let (baseline, _) = euclidean_baseline_train(&graph, &config).context("[eval] baseline")?;
                reports.push(evaluate_reconstruction(&baseline, &graph).context("[eval] baseline")?);
            }
            for r in reports {
                serde_json::to_writer(&mut out, &r)?;
                writeln!(out)?;
            }
        }
        Command::Permtest(a) => {
            let x = read_values(&a.a).context("[permtest] group a")?;
            let y = read_values(&a.b).context("[permtest] group b")?;
            let result = permutation_test(&x, &y, a.permutations, a.seed).context("[permtest] groups")?;
            let mut value = serde_json::to_value(&result)?;
            value["permutations"] = a.permutations.into();
            value["seed"] = a.seed.into();
            if !a.full {
                value.as_object_mut().expect("object").remove("permutation_diffs");
            }
            writeln!(out, "{value}")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
