use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use trustvote::ingest::{DomainMode, PostKind};
use trustvote::pipeline::{self, AtStage, Pipeline, PipelineConfig, Stage, StageError};
use trustvote::projection::TailMethod;
use trustvote::synth::{self, SyntheticSpec};
use trustvote::voters::StrategyKind;

#[derive(Parser)]
#[command(name = "trustvote", version, about = "Publisher trustworthiness from user-URL sharing networks")]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load posts and knowledge base, write the interaction table.
    Ingest(RunArgs),
    /// Fit the bipartite null model.
    Solve(RunArgs),
    /// Test URL pairs and keep the FDR-validated network.
    Validate(RunArgs),
    /// Detect URL communities and write summary and purity tables.
    Communities(RunArgs),
    /// Characterize voters for every strategy and diet threshold.
    Voters(RunArgs),
    /// Score publishers, cross-validate and rank unclassified publishers.
    Classify(RunArgs),
    /// Run every stage, then write figure tables and the report.
    Run(RunArgs),
    /// Generate a planted two-block corpus.
    Synth(SynthArgs),
    /// Write figure tables for a completed run directory.
    Figures {
        /// Run directory.
        run: PathBuf,
    },
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML configuration file; flags below override its values.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    posts: Option<PathBuf>,
    #[arg(long = "kb")]
    knowledge_base: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Comma-separated post kinds entering the corpus.
    #[arg(long, value_delimiter = ',')]
    include_kinds: Option<Vec<PostKind>>,
    #[arg(long, value_parser = parse_domain_mode)]
    domain_mode: Option<DomainMode>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_tail_method)]
    tail_method: Option<TailMethod>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    louvain_seed: Option<u64>,
    #[arg(long)]
    resolution: Option<f64>,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<StrategyKind>>,
    #[arg(long)]
    theta_min: Option<usize>,
    #[arg(long)]
    theta_max: Option<usize>,
    #[arg(long)]
    report_theta: Option<usize>,
    #[arg(long)]
    cv_folds: Option<usize>,
    #[arg(long)]
    cv_seed: Option<u64>,
    #[arg(long)]
    null_permutations: Option<usize>,
    #[arg(long)]
    exclude_self_votes: Option<bool>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for posts.jsonl, knowledge_base.csv, truth.csv and config.toml.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    users_per_block: Option<usize>,
    #[arg(long)]
    publishers_per_pool: Option<usize>,
    #[arg(long)]
    urls_per_publisher: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    unc_fraction: Option<f64>,
    #[arg(long)]
    retweet_rate: Option<f64>,
    #[arg(long)]
    quote_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_domain_mode(s: &str) -> Result<DomainMode, String> {
    match s {
        "host" => Ok(DomainMode::Host),
        "registrable" => Ok(DomainMode::Registrable),
        _ => Err(format!("expected host or registrable, got {s:?}")),
    }
}

fn parse_tail_method(s: &str) -> Result<TailMethod, String> {
    match s {
        "exact" => Ok(TailMethod::Exact),
        "poisson" => Ok(TailMethod::Poisson),
        _ => Err(format!("expected exact or poisson, got {s:?}")),
    }
}

macro_rules! overlay {
    ($target:expr, $($field:ident),*) => {
        $(if let Some(v) = $field { $target = v; })*
    };
}

impl RunArgs {
    fn into_config(self) -> trustvote::Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        let RunArgs {
            config: _,
            posts,
            knowledge_base,
            output,
            include_kinds,
            domain_mode,
            alpha,
            tail_method,
            tol,
            max_iter,
            louvain_seed,
            resolution,
            strategies,
            theta_min,
            theta_max,
            report_theta,
            cv_folds,
            cv_seed,
            null_permutations,
            exclude_self_votes,
        } = self;
        overlay!(c.posts, posts);
        overlay!(c.knowledge_base, knowledge_base);
        overlay!(c.output, output);
        overlay!(c.include_kinds, include_kinds);
        overlay!(c.domain_mode, domain_mode);
        overlay!(c.alpha, alpha);
        overlay!(c.tail_method, tail_method);
        overlay!(c.solver.tol, tol);
        overlay!(c.solver.max_iter, max_iter);
        overlay!(c.louvain.seed, louvain_seed);
        overlay!(c.louvain.resolution, resolution);
        overlay!(c.strategies, strategies);
        overlay!(c.theta_min, theta_min);
        overlay!(c.theta_max, theta_max);
        overlay!(c.report_theta, report_theta);
        overlay!(c.cv_folds, cv_folds);
        overlay!(c.cv_seed, cv_seed);
        overlay!(c.null_permutations, null_permutations);
        overlay!(c.exclude_self_votes, exclude_self_votes);
        Ok(c)
    }
}

impl SynthArgs {
    fn spec(&self) -> SyntheticSpec {
        let mut s = SyntheticSpec::default();
        let SynthArgs {
            out: _,
            users_per_block,
            publishers_per_pool,
            urls_per_publisher,
            p_in,
            p_out,
            unc_fraction,
            retweet_rate,
            quote_rate,
            seed,
        } = *self;
        overlay!(s.users_per_block, users_per_block);
        overlay!(s.publishers_per_pool, publishers_per_pool);
        overlay!(s.urls_per_publisher, urls_per_publisher);
        overlay!(s.p_in, p_in);
        overlay!(s.p_out, p_out);
        overlay!(s.unc_fraction, unc_fraction);
        overlay!(s.retweet_rate, retweet_rate);
        overlay!(s.quote_rate, quote_rate);
        overlay!(s.seed, seed);
        s
    }
}

fn synth_command(args: &SynthArgs) -> Result<(), StageError> {
    let spec = args.spec();
    let out = &args.out;
    std::fs::create_dir_all(out)
        .map_err(|e| trustvote::Error::Io { path: out.clone(), source: e })
        .at(Stage::Synth)?;
    let corpus = synth::generate_synthetic(&spec).at(Stage::Synth)?;
    corpus.write_posts(out.join("posts.jsonl")).at(Stage::Synth)?;
    corpus.write_knowledge_base(out.join("knowledge_base.csv")).at(Stage::Synth)?;
    corpus.write_truth(out.join("truth.csv")).at(Stage::Synth)?;
    let config = PipelineConfig {
        posts: "posts.jsonl".into(),
        knowledge_base: "knowledge_base.csv".into(),
        output: "run".into(),
        ..Default::default()
    };
    let text = config.to_toml().at(Stage::Synth)?;
    std::fs::write(out.join("config.toml"), text)
        .map_err(|e| trustvote::Error::Io { path: out.join("config.toml"), source: e })
        .at(Stage::Synth)?;
    println!(
        "wrote {} posts, {} publishers ({} withheld) to {}",
        corpus.posts.len(),
        corpus.publishers.len(),
        corpus.publishers.iter().filter(|p| p.withheld).count(),
        out.display()
    );
    Ok(())
}

/// Relative input and output paths in a config file resolve against the
/// file's directory.
fn anchor_paths(config: &mut PipelineConfig, base: &Path) {
    for p in [&mut config.posts, &mut config.knowledge_base, &mut config.output] {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

fn stage_command(args: RunArgs, last: Stage) -> Result<(), StageError> {
    let base = args
        .config
        .as_ref()
        .and_then(|p| p.parent())
        .map(Path::to_path_buf);
    let (posts, kb, out) = (args.posts.is_some(), args.knowledge_base.is_some(), args.output.is_some());
    let mut config = args.into_config().at(Stage::Config)?;
    if let Some(base) = base {
        let original = config.clone();
        anchor_paths(&mut config, &base);
        // paths given on the command line stay relative to the working directory
        if posts {
            config.posts = original.posts;
        }
        if kb {
            config.knowledge_base = original.knowledge_base;
        }
        if out {
            config.output = original.output;
        }
    }
    let pipeline = Pipeline::new(config)?;
    if last == Stage::Figures {
        let report = pipeline.run()?;
        println!(
            "run {} complete: {} validated edges, {} NECs -> {}",
            &report.config_hash[..12],
            report.validation.n_edges,
            report.nec.n_communities,
            pipeline.run_dir().display()
        );
        for s in &report.strategies {
            match &s.cv {
                Some(cv) => println!(
                    "  {:<18} voters {:>6}  balanced accuracy {:.3} +/- {:.3}",
                    s.strategy.to_string(),
                    s.n_voters,
                    cv.mean_balanced_accuracy,
                    cv.std_balanced_accuracy
                ),
                None => println!("  {:<18} voters {:>6}  not evaluable", s.strategy.to_string(), s.n_voters),
            }
        }
        return Ok(());
    }
    pipeline.run_until(last)?;
    println!("{} done -> {}", last, pipeline.run_dir().display());
    Ok(())
}

fn dispatch(command: Command) -> Result<(), StageError> {
    match command {
        Command::Ingest(a) => stage_command(a, Stage::Ingest),
        Command::Solve(a) => stage_command(a, Stage::Solve),
        Command::Validate(a) => stage_command(a, Stage::Validate),
        Command::Communities(a) => stage_command(a, Stage::Communities),
        Command::Voters(a) => stage_command(a, Stage::Voters),
        Command::Classify(a) => stage_command(a, Stage::Classify),
        Command::Run(a) => stage_command(a, Stage::Figures),
        Command::Synth(a) => synth_command(&a),
        Command::Figures { run } => {
            let files = pipeline::emit_figures(&run).at(Stage::Figures)?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
