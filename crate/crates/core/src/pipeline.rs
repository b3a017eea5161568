//! End-to-end runs: configuration, stage execution with cached solver and
//! validation results, persisted artifacts, figure tables and the JSON
//! report.
//!
//! Run directory layout:
//!
//! ```text
//! run/
//!   manifest.json  report.json  config.toml
//!   ingest/       corpus.json interactions.csv
//!   bicm/         model.csv model.json
//!   validation/   edges.csv metadata.json
//!   nec/          partition.csv summary.csv purity.csv
//!   voters/       <STRATEGY>_theta<NN>.csv
//!   classify/     sweep.csv coverage.csv cv.json scores_<STRATEGY>.csv worthy_<STRATEGY>.csv
//!   figures/      fig2_purity.csv ... fig6_knowledge.csv
//! ```
//!
//! Every stage directory carries a `stage.json` with the config hash and the
//! cache key of its inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bicm::{self, BicmMetadata, BicmModel, BipartiteGraph, SolverOptions};
use crate::classify::{self, CoverageReport, CvReport, NullControl, PublisherScore, ScoringOptions, WorthyEntry};
use crate::error::{Error, Result};
use crate::ingest::{self, Corpus, DomainMode, KnowledgeBase, PostKind, TrustLabel};
use crate::nec::{self, LouvainOptions, NecSummary, Partition, PurityRow};
use crate::projection::{self, TailMethod, ValidatedNetwork, ValidationMetadata};
use crate::voters::{self, StrategyKind, VoterProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub posts: PathBuf,
    pub knowledge_base: PathBuf,
    pub output: PathBuf,
    pub include_kinds: Vec<PostKind>,
    pub domain_mode: DomainMode,
    pub alpha: f64,
    pub tail_method: TailMethod,
    pub solver: SolverOptions,
    pub louvain: LouvainOptions,
    pub strategies: Vec<StrategyKind>,
    pub theta_min: usize,
    pub theta_max: usize,
    /// Diet threshold used for scores, coverage table, CV report and worthy lists.
    pub report_theta: usize,
    pub cv_folds: usize,
    pub cv_seed: u64,
    /// Label permutations for the null control; 0 disables it.
    pub null_permutations: usize,
    pub exclude_self_votes: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            posts: PathBuf::from("posts.jsonl"),
            knowledge_base: PathBuf::from("knowledge_base.csv"),
            output: PathBuf::from("run"),
            include_kinds: PostKind::default_included().into_iter().collect(),
            domain_mode: DomainMode::Host,
            alpha: 0.05,
            tail_method: TailMethod::Exact,
            solver: SolverOptions::default(),
            louvain: LouvainOptions::default(),
            strategies: StrategyKind::ALL.to_vec(),
            theta_min: 0,
            theta_max: 30,
            report_theta: 0,
            cv_folds: 10,
            cv_seed: 42,
            null_permutations: 100,
            exclude_self_votes: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return bad("solver tol and max_iter must be positive".into());
        }
        if !(self.louvain.resolution > 0.0) {
            return bad("louvain resolution must be positive".into());
        }
        if self.theta_min > self.theta_max {
            return bad(format!("theta range {}..={} is empty", self.theta_min, self.theta_max));
        }
        if !(self.theta_min..=self.theta_max).contains(&self.report_theta) {
            return bad(format!("report_theta {} outside the sweep", self.report_theta));
        }
        if self.strategies.is_empty() {
            return bad("no strategies selected".into());
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2".into());
        }
        if self.include_kinds.contains(&PostKind::Quote) {
            return bad("quote posts cannot be included".into());
        }
        Ok(())
    }

    /// SHA-256 of the configuration, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn thetas(&self) -> std::ops::RangeInclusive<usize> {
        self.theta_min..=self.theta_max
    }

    fn strategies(&self) -> Vec<StrategyKind> {
        let set: BTreeSet<StrategyKind> = self.strategies.iter().copied().collect();
        set.into_iter().collect()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Ingest,
    Solve,
    Validate,
    Communities,
    Voters,
    Classify,
    Figures,
    Synth,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Solve => "solve",
            Stage::Validate => "validate",
            Stage::Communities => "communities",
            Stage::Voters => "voters",
            Stage::Classify => "classify",
            Stage::Figures => "figures",
            Stage::Synth => "synth",
        }
    }

    /// Process exit code reported when this stage fails.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 10,
            Stage::Ingest => 11,
            Stage::Solve => 12,
            Stage::Validate => 13,
            Stage::Communities => 14,
            Stage::Voters => 15,
            Stage::Classify => 16,
            Stage::Figures => 17,
            Stage::Synth => 18,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {error}")]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(f)?)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStamp {
    pub stage: Stage,
    pub config_hash: String,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub posts_sha256: String,
    pub knowledge_base_sha256: String,
    pub n_posts: usize,
    pub malformed_posts: usize,
    pub skipped_urls: usize,
    pub n_users: usize,
    pub n_articles: usize,
    pub n_publishers: usize,
    pub n_interactions: usize,
    pub n_share_events: usize,
    pub kb_entries: usize,
    pub kb_duplicates: usize,
    /// Corpus publishers per label, in T, N, UNC order.
    pub publishers_by_label: BTreeMap<TrustLabel, usize>,
}

pub struct Ingested {
    pub corpus: Corpus,
    pub kb: KnowledgeBase,
    pub summary: IngestSummary,
}

pub struct Solved {
    pub graph: BipartiteGraph,
    pub model: BicmModel,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: usize,
    pub mean: f64,
    pub std: f64,
}

/// One (strategy, theta) point of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: StrategyKind,
    pub theta: usize,
    pub n_voters: usize,
    pub n_valued: usize,
    pub n_scored: usize,
    pub covered_t: usize,
    pub universe_t: usize,
    pub covered_n: usize,
    pub universe_n: usize,
    pub covered_unc: usize,
    pub universe_unc: usize,
    pub covered: usize,
    pub cv_folds: Option<usize>,
    pub ba_mean: Option<f64>,
    pub ba_std: Option<f64>,
    pub knowledge: usize,
}

impl SweepRow {
    pub fn coverage(&self, label: TrustLabel) -> (usize, usize) {
        match label {
            TrustLabel::T => (self.covered_t, self.universe_t),
            TrustLabel::N => (self.covered_n, self.universe_n),
            TrustLabel::Unc => (self.covered_unc, self.universe_unc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyReport {
    pub strategy: StrategyKind,
    pub theta: usize,
    pub n_voters: usize,
    pub n_valued: usize,
    pub coverage: CoverageReport,
    pub cv: Option<CvReport>,
    pub cv_error: Option<String>,
    pub null_control: Option<NullControl>,
    pub stump: Option<classify::Stump>,
    pub n_scored: usize,
    pub worthy: Vec<WorthyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NecReport {
    pub n_communities: usize,
    pub n_unclustered: usize,
    pub modularity: f64,
    pub pass_modularity: Vec<f64>,
    pub summary: Vec<NecSummary>,
    pub purity: Vec<PurityRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub config_hash: String,
    pub ingest: IngestSummary,
    pub bicm: BicmMetadata,
    pub validation: ValidationMetadata,
    pub nec: NecReport,
    pub strategies: Vec<StrategyReport>,
    pub sweep: Vec<SweepRow>,
}

pub struct Pipeline {
    config: PipelineConfig,
    hash: String,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> StageResult<Self> {
        config.validate().at(Stage::Config)?;
        let hash = config.hash();
        Ok(Pipeline { config, hash })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn run_dir(&self) -> &Path {
        &self.config.output
    }

    fn stage_dir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.config.output.join(name);
        create_dir(&dir)?;
        Ok(dir)
    }

    fn stamp(&self, dir: &Path, stage: Stage, key: &str) -> Result<()> {
        write_json(
            &dir.join("stage.json"),
            &StageStamp {
                stage,
                config_hash: self.hash.clone(),
                key: key.to_string(),
            },
        )
    }

    fn cached(&self, dir: &Path, key: &str, files: &[&str]) -> bool {
        let Ok(stamp) = read_json::<StageStamp>(&dir.join("stage.json")) else {
            return false;
        };
        stamp.key == key && files.iter().all(|f| dir.join(f).is_file())
    }

    fn write_manifest(&self) -> Result<()> {
        create_dir(&self.config.output)?;
        fs::write(self.config.output.join("config.toml"), self.config.to_toml()?)
            .map_err(|e| Error::io(self.config.output.join("config.toml"), e))?;
        let manifest = serde_json::json!({
            "config_hash": self.hash,
            "config": self.config,
        });
        write_json(&self.config.output.join("manifest.json"), &manifest)
    }

    fn solve_key(&self, ingest: &IngestSummary) -> String {
        let c = &self.config;
        sha256_hex(
            serde_json::json!({
                "posts": ingest.posts_sha256,
                "include_kinds": c.include_kinds.iter().collect::<BTreeSet<_>>(),
                "domain_mode": c.domain_mode,
                "solver": c.solver,
            })
            .to_string()
            .as_bytes(),
        )
    }

    fn validate_key(&self, ingest: &IngestSummary) -> String {
        let c = &self.config;
        sha256_hex(
            serde_json::json!({
                "solve": self.solve_key(ingest),
                "alpha": c.alpha,
                "tail_method": c.tail_method,
            })
            .to_string()
            .as_bytes(),
        )
    }

    pub fn ingest(&self) -> StageResult<Ingested> {
        self.write_manifest().at(Stage::Ingest)?;
        self.ingest_inner().at(Stage::Ingest)
    }

    fn ingest_inner(&self) -> Result<Ingested> {
        let c = &self.config;
        let kb = KnowledgeBase::load(&c.knowledge_base)?;
        let loaded = ingest::load_posts(&c.posts)?;
        let kinds: BTreeSet<PostKind> = c.include_kinds.iter().copied().collect();
        let corpus = Corpus::build_with(&loaded.posts, &kinds, c.domain_mode);
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let publishers = corpus.publishers();
        let publishers_by_label = TrustLabel::ALL
            .iter()
            .map(|&l| (l, publishers.iter().filter(|p| kb.label(p) == l).count()))
            .collect();
        let summary = IngestSummary {
            posts_sha256: file_digest(&c.posts)?,
            knowledge_base_sha256: file_digest(&c.knowledge_base)?,
            n_posts: loaded.posts.len(),
            malformed_posts: loaded.malformed,
            skipped_urls: corpus.skipped_urls(),
            n_users: corpus.n_users(),
            n_articles: corpus.n_articles(),
            n_publishers: publishers.len(),
            n_interactions: corpus.n_interactions(),
            n_share_events: corpus.share_events().len(),
            kb_entries: kb.len(),
            kb_duplicates: kb.duplicates(),
            publishers_by_label,
        };

        let dir = self.stage_dir("ingest")?;
        write_json(&dir.join("corpus.json"), &summary)?;
        let path = dir.join("interactions.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["user_id", "url", "domain", "kb_label"])?;
        for (user, url, domain) in corpus.interactions() {
            w.write_record([user, url, domain, &kb.label(domain).to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.stamp(&dir, Stage::Ingest, &summary.posts_sha256)?;
        info!(
            "ingest: {} users, {} articles, {} publishers",
            summary.n_users, summary.n_articles, summary.n_publishers
        );
        Ok(Ingested { corpus, kb, summary })
    }

    pub fn solve(&self, ingested: &Ingested) -> StageResult<Solved> {
        self.solve_inner(ingested).at(Stage::Solve)
    }

    fn solve_inner(&self, ingested: &Ingested) -> Result<Solved> {
        let graph = bicm::build_graph(&ingested.corpus)?;
        let dir = self.stage_dir("bicm")?;
        let key = self.solve_key(&ingested.summary);
        let (model_csv, model_json) = (dir.join("model.csv"), dir.join("model.json"));
        if self.cached(&dir, &key, &["model.csv", "model.json"]) {
            let meta: BicmMetadata = read_json(&model_json)?;
            let model = BicmModel::read_csv(&model_csv, &meta)?;
            if model.users() == graph.users() && model.urls() == graph.urls() {
                info!("solve: reusing cached model");
                self.stamp(&dir, Stage::Solve, &key)?;
                return Ok(Solved { graph, model, cached: true });
            }
        }
        let model = bicm::solve(&graph, self.config.solver)?;
        info!("solve: {}", bicm::describe(&model));
        model.write_csv(&model_csv)?;
        model.metadata().write_json(&model_json)?;
        self.stamp(&dir, Stage::Solve, &key)?;
        Ok(Solved { graph, model, cached: false })
    }

    pub fn validate(&self, ingested: &Ingested, solved: &Solved) -> StageResult<ValidatedNetwork> {
        self.validate_inner(ingested, solved).at(Stage::Validate)
    }

    fn validate_inner(&self, ingested: &Ingested, solved: &Solved) -> Result<ValidatedNetwork> {
        let dir = self.stage_dir("validation")?;
        let key = self.validate_key(&ingested.summary);
        let (edges, meta) = (dir.join("edges.csv"), dir.join("metadata.json"));
        if solved.cached && self.cached(&dir, &key, &["edges.csv", "metadata.json"]) {
            info!("validate: reusing cached network");
            let net = ValidatedNetwork::read(&edges, &read_json(&meta)?)?;
            self.stamp(&dir, Stage::Validate, &key)?;
            return Ok(net);
        }
        let (_, net) = projection::validate(
            &solved.graph,
            &solved.model,
            self.config.alpha,
            self.config.tail_method,
        )?;
        info!(
            "validate: {} of {} tested pairs kept ({} URLs)",
            net.edges.len(),
            net.n_tests,
            net.nodes.len()
        );
        net.write_csv(&edges)?;
        net.write_metadata(&meta)?;
        self.stamp(&dir, Stage::Validate, &key)?;
        Ok(net)
    }

    pub fn communities(&self, ingested: &Ingested, net: &ValidatedNetwork) -> StageResult<(Partition, NecReport)> {
        self.communities_inner(ingested, net).at(Stage::Communities)
    }

    fn communities_inner(&self, ingested: &Ingested, net: &ValidatedNetwork) -> Result<(Partition, NecReport)> {
        let Ingested { corpus, kb, .. } = ingested;
        let partition = nec::louvain(net, corpus.articles().keys().map(String::as_str), self.config.louvain);
        let summary = nec::nec_summary(&partition, corpus);
        let purity = nec::purity_table(&partition, corpus, kb);

        let dir = self.stage_dir("nec")?;
        partition.write_csv(dir.join("partition.csv"))?;
        write_summary_table(&dir.join("summary.csv"), &summary)?;
        write_purity_table(&dir.join("purity.csv"), &purity)?;
        self.stamp(&dir, Stage::Communities, &self.hash)?;
        info!(
            "communities: {} NECs, Q = {:.4}",
            partition.n_communities(),
            partition.modularity
        );
        let report = NecReport {
            n_communities: partition.n_communities(),
            n_unclustered: partition.unclustered().len(),
            modularity: partition.modularity,
            pass_modularity: partition.pass_modularity.clone(),
            summary,
            purity,
        };
        Ok((partition, report))
    }

    pub fn voters(
        &self,
        ingested: &Ingested,
        net: &ValidatedNetwork,
    ) -> StageResult<BTreeMap<StrategyKind, Vec<VoterProfile>>> {
        self.voters_inner(ingested, net).at(Stage::Voters)
    }

    fn voters_inner(
        &self,
        ingested: &Ingested,
        net: &ValidatedNetwork,
    ) -> Result<BTreeMap<StrategyKind, Vec<VoterProfile>>> {
        let dir = self.stage_dir("voters")?;
        let profiles: BTreeMap<StrategyKind, Vec<VoterProfile>> = self
            .config
            .strategies()
            .into_par_iter()
            .map(|k| (k, voters::profile_voters(k, &ingested.corpus, net, &ingested.kb)))
            .collect();
        let jobs: Vec<(StrategyKind, usize)> = profiles
            .keys()
            .flat_map(|&k| self.config.thetas().map(move |t| (k, t)))
            .collect();
        jobs.par_iter().try_for_each(|&(k, theta)| {
            let kept = voters::filter_min_publishers(&profiles[&k], theta);
            voters::write_voter_table(dir.join(voter_file(k, theta)), kept)
        })?;
        self.stamp(&dir, Stage::Voters, &self.hash)?;
        Ok(profiles)
    }

    pub fn classify(
        &self,
        ingested: &Ingested,
        net: &ValidatedNetwork,
        profiles: &BTreeMap<StrategyKind, Vec<VoterProfile>>,
    ) -> StageResult<(Vec<SweepRow>, Vec<StrategyReport>)> {
        self.classify_inner(ingested, net, profiles).at(Stage::Classify)
    }

    fn classify_inner(
        &self,
        ingested: &Ingested,
        net: &ValidatedNetwork,
        profiles: &BTreeMap<StrategyKind, Vec<VoterProfile>>,
    ) -> Result<(Vec<SweepRow>, Vec<StrategyReport>)> {
        let Ingested { corpus, kb, .. } = ingested;
        let c = &self.config;
        let opts = ScoringOptions {
            exclude_self_votes: c.exclude_self_votes,
        };
        let nec_knowledge = labeled_publishers(net.nodes.iter().map(String::as_str), corpus, kb);

        let jobs: Vec<(StrategyKind, usize)> = profiles
            .keys()
            .flat_map(|&k| c.thetas().map(move |t| (k, t)))
            .collect();
        let sweep: Vec<SweepRow> = jobs
            .par_iter()
            .map(|&(k, theta)| {
                let kept = voters::filter_min_publishers(&profiles[&k], theta);
                let scores = classify::publisher_scores(kept.iter().copied(), corpus, kb, opts);
                let cov = classify::coverage(kept.iter().map(|v| v.user_id.as_str()), corpus, kb);
                let cv = classify::stratified_cv(&classify::training_samples(&scores), c.cv_folds, c.cv_seed).ok();
                let knowledge = match k {
                    StrategyKind::DsUrlNec => nec_knowledge,
                    _ => labeled_publishers(
                        kept.iter().flat_map(|v| v.articles.iter().map(String::as_str)),
                        corpus,
                        kb,
                    ),
                };
                sweep_row(k, theta, &kept, &scores, &cov, cv.as_ref(), knowledge)
            })
            .collect();

        let dir = self.stage_dir("classify")?;
        write_sweep(&dir.join("sweep.csv"), &sweep)?;

        let mut reports = Vec::new();
        for (&k, all) in profiles {
            let kept = voters::filter_min_publishers(all, c.report_theta);
            let scores = classify::publisher_scores(kept.iter().copied(), corpus, kb, opts);
            let samples = classify::training_samples(&scores);
            let stump = classify::fit_stump(&samples).ok();
            let (cv, cv_error) = match classify::stratified_cv(&samples, c.cv_folds, c.cv_seed) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let null_control = if c.null_permutations > 0 && cv.is_some() {
                classify::label_permutation_null(&samples, c.cv_folds, c.cv_seed, c.null_permutations).ok()
            } else {
                None
            };
            let worthy = classify::worthy_list(&scores);
            classify::write_scores(dir.join(format!("scores_{k}.csv")), &scores, stump.as_ref())?;
            classify::write_worthy(dir.join(format!("worthy_{k}.csv")), &worthy)?;
            reports.push(StrategyReport {
                strategy: k,
                theta: c.report_theta,
                n_voters: kept.len(),
                n_valued: kept.iter().filter(|v| v.value.is_some()).count(),
                coverage: classify::coverage(kept.iter().map(|v| v.user_id.as_str()), corpus, kb),
                cv,
                cv_error,
                null_control,
                stump,
                n_scored: scores.len(),
                worthy,
            });
        }
        write_coverage_table(&dir.join("coverage.csv"), &reports)?;
        let cv_map: BTreeMap<String, serde_json::Value> = reports
            .iter()
            .map(|r| {
                let v = serde_json::json!({
                    "theta": r.theta,
                    "report": r.cv,
                    "error": r.cv_error,
                    "null_control": r.null_control,
                });
                (r.strategy.to_string(), v)
            })
            .collect();
        write_json(&dir.join("cv.json"), &cv_map)?;
        self.stamp(&dir, Stage::Classify, &self.hash)?;
        Ok((sweep, reports))
    }

    /// Runs every stage, writes figures and the report.
    pub fn run(&self) -> StageResult<RunReport> {
        let ingested = self.ingest()?;
        let solved = self.solve(&ingested)?;
        let net = self.validate(&ingested, &solved)?;
        let (_, nec_report) = self.communities(&ingested, &net)?;
        let profiles = self.voters(&ingested, &net)?;
        let (sweep, strategies) = self.classify(&ingested, &net, &profiles)?;
        emit_figures(&self.config.output).at(Stage::Figures)?;
        let report = RunReport {
            config: self.config.clone(),
            config_hash: self.hash.clone(),
            ingest: ingested.summary,
            bicm: solved.model.metadata(),
            validation: net.metadata(),
            nec: nec_report,
            strategies,
            sweep,
        };
        write_json(&self.config.output.join("report.json"), &report).at(Stage::Figures)?;
        Ok(report)
    }

    /// Runs the stages up to and including `last`.
    pub fn run_until(&self, last: Stage) -> StageResult<()> {
        if last >= Stage::Figures {
            return self.run().map(|_| ());
        }
        let ingested = self.ingest()?;
        if last <= Stage::Ingest {
            return Ok(());
        }
        let solved = self.solve(&ingested)?;
        if last <= Stage::Solve {
            return Ok(());
        }
        let net = self.validate(&ingested, &solved)?;
        if last <= Stage::Validate {
            return Ok(());
        }
        self.communities(&ingested, &net)?;
        if last <= Stage::Communities {
            return Ok(());
        }
        let profiles = self.voters(&ingested, &net)?;
        if last <= Stage::Voters {
            return Ok(());
        }
        self.classify(&ingested, &net, &profiles)?;
        Ok(())
    }
}

fn voter_file(k: StrategyKind, theta: usize) -> String {
    format!("{k}_theta{theta:02}.csv")
}

/// Distinct labeled publishers among the given articles.
pub fn labeled_publishers<'a>(urls: impl IntoIterator<Item = &'a str>, corpus: &Corpus, kb: &KnowledgeBase) -> usize {
    urls.into_iter()
        .filter_map(|u| corpus.publisher_of(u))
        .filter(|p| kb.label(p) != TrustLabel::Unc)
        .collect::<BTreeSet<_>>()
        .len()
}

fn sweep_row(
    strategy: StrategyKind,
    theta: usize,
    kept: &[&VoterProfile],
    scores: &[PublisherScore],
    cov: &CoverageReport,
    cv: Option<&CvReport>,
    knowledge: usize,
) -> SweepRow {
    let lvl = |l| {
        let x = cov.level(l);
        (x.covered, x.universe)
    };
    let ((covered_t, universe_t), (covered_n, universe_n), (covered_unc, universe_unc)) =
        (lvl(TrustLabel::T), lvl(TrustLabel::N), lvl(TrustLabel::Unc));
    SweepRow {
        strategy,
        theta,
        n_voters: kept.len(),
        n_valued: kept.iter().filter(|v| v.value.is_some()).count(),
        n_scored: scores.len(),
        covered_t,
        universe_t,
        covered_n,
        universe_n,
        covered_unc,
        universe_unc,
        covered: cov.covered,
        cv_folds: cv.map(|r| r.folds),
        ba_mean: cv.map(|r| r.mean_balanced_accuracy),
        ba_std: cv.map(|r| r.std_balanced_accuracy),
        knowledge,
    }
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-community statistics: `nec,n_users,n_distinct_urls,n_publishers,n_shares`.
pub fn write_summary_table(path: &Path, rows: &[NecSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["nec", "n_users", "n_distinct_urls", "n_publishers", "n_shares"])?;
    for r in rows {
        w.write_record([
            r.id.to_string(),
            r.n_users.to_string(),
            r.n_distinct_urls.to_string(),
            r.n_publishers.to_string(),
            r.n_shares.to_string(),
        ])?;
    }
    finish(w, path)
}

/// `community,purity_T,purity_N`.
pub fn write_purity_table(path: &Path, rows: &[PurityRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["community", "purity_T", "purity_N"])?;
    for r in rows {
        w.write_record([r.community.clone(), r.purity_t.to_string(), r.purity_n.to_string()])?;
    }
    finish(w, path)
}

/// Coverage percentages per strategy: `strategy,T,N,UNC`.
pub fn write_coverage_table(path: &Path, reports: &[StrategyReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["strategy", "T", "N", "UNC"])?;
    for r in reports {
        let pct = |l| format!("{:.2}", r.coverage.level(l).percentage);
        w.write_record([
            r.strategy.to_string(),
            pct(TrustLabel::T),
            pct(TrustLabel::N),
            pct(TrustLabel::Unc),
        ])?;
    }
    finish(w, path)
}

fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    finish(w, path)
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

const FIGURE_INPUTS: [(&str, &str); 2] = [("communities", "nec/purity.csv"), ("classify", "classify/sweep.csv")];

/// Writes the data tables behind the purity, voters, coverage, accuracy
/// and knowledge figures into `<run>/figures/`.
pub fn emit_figures(run_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let run = run_dir.as_ref();
    let missing: Vec<String> = FIGURE_INPUTS
        .iter()
        .filter(|(_, f)| !run.join(f).is_file())
        .map(|(stage, _)| stage.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteRun(missing));
    }
    let dir = run.join("figures");
    create_dir(&dir)?;
    let sweep = read_sweep(&run.join("classify/sweep.csv"))?;
    let strategies: Vec<StrategyKind> = sweep.iter().map(|r| r.strategy).collect::<BTreeSet<_>>().into_iter().collect();
    let thetas: Vec<usize> = sweep.iter().map(|r| r.theta).collect::<BTreeSet<_>>().into_iter().collect();
    let at = |k: StrategyKind, t: usize| sweep.iter().find(|r| r.strategy == k && r.theta == t);
    let mut written = Vec::new();

    let fig2 = dir.join("fig2_purity.csv");
    fs::copy(run.join("nec/purity.csv"), &fig2).map_err(|e| Error::io(&fig2, e))?;
    written.push(fig2);

    let wide = |name: &str, value: &dyn Fn(&SweepRow) -> String| -> Result<PathBuf> {
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["theta".to_string()];
        header.extend(strategies.iter().map(|k| k.to_string()));
        w.write_record(&header)?;
        for &t in &thetas {
            let mut rec = vec![t.to_string()];
            rec.extend(strategies.iter().map(|&k| at(k, t).map(value).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        finish(w, &path)?;
        Ok(path)
    };
    written.push(wide("fig3_voters.csv", &|r| r.n_voters.to_string())?);

    let path = dir.join("fig4_coverage.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["theta", "strategy", "level", "covered", "universe", "percentage"])?;
    for &t in &thetas {
        for &k in &strategies {
            let Some(r) = at(k, t) else { continue };
            for l in TrustLabel::ALL {
                let (covered, universe) = r.coverage(l);
                let pct = if universe == 0 { 0.0 } else { 100.0 * covered as f64 / universe as f64 };
                w.write_record([
                    t.to_string(),
                    k.to_string(),
                    l.to_string(),
                    covered.to_string(),
                    universe.to_string(),
                    pct.to_string(),
                ])?;
            }
        }
    }
    finish(w, &path)?;
    written.push(path);

    let path = dir.join("fig5_accuracy.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["theta", "strategy", "folds", "ba_mean", "ba_std", "baseline"])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for &t in &thetas {
        for &k in &strategies {
            let Some(r) = at(k, t) else { continue };
            w.write_record([
                t.to_string(),
                k.to_string(),
                r.cv_folds.map(|f| f.to_string()).unwrap_or_default(),
                opt(r.ba_mean),
                opt(r.ba_std),
                "0.5".to_string(),
            ])?;
        }
    }
    finish(w, &path)?;
    written.push(path);

    written.push(wide("fig6_knowledge.csv", &|r| r.knowledge.to_string())?);
    Ok(written)
}
