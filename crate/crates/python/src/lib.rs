//! Python bindings for the trustvote pipeline.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use trustvote::bicm::{self, BipartiteGraph, SolverOptions};
use trustvote::classify;
use trustvote::ingest::{self, PostKind, TrustLabel};
use trustvote::nec::{self, LouvainOptions};
use trustvote::pipeline::{Pipeline, PipelineConfig, StageError};
use trustvote::projection::{self, TailMethod};
use trustvote::synth::{self, SyntheticSpec};
use trustvote::voters::{self, StrategyKind};
use trustvote::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn stage_to_py(e: StageError) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_label(s: &str) -> PyResult<TrustLabel> {
    match s {
        "T" => Ok(TrustLabel::T),
        "N" => Ok(TrustLabel::N),
        "UNC" => Ok(TrustLabel::Unc),
        _ => Err(PyValueError::new_err(format!("unknown label {s:?}"))),
    }
}

fn parse_tail(s: &str) -> PyResult<TailMethod> {
    match s {
        "exact" => Ok(TailMethod::Exact),
        "poisson" => Ok(TailMethod::Poisson),
        _ => Err(PyValueError::new_err(format!("unknown tail method {s:?}"))),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Deduplicated user-URL-publisher interactions.
#[pyclass(frozen, module = "trustvote_py")]
struct Corpus {
    inner: ingest::Corpus,
    malformed: usize,
}

#[pymethods]
impl Corpus {
    /// Reads a JSON Lines posts file.
    #[staticmethod]
    #[pyo3(signature = (path, include_kinds=None))]
    fn from_posts(path: PathBuf, include_kinds: Option<Vec<String>>) -> PyResult<Self> {
        let kinds: BTreeSet<PostKind> = match include_kinds {
            Some(ks) => ks
                .iter()
                .map(|k| k.parse::<PostKind>().map_err(to_py))
                .collect::<PyResult<_>>()?,
            None => PostKind::default_included(),
        };
        let loaded = ingest::load_posts(&path).map_err(to_py)?;
        Ok(Corpus {
            inner: ingest::Corpus::build(&loaded.posts, &kinds),
            malformed: loaded.malformed,
        })
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.n_users()
    }

    #[getter]
    fn n_articles(&self) -> usize {
        self.inner.n_articles()
    }

    #[getter]
    fn n_interactions(&self) -> usize {
        self.inner.n_interactions()
    }

    #[getter]
    fn malformed(&self) -> usize {
        self.malformed
    }

    fn publishers(&self) -> Vec<String> {
        self.inner.publishers().into_iter().map(str::to_string).collect()
    }

    /// `(user_id, url, domain)` triples.
    fn interactions(&self) -> Vec<(String, String, String)> {
        self.inner
            .interactions()
            .map(|(u, a, d)| (u.to_string(), a.to_string(), d.to_string()))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus(users={}, articles={}, interactions={})",
            self.inner.n_users(),
            self.inner.n_articles(),
            self.inner.n_interactions()
        )
    }
}

/// Publisher trust scores; missing or empty scores are unclassified.
#[pyclass(frozen, module = "trustvote_py")]
struct KnowledgeBase {
    inner: ingest::KnowledgeBase,
}

#[pymethods]
impl KnowledgeBase {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(KnowledgeBase {
            inner: ingest::KnowledgeBase::load(&path).map_err(to_py)?,
        })
    }

    fn score(&self, domain: &str) -> Option<u8> {
        self.inner.score(domain)
    }

    /// "T", "N" or "UNC".
    fn label(&self, domain: &str) -> String {
        self.inner.label(domain).to_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Fitted bipartite configuration model.
#[pyclass(frozen, module = "trustvote_py")]
struct BicmModel {
    inner: bicm::BicmModel,
    graph: BipartiteGraph,
}

#[pymethods]
impl BicmModel {
    #[getter]
    fn users(&self) -> Vec<String> {
        self.inner.users().to_vec()
    }

    #[getter]
    fn urls(&self) -> Vec<String> {
        self.inner.urls().to_vec()
    }

    #[getter]
    fn user_fitness(&self) -> Vec<f64> {
        self.inner.user_fitness().to_vec()
    }

    #[getter]
    fn url_fitness(&self) -> Vec<f64> {
        self.inner.url_fitness().to_vec()
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    fn link_probability(&self, user: usize, url: usize) -> PyResult<f64> {
        self.inner.link_probability(user, url).map_err(to_py)
    }

    /// `(user_degrees, url_degrees)` expected under the model.
    fn expected_degrees(&self) -> (Vec<f64>, Vec<f64>) {
        self.inner.expected_degrees()
    }

    fn max_relative_degree_error(&self) -> f64 {
        self.inner.max_relative_degree_error()
    }
}

/// Builds the user-URL graph of a corpus and fits the null model.
#[pyfunction]
#[pyo3(signature = (corpus, tol=1e-8, max_iter=10_000))]
fn solve_bicm(py: Python<'_>, corpus: &Corpus, tol: f64, max_iter: usize) -> PyResult<BicmModel> {
    let graph = bicm::build_graph(&corpus.inner).map_err(to_py)?;
    let inner = py
        .detach(|| bicm::solve(&graph, SolverOptions { tol, max_iter }))
        .map_err(to_py)?;
    Ok(BicmModel { inner, graph })
}

/// URL pairs co-shared significantly more than the model predicts.
#[pyclass(frozen, module = "trustvote_py")]
struct ValidatedNetwork {
    inner: projection::ValidatedNetwork,
}

#[pymethods]
impl ValidatedNetwork {
    #[getter]
    fn nodes(&self) -> Vec<String> {
        self.inner.nodes.iter().cloned().collect()
    }

    /// `(url_a, url_b, pvalue)` triples.
    #[getter]
    fn edges(&self) -> Vec<(String, String, f64)> {
        self.inner
            .edges
            .iter()
            .map(|e| (e.url_a.clone(), e.url_b.clone(), e.pvalue))
            .collect()
    }

    #[getter]
    fn bh_threshold(&self) -> f64 {
        self.inner.bh_threshold
    }

    fn __len__(&self) -> usize {
        self.inner.edges.len()
    }
}

#[pyfunction]
#[pyo3(signature = (model, alpha=0.05, tail_method="exact"))]
fn validate(py: Python<'_>, model: &BicmModel, alpha: f64, tail_method: &str) -> PyResult<ValidatedNetwork> {
    let method = parse_tail(tail_method)?;
    let (_, inner) = py
        .detach(|| projection::validate(&model.graph, &model.inner, alpha, method))
        .map_err(to_py)?;
    Ok(ValidatedNetwork { inner })
}

/// Louvain communities of the validated network; URLs of the corpus outside
/// the network are assigned -1. Returns `(assignment, modularity)`.
#[pyfunction]
#[pyo3(signature = (network, corpus, seed=42, resolution=1.0))]
fn communities(
    network: &ValidatedNetwork,
    corpus: &Corpus,
    seed: u64,
    resolution: f64,
) -> (std::collections::BTreeMap<String, i64>, f64) {
    let p = nec::louvain(
        &network.inner,
        corpus.inner.articles().keys().map(String::as_str),
        LouvainOptions { seed, resolution },
    );
    (p.assignment().clone(), p.modularity)
}

/// Upper tail `P(X >= k)` of a sum of independent Bernoulli variables.
#[pyfunction]
fn poisson_binomial_tail(probs: Vec<f64>, k: usize) -> PyResult<f64> {
    projection::poisson_binomial_tail(&probs, k).map_err(to_py)
}

/// Benjamini-Hochberg rejection threshold, or None when nothing is rejected.
#[pyfunction]
#[pyo3(signature = (pvalues, alpha=0.05, m=None))]
fn bh_threshold(pvalues: Vec<f64>, alpha: f64, m: Option<u64>) -> Option<f64> {
    let m = m.unwrap_or(pvalues.len() as u64);
    projection::bh_threshold(&pvalues, alpha, m)
}

/// Voter profiles of one strategy as dictionaries.
#[pyfunction]
fn voter_profiles<'py>(
    py: Python<'py>,
    strategy: &str,
    corpus: &Corpus,
    network: &ValidatedNetwork,
    kb: &KnowledgeBase,
) -> PyResult<Bound<'py, PyAny>> {
    let kind: StrategyKind = strategy.parse().map_err(to_py)?;
    let profiles = voters::profile_voters(kind, &corpus.inner, &network.inner, &kb.inner);
    json_to_py(py, &profiles)
}

/// Publisher scores from the voters of one strategy with diet >= theta.
#[pyfunction]
#[pyo3(signature = (strategy, corpus, network, kb, theta=0, exclude_self_votes=false))]
fn publisher_scores<'py>(
    py: Python<'py>,
    strategy: &str,
    corpus: &Corpus,
    network: &ValidatedNetwork,
    kb: &KnowledgeBase,
    theta: usize,
    exclude_self_votes: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let kind: StrategyKind = strategy.parse().map_err(to_py)?;
    let profiles = voters::profile_voters(kind, &corpus.inner, &network.inner, &kb.inner);
    let kept = voters::filter_min_publishers(&profiles, theta);
    let scores = classify::publisher_scores(
        kept.into_iter(),
        &corpus.inner,
        &kb.inner,
        classify::ScoringOptions { exclude_self_votes },
    );
    json_to_py(py, &scores)
}

fn samples(scores: Vec<f64>, labels: Vec<String>) -> PyResult<Vec<(f64, TrustLabel)>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    scores
        .into_iter()
        .zip(labels)
        .map(|(s, l)| Ok((s, parse_label(&l)?)))
        .collect()
}

/// Fits a depth-one tree. Returns `(threshold, left_label, right_label)`.
#[pyfunction]
fn fit_stump(scores: Vec<f64>, labels: Vec<String>) -> PyResult<(f64, String, String)> {
    let s = classify::fit_stump(&samples(scores, labels)?).map_err(to_py)?;
    Ok((s.threshold, s.left.to_string(), s.right.to_string()))
}

#[pyfunction]
#[pyo3(signature = (scores, labels, folds=10, seed=42))]
fn stratified_cv<'py>(
    py: Python<'py>,
    scores: Vec<f64>,
    labels: Vec<String>,
    folds: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let report = classify::stratified_cv(&samples(scores, labels)?, folds, seed).map_err(to_py)?;
    json_to_py(py, &report)
}

/// Writes a planted corpus (posts.jsonl, knowledge_base.csv, truth.csv)
/// into `out_dir`. Keyword arguments override the generator defaults.
#[pyfunction]
#[pyo3(signature = (out_dir, **overrides))]
fn generate_synthetic(out_dir: PathBuf, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<usize> {
    let mut spec = SyntheticSpec::default();
    if let Some(kw) = overrides {
        let text: String = kw
            .py()
            .import("json")?
            .call_method1("dumps", (kw,))?
            .extract()?;
        let mut base = serde_json::to_value(&spec).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let patch: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        for (k, v) in patch.as_object().into_iter().flatten() {
            if base.get(k).is_none() {
                return Err(PyValueError::new_err(format!("unknown synthetic option {k:?}")));
            }
            base[k] = v.clone();
        }
        spec = serde_json::from_value(base).map_err(|e| PyValueError::new_err(e.to_string()))?;
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let corpus = synth::generate_synthetic(&spec).map_err(to_py)?;
    corpus.write_posts(out_dir.join("posts.jsonl")).map_err(to_py)?;
    corpus.write_knowledge_base(out_dir.join("knowledge_base.csv")).map_err(to_py)?;
    corpus.write_truth(out_dir.join("truth.csv")).map_err(to_py)?;
    Ok(corpus.posts.len())
}

/// Runs the full pipeline and returns the report as a dictionary.
#[pyfunction]
#[pyo3(signature = (posts, knowledge_base, output, config=None))]
fn run_pipeline<'py>(
    py: Python<'py>,
    posts: PathBuf,
    knowledge_base: PathBuf,
    output: PathBuf,
    config: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = match config {
        Some(path) => PipelineConfig::load(path).map_err(to_py)?,
        None => PipelineConfig::default(),
    };
    cfg.posts = posts;
    cfg.knowledge_base = knowledge_base;
    cfg.output = output;
    let report = py
        .detach(|| Pipeline::new(cfg).and_then(|p| p.run()))
        .map_err(stage_to_py)?;
    json_to_py(py, &report)
}

#[pymodule]
fn trustvote_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<KnowledgeBase>()?;
    m.add_class::<BicmModel>()?;
    m.add_class::<ValidatedNetwork>()?;
    m.add_function(wrap_pyfunction!(solve_bicm, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(communities, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_binomial_tail, m)?)?;
    m.add_function(wrap_pyfunction!(bh_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(voter_profiles, m)?)?;
    m.add_function(wrap_pyfunction!(publisher_scores, m)?)?;
    m.add_function(wrap_pyfunction!(fit_stump, m)?)?;
    m.add_function(wrap_pyfunction!(stratified_cv, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
