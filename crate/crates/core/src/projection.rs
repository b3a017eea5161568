//! Statistically validated projection of the bipartite graph onto URLs.
//!
//! For every URL pair the number of users who shared both is compared with
//! its null distribution under the BiCM: a sum of independent Bernoulli
//! variables with success probability `p_ia * p_ib` per user (Poisson-
//! binomial). The resulting p-values go through Benjamini-Hochberg over all
//! `C(n_urls, 2)` pairs; pairs never co-shared have p = 1 and are never
//! materialized.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson};

use crate::bicm::{BicmModel, BipartiteGraph};
use crate::error::{Error, Result};

/// Number of users shared by every co-shared URL pair `(a, b)`, `a < b`.
pub fn cooccurrences(graph: &BipartiteGraph) -> Vec<((usize, usize), u32)> {
    let mut counts: HashMap<(usize, usize), u32> = HashMap::new();
    for row in graph.rows() {
        for (j, &a) in row.iter().enumerate() {
            for &b in &row[j + 1..] {
                *counts.entry((a, b)).or_default() += 1;
            }
        }
    }
    let mut out: Vec<_> = counts.into_iter().collect();
    out.sort_unstable();
    out
}

/// `P(S >= k)` for `S` a sum of independent Bernoulli(`probs[i]`).
///
/// Exact truncated convolution: counts below `k` are tracked individually and
/// every mass reaching `k` is absorbed into one compensated accumulator, so
/// small tails never come from `1 - cdf`.
pub fn poisson_binomial_tail(probs: &[f64], k: usize) -> Result<f64> {
    if let Some(&bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidProbability(bad));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if k > probs.len() {
        return Ok(0.0);
    }
    // below[j] = P(S = j) for j < k
    let mut below = vec![0.0; k];
    below[0] = 1.0;
    let (mut tail, mut comp) = (0.0f64, 0.0f64);
    let mut seen = 0usize;
    for &p in probs {
        if p == 0.0 {
            continue;
        }
        seen += 1;
        let q = 1.0 - p;
        // Kahan update of the absorbed tail
        let y = below[k - 1] * p - comp;
        let t = tail + y;
        comp = (t - tail) - y;
        tail = t;
        let top = seen.min(k - 1);
        for j in (1..=top).rev() {
            below[j] = below[j] * q + below[j - 1] * p;
        }
        below[0] *= q;
    }
    Ok(tail.clamp(0.0, 1.0))
}

/// Poisson approximation of the same tail, with rate `sum(probs)`.
pub fn poisson_tail(probs: &[f64], k: usize) -> Result<f64> {
    if let Some(&bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidProbability(bad));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let rate: f64 = probs.iter().sum();
    if rate == 0.0 {
        return Ok(0.0);
    }
    let dist = Poisson::new(rate).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(dist.sf(k as u64 - 1))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    #[default]
    Exact,
    Poisson,
}

impl TailMethod {
    pub fn tail(self, probs: &[f64], k: usize) -> Result<f64> {
        match self {
            TailMethod::Exact => poisson_binomial_tail(probs, k),
            TailMethod::Poisson => poisson_tail(probs, k),
        }
    }
}

/// Test of one URL pair against the null model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub url_a: usize,
    pub url_b: usize,
    pub observed: u32,
    pub pvalue: f64,
}

/// Per-user probabilities that both URLs are shared by that user.
pub fn pair_probabilities(model: &BicmModel, url_a: usize, url_b: usize) -> Vec<f64> {
    (0..model.n_users())
        .map(|i| model.p(i, url_a) * model.p(i, url_b))
        .filter(|&q| q > 0.0)
        .collect()
}

pub fn pair_pvalue(
    model: &BicmModel,
    pair: (usize, usize),
    observed: u32,
    method: TailMethod,
) -> Result<PairTest> {
    let (a, b) = if pair.0 < pair.1 { pair } else { (pair.1, pair.0) };
    if b >= model.n_urls() {
        return Err(Error::IndexOutOfRange(format!("url pair ({a}, {b})")));
    }
    let pvalue = if observed == 0 {
        1.0
    } else {
        method.tail(&pair_probabilities(model, a, b), observed as usize)?
    };
    Ok(PairTest {
        url_a: a,
        url_b: b,
        observed,
        pvalue,
    })
}

/// Tests every co-shared pair. Output order follows the pair order of
/// [`cooccurrences`] regardless of thread scheduling.
pub fn pair_tests(
    graph: &BipartiteGraph,
    model: &BicmModel,
    method: TailMethod,
) -> Result<Vec<PairTest>> {
    cooccurrences(graph)
        .into_par_iter()
        .map(|(pair, count)| pair_pvalue(model, pair, count, method))
        .collect()
}

/// Benjamini-Hochberg cutoff. Returns the realized threshold `p_(r)` for the
/// largest rank `r` with `p_(r) <= r * alpha / m`, or `None` if no rank
/// qualifies. Hypotheses beyond `pvalues.len()` count as p = 1.
pub fn bh_threshold(pvalues: &[f64], alpha: f64, m: u64) -> Option<f64> {
    let mut sorted: Vec<f64> = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = m as f64;
    sorted
        .iter()
        .enumerate()
        .rev()
        .find(|(i, p)| **p <= (*i as f64 + 1.0) * alpha / m)
        .map(|(_, p)| *p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedEdge {
    pub url_a: String,
    pub url_b: String,
    pub pvalue: f64,
}

/// URL network keeping only the pairs that survived FDR control.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidatedNetwork {
    /// URLs incident to at least one validated edge.
    pub nodes: BTreeSet<String>,
    pub edges: Vec<ValidatedEdge>,
    pub alpha: f64,
    pub n_hypotheses: u64,
    pub bh_threshold: f64,
    pub n_tests: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetadata {
    pub alpha: f64,
    pub n_hypotheses: u64,
    pub bh_threshold: f64,
    pub n_tests: usize,
    pub n_edges: usize,
    pub n_nodes: usize,
}

/// `C(n, 2)` as an integer.
pub fn n_pairs(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

/// Applies BH at level `alpha` over `m` hypotheses. `urls` maps columns to
/// labels.
pub fn bh_validate(
    tests: &[PairTest],
    alpha: f64,
    m: u64,
    urls: &[String],
) -> Result<ValidatedNetwork> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    if (tests.len() as u64) > m {
        return Err(Error::InvalidArgument(format!(
            "{} tests exceed {m} hypotheses",
            tests.len()
        )));
    }
    let pvalues: Vec<f64> = tests.iter().map(|t| t.pvalue).collect();
    let threshold = bh_threshold(&pvalues, alpha, m);
    let mut net = ValidatedNetwork {
        alpha,
        n_hypotheses: m,
        bh_threshold: threshold.unwrap_or(0.0),
        n_tests: tests.len(),
        ..Default::default()
    };
    let Some(threshold) = threshold else {
        return Ok(net);
    };
    let mut kept: Vec<&PairTest> = tests.iter().filter(|t| t.pvalue <= threshold).collect();
    kept.sort_by(|x, y| (x.url_a, x.url_b).cmp(&(y.url_a, y.url_b)));
    for t in kept {
        let (a, b) = (t.url_a.min(t.url_b), t.url_a.max(t.url_b));
        let label = |i: usize| {
            urls.get(i)
                .cloned()
                .ok_or_else(|| Error::IndexOutOfRange(format!("url column {i}")))
        };
        let (la, lb) = (label(a)?, label(b)?);
        net.nodes.insert(la.clone());
        net.nodes.insert(lb.clone());
        net.edges.push(ValidatedEdge {
            url_a: la,
            url_b: lb,
            pvalue: t.pvalue,
        });
    }
    net.edges.dedup_by(|x, y| x.url_a == y.url_a && x.url_b == y.url_b);
    Ok(net)
}

/// Full projection: co-occurrences, p-values and BH over all URL pairs.
pub fn validate(
    graph: &BipartiteGraph,
    model: &BicmModel,
    alpha: f64,
    method: TailMethod,
) -> Result<(Vec<PairTest>, ValidatedNetwork)> {
    let tests = pair_tests(graph, model, method)?;
    let net = bh_validate(&tests, alpha, n_pairs(graph.n_urls()), graph.urls())?;
    Ok((tests, net))
}

impl ValidatedNetwork {
    pub fn metadata(&self) -> ValidationMetadata {
        ValidationMetadata {
            alpha: self.alpha,
            n_hypotheses: self.n_hypotheses,
            bh_threshold: self.bh_threshold,
            n_tests: self.n_tests,
            n_edges: self.edges.len(),
            n_nodes: self.nodes.len(),
        }
    }

    /// Edge list `url_a,url_b,pvalue`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["url_a", "url_b", "pvalue"])?;
        for e in &self.edges {
            w.write_record([e.url_a.as_str(), e.url_b.as_str(), &e.pvalue.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn write_metadata(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, &self.metadata())?;
        writeln!(f).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read(edges: impl AsRef<Path>, meta: &ValidationMetadata) -> Result<Self> {
        let mut net = ValidatedNetwork {
            alpha: meta.alpha,
            n_hypotheses: meta.n_hypotheses,
            bh_threshold: meta.bh_threshold,
            n_tests: meta.n_tests,
            ..Default::default()
        };
        for e in csv::Reader::from_path(edges)?.deserialize::<ValidatedEdge>() {
            let e = e?;
            net.nodes.insert(e.url_a.clone());
            net.nodes.insert(e.url_b.clone());
            net.edges.push(e);
        }
        Ok(net)
    }

    pub fn contains(&self, url: &str) -> bool {
        self.nodes.contains(url)
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}
