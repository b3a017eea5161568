//! User-URL bipartite graph and the Bipartite Configuration Model.
//!
//! The BiCM is the maximum-entropy ensemble of binary bipartite graphs whose
//! expected degrees match the observed ones on both layers. Links are
//! independent with probability `p_ia = x_i y_a / (1 + x_i y_a)`.
//!
//! Solving happens on a reduced system. Nodes that must link to every
//! remaining node of the other layer (or to none) are pinned first; their
//! fitness diverges (or vanishes) and they are peeled off one at a time until
//! every remaining node is strictly inside its feasible range. The remaining
//! nodes are grouped by degree, since equal-degree nodes share one fitness,
//! and the grouped equations are solved with a fixed-point warm-up followed
//! by Newton steps on the convex negative log-likelihood.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Corpus;

/// Binary biadjacency between users (rows) and URLs (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    users: Vec<String>,
    urls: Vec<String>,
    user_index: HashMap<String, usize>,
    url_index: HashMap<String, usize>,
    rows: Vec<Vec<usize>>,
    cols: Vec<Vec<usize>>,
}

impl BipartiteGraph {
    /// Graph over explicit node layers. Links are deduplicated; nodes without
    /// links are kept, which is what sampled graphs need.
    pub fn from_links(
        users: Vec<String>,
        urls: Vec<String>,
        links: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut rows = vec![Vec::new(); users.len()];
        let mut cols = vec![Vec::new(); urls.len()];
        for (i, a) in links {
            if i >= users.len() || a >= urls.len() {
                return Err(Error::IndexOutOfRange(format!("link ({i}, {a})")));
            }
            rows[i].push(a);
            cols[a].push(i);
        }
        for v in rows.iter_mut().chain(cols.iter_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        let user_index = users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        let url_index = urls.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        Ok(Self {
            users,
            urls,
            user_index,
            url_index,
            rows,
            cols,
        })
    }

    /// Graph from `(user, url)` pairs. Only nodes with at least one link
    /// exist, indexed in sorted label order.
    pub fn from_pairs<U, A>(pairs: impl IntoIterator<Item = (U, A)>) -> Result<Self>
    where
        U: Into<String>,
        A: Into<String>,
    {
        let mut by_user: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (u, a) in pairs {
            by_user.entry(u.into()).or_default().push(a.into());
        }
        if by_user.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut urls: Vec<String> = by_user.values().flatten().cloned().collect();
        urls.sort();
        urls.dedup();
        let url_pos: HashMap<&str, usize> =
            urls.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let links: Vec<(usize, usize)> = by_user
            .values()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |a| (i, a)))
            .map(|(i, a)| (i, url_pos[a.as_str()]))
            .collect();
        let users = by_user.keys().cloned().collect();
        Self::from_links(users, urls, links)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_urls(&self) -> usize {
        self.urls.len()
    }

    pub fn n_links(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn urls(&self) -> &[String] {
        &self.urls
    }

    pub fn user_row(&self, user: &str) -> Option<usize> {
        self.user_index.get(user).copied()
    }

    pub fn url_column(&self, url: &str) -> Option<usize> {
        self.url_index.get(url).copied()
    }

    /// URL columns linked to each user, sorted.
    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    /// User rows linked to each URL, sorted.
    pub fn cols(&self) -> &[Vec<usize>] {
        &self.cols
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    pub fn url_degrees(&self) -> Vec<usize> {
        self.cols.iter().map(Vec::len).collect()
    }

    pub fn has_link(&self, user: usize, url: usize) -> bool {
        self.rows
            .get(user)
            .is_some_and(|r| r.binary_search(&url).is_ok())
    }
}

/// One link per deduplicated corpus interaction.
pub fn build_graph(corpus: &Corpus) -> Result<BipartiteGraph> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    BipartiteGraph::from_pairs(corpus.interactions().map(|(u, a, _)| (u, a)))
}

/// Saturation status of a node. Pinned nodes carry the order in which they
/// were peeled; for a pair of pinned nodes the earlier one decides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pin {
    Free,
    /// Linked to every node of the other layer still active at peel time.
    Full(u32),
    /// Linked to no node of the other layer still active at peel time.
    Empty(u32),
}

impl Pin {
    fn order(self) -> Option<u32> {
        match self {
            Pin::Free => None,
            Pin::Full(o) | Pin::Empty(o) => Some(o),
        }
    }

    fn value(self) -> f64 {
        match self {
            Pin::Full(_) => 1.0,
            _ => 0.0,
        }
    }

    fn encode(self) -> String {
        match self {
            Pin::Free => "free".into(),
            Pin::Full(o) => format!("full:{o}"),
            Pin::Empty(o) => format!("empty:{o}"),
        }
    }

    fn decode(s: &str) -> Result<Pin> {
        let bad = || Error::InvalidArgument(format!("bad pin {s:?}"));
        if s == "free" {
            return Ok(Pin::Free);
        }
        let (kind, order) = s.split_once(':').ok_or_else(bad)?;
        let order: u32 = order.parse().map_err(|_| bad())?;
        match kind {
            "full" => Ok(Pin::Full(order)),
            "empty" => Ok(Pin::Empty(order)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// Solved BiCM: per-node fitnesses plus pinned nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BicmModel {
    users: Vec<String>,
    urls: Vec<String>,
    user_degrees: Vec<usize>,
    url_degrees: Vec<usize>,
    user_fitness: Vec<f64>,
    url_fitness: Vec<f64>,
    user_pins: Vec<Pin>,
    url_pins: Vec<Pin>,
    pub residual: f64,
    pub iterations: usize,
    pub tol: f64,
}

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl BicmModel {
    /// Model with caller-supplied fitnesses and no pinned nodes.
    pub fn from_fitness(user_fitness: Vec<f64>, url_fitness: Vec<f64>) -> Result<Self> {
        if user_fitness.iter().chain(&url_fitness).any(|f| !(*f >= 0.0)) {
            return Err(Error::InvalidArgument("fitness must be non-negative".into()));
        }
        let users = (0..user_fitness.len()).map(|i| format!("u{i}")).collect();
        let urls = (0..url_fitness.len()).map(|i| format!("a{i}")).collect();
        Ok(Self {
            users,
            urls,
            user_degrees: vec![0; user_fitness.len()],
            url_degrees: vec![0; url_fitness.len()],
            user_pins: vec![Pin::Free; user_fitness.len()],
            url_pins: vec![Pin::Free; url_fitness.len()],
            user_fitness,
            url_fitness,
            residual: 0.0,
            iterations: 0,
            tol: 0.0,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_urls(&self) -> usize {
        self.urls.len()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn urls(&self) -> &[String] {
        &self.urls
    }

    pub fn user_fitness(&self) -> &[f64] {
        &self.user_fitness
    }

    pub fn url_fitness(&self) -> &[f64] {
        &self.url_fitness
    }

    pub fn user_pins(&self) -> &[Pin] {
        &self.user_pins
    }

    pub fn url_pins(&self) -> &[Pin] {
        &self.url_pins
    }

    pub fn user_degrees(&self) -> &[usize] {
        &self.user_degrees
    }

    pub fn url_degrees(&self) -> &[usize] {
        &self.url_degrees
    }

    /// Probability of a link between `user` and `url` in the ensemble.
    pub fn link_probability(&self, user: usize, url: usize) -> Result<f64> {
        if user >= self.users.len() || url >= self.urls.len() {
            return Err(Error::IndexOutOfRange(format!("pair ({user}, {url})")));
        }
        Ok(self.p(user, url))
    }

    #[inline]
    pub(crate) fn p(&self, i: usize, a: usize) -> f64 {
        let (pu, pa) = (self.user_pins[i], self.url_pins[a]);
        match (pu.order(), pa.order()) {
            (None, None) => {
                let xy = self.user_fitness[i] * self.url_fitness[a];
                xy / (1.0 + xy)
            }
            (Some(_), None) => pu.value(),
            (None, Some(_)) => pa.value(),
            (Some(ou), Some(oa)) => {
                if ou < oa {
                    pu.value()
                } else {
                    pa.value()
                }
            }
        }
    }

    /// Link probabilities of every user towards one URL.
    pub fn url_column(&self, url: usize) -> Vec<f64> {
        (0..self.users.len()).map(|i| self.p(i, url)).collect()
    }

    /// Pairs whose probability is pinned to one.
    pub fn forced_links(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.users.len() {
            for a in 0..self.urls.len() {
                let pinned = self.user_pins[i] != Pin::Free || self.url_pins[a] != Pin::Free;
                if pinned && self.p(i, a) == 1.0 {
                    out.push((i, a));
                }
            }
        }
        out
    }

    /// Expected degrees by direct summation over every pair.
    pub fn expected_degrees(&self) -> (Vec<f64>, Vec<f64>) {
        let mut ku = vec![0.0; self.users.len()];
        let mut da = vec![0.0; self.urls.len()];
        for (i, k) in ku.iter_mut().enumerate() {
            for (a, d) in da.iter_mut().enumerate() {
                let p = self.p(i, a);
                *k += p;
                *d += p;
            }
        }
        (ku, da)
    }

    /// Largest relative gap between expected and observed degrees.
    pub fn max_relative_degree_error(&self) -> f64 {
        let (ku, da) = self.expected_degrees();
        let rel = |exp: f64, obs: usize| {
            if obs == 0 {
                exp.abs()
            } else {
                (exp - obs as f64).abs() / obs as f64
            }
        };
        ku.iter()
            .zip(&self.user_degrees)
            .map(|(&e, &o)| rel(e, o))
            .chain(da.iter().zip(&self.url_degrees).map(|(&e, &o)| rel(e, o)))
            .fold(0.0, f64::max)
    }

    /// Draws one graph of the ensemble; every link is independent.
    pub fn sample(&self, seed: u64) -> BipartiteGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut links = Vec::new();
        for i in 0..self.users.len() {
            for a in 0..self.urls.len() {
                let p = self.p(i, a);
                if p > 0.0 && rng.random::<f64>() < p {
                    links.push((i, a));
                }
            }
        }
        BipartiteGraph::from_links(self.users.clone(), self.urls.clone(), links)
            .expect("indices in range by construction")
    }

    /// Per-node table `node,layer,degree,fitness,pin`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["node", "layer", "degree", "fitness", "pin"])?;
        let layers = [
            ("user", &self.users, &self.user_degrees, &self.user_fitness, &self.user_pins),
            ("url", &self.urls, &self.url_degrees, &self.url_fitness, &self.url_pins),
        ];
        for (layer, ids, degs, fit, pins) in layers {
            for i in 0..ids.len() {
                w.write_record([
                    ids[i].as_str(),
                    layer,
                    &degs[i].to_string(),
                    &fit[i].to_string(),
                    &pins[i].encode(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a table written by [`BicmModel::write_csv`] plus its metadata.
    pub fn read_csv(path: impl AsRef<Path>, meta: &BicmMetadata) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            node: String,
            layer: String,
            degree: usize,
            fitness: f64,
            pin: String,
        }
        let mut model = BicmModel {
            users: vec![],
            urls: vec![],
            user_degrees: vec![],
            url_degrees: vec![],
            user_fitness: vec![],
            url_fitness: vec![],
            user_pins: vec![],
            url_pins: vec![],
            residual: meta.residual,
            iterations: meta.iterations,
            tol: meta.tol,
        };
        for row in csv::Reader::from_path(path)?.deserialize::<Row>() {
            let row = row?;
            let pin = Pin::decode(&row.pin)?;
            match row.layer.as_str() {
                "user" => {
                    model.users.push(row.node);
                    model.user_degrees.push(row.degree);
                    model.user_fitness.push(row.fitness);
                    model.user_pins.push(pin);
                }
                "url" => {
                    model.urls.push(row.node);
                    model.url_degrees.push(row.degree);
                    model.url_fitness.push(row.fitness);
                    model.url_pins.push(pin);
                }
                other => return Err(Error::InvalidArgument(format!("unknown layer {other:?}"))),
            }
        }
        Ok(model)
    }

    pub fn metadata(&self) -> BicmMetadata {
        let list = |ids: &[String], pins: &[Pin]| {
            ids.iter()
                .zip(pins)
                .filter(|(_, p)| **p != Pin::Free)
                .map(|(id, p)| (id.clone(), p.encode()))
                .collect()
        };
        BicmMetadata {
            tol: self.tol,
            iterations: self.iterations,
            residual: self.residual,
            n_users: self.users.len(),
            n_urls: self.urls.len(),
            n_forced_links: self.forced_links().len(),
            pinned_users: list(&self.users, &self.user_pins),
            pinned_urls: list(&self.urls, &self.url_pins),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicmMetadata {
    pub tol: f64,
    pub iterations: usize,
    pub residual: f64,
    pub n_users: usize,
    pub n_urls: usize,
    pub n_forced_links: usize,
    pub pinned_users: Vec<(String, String)>,
    pub pinned_urls: Vec<(String, String)>,
}

impl BicmMetadata {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f).map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Peels saturated and empty nodes. Returns pins and residual degrees of the
/// nodes left free.
fn peel(graph: &BipartiteGraph) -> (Vec<Pin>, Vec<Pin>, Vec<usize>, Vec<usize>) {
    let mut ku = graph.user_degrees();
    let mut da = graph.url_degrees();
    let mut user_pins = vec![Pin::Free; ku.len()];
    let mut url_pins = vec![Pin::Free; da.len()];
    let mut active_users = ku.len();
    let mut active_urls = da.len();
    let mut order = 0u32;

    loop {
        let mut changed = false;
        for i in 0..ku.len() {
            if user_pins[i] != Pin::Free {
                continue;
            }
            if ku[i] == 0 {
                user_pins[i] = Pin::Empty(order);
            } else if ku[i] == active_urls {
                user_pins[i] = Pin::Full(order);
                for a in 0..da.len() {
                    if url_pins[a] == Pin::Free {
                        da[a] -= 1;
                    }
                }
            } else {
                continue;
            }
            order += 1;
            active_users -= 1;
            changed = true;
        }
        for a in 0..da.len() {
            if url_pins[a] != Pin::Free {
                continue;
            }
            if da[a] == 0 {
                url_pins[a] = Pin::Empty(order);
            } else if da[a] == active_users {
                url_pins[a] = Pin::Full(order);
                for i in 0..ku.len() {
                    if user_pins[i] == Pin::Free {
                        ku[i] -= 1;
                    }
                }
            } else {
                continue;
            }
            order += 1;
            active_urls -= 1;
            changed = true;
        }
        if !changed {
            break;
        }
    }
    (user_pins, url_pins, ku, da)
}

/// Degree classes of the free nodes: (degree, multiplicity), sorted.
fn classes(degrees: &[usize], pins: &[Pin]) -> Vec<(usize, usize)> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for (d, p) in degrees.iter().zip(pins) {
        if *p == Pin::Free {
            *counts.entry(*d).or_default() += 1;
        }
    }
    counts.into_iter().collect()
}

/// Grouped equations in log-fitness coordinates.
struct Reduced {
    k: Vec<f64>,
    a: Vec<f64>,
    d: Vec<f64>,
    b: Vec<f64>,
}

impl Reduced {
    fn expected(&self, theta: &[f64], eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut eu = vec![0.0; self.k.len()];
        let mut ea = vec![0.0; self.d.len()];
        for r in 0..self.k.len() {
            for s in 0..self.d.len() {
                let p = logistic(theta[r] + eta[s]);
                eu[r] += self.b[s] * p;
                ea[s] += self.a[r] * p;
            }
        }
        (eu, ea)
    }

    fn residual(&self, theta: &[f64], eta: &[f64]) -> f64 {
        let (eu, ea) = self.expected(theta, eta);
        let ru = eu.iter().zip(&self.k).map(|(e, k)| (e - k).abs() / k);
        let ra = ea.iter().zip(&self.d).map(|(e, d)| (e - d).abs() / d);
        ru.chain(ra).fold(0.0, f64::max)
    }

    fn objective(&self, theta: &[f64], eta: &[f64]) -> f64 {
        let mut f = 0.0;
        for r in 0..self.k.len() {
            f -= self.a[r] * self.k[r] * theta[r];
            for s in 0..self.d.len() {
                f += self.a[r] * self.b[s] * softplus(theta[r] + eta[s]);
            }
        }
        for s in 0..self.d.len() {
            f -= self.b[s] * self.d[s] * eta[s];
        }
        f
    }

    /// One Gauss-Seidel sweep of the classic fixed-point map.
    fn fixed_point_sweep(&self, x: &mut [f64], y: &mut [f64]) {
        for r in 0..x.len() {
            let denom: f64 = (0..y.len()).map(|s| self.b[s] * y[s] / (1.0 + x[r] * y[s])).sum();
            x[r] = self.k[r] / denom;
        }
        for s in 0..y.len() {
            let denom: f64 = (0..x.len()).map(|r| self.a[r] * x[r] / (1.0 + x[r] * y[s])).sum();
            y[s] = self.d[s] / denom;
        }
    }

    /// Damped Newton step on the negative log-likelihood. The last URL class
    /// is held fixed to remove the `x -> c x, y -> y / c` gauge freedom.
    fn newton_step(&self, theta: &mut [f64], eta: &mut [f64]) {
        let (nr, ns) = (self.k.len(), self.d.len());
        let dim = nr + ns - 1;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        let (eu, ea) = self.expected(theta, eta);
        for r in 0..nr {
            g[r] = self.a[r] * (eu[r] - self.k[r]);
        }
        for s in 0..ns - 1 {
            g[nr + s] = self.b[s] * (ea[s] - self.d[s]);
        }
        for r in 0..nr {
            for s in 0..ns {
                let p = logistic(theta[r] + eta[s]);
                let w = p * (1.0 - p);
                h[(r, r)] += self.a[r] * self.b[s] * w;
                if s < ns - 1 {
                    let c = self.a[r] * self.b[s] * w;
                    h[(nr + s, nr + s)] += c;
                    h[(r, nr + s)] += c;
                    h[(nr + s, r)] += c;
                }
            }
        }

        let mut shift = 0.0;
        let step = loop {
            let mut m = h.clone();
            for i in 0..dim {
                m[(i, i)] += shift;
            }
            if let Some(chol) = m.cholesky() {
                break chol.solve(&(-&g));
            }
            shift = if shift == 0.0 { 1e-10 * h.diagonal().amax().max(1.0) } else { shift * 10.0 };
        };

        let f0 = self.objective(theta, eta);
        let slope = g.dot(&step);
        let mut t = 1.0;
        let (mut th, mut et) = (theta.to_vec(), eta.to_vec());
        loop {
            for r in 0..nr {
                th[r] = theta[r] + t * step[r];
            }
            for s in 0..ns - 1 {
                et[s] = eta[s] + t * step[nr + s];
            }
            let f1 = self.objective(&th, &et);
            if f1 <= f0 + 1e-4 * t * slope + 1e-13 * f0.abs() || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        theta.copy_from_slice(&th);
        eta.copy_from_slice(&et);
    }
}

const FIXED_POINT_BUDGET: usize = 500;
const STALL_WINDOW: usize = 25;

/// Solves the BiCM for a graph.
///
/// Deterministic: fitnesses start at `k / sqrt(L)` and no randomness is used.
/// Fails with [`Error::NonConvergence`] when `max_iter` iterations (fixed
/// point and Newton combined) do not bring the relative degree error below
/// `tol`.
pub fn solve(graph: &BipartiteGraph, opts: SolverOptions) -> Result<BicmModel> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidArgument("tol must be > 0 and max_iter >= 1".into()));
    }
    let (user_pins, url_pins, ku, da) = peel(graph);
    let uc = classes(&ku, &user_pins);
    let ac = classes(&da, &url_pins);

    let mut model = BicmModel {
        users: graph.users.clone(),
        urls: graph.urls.clone(),
        user_degrees: graph.user_degrees(),
        url_degrees: graph.url_degrees(),
        user_fitness: user_pins.iter().map(|p| if matches!(p, Pin::Full(_)) { f64::INFINITY } else { 0.0 }).collect(),
        url_fitness: url_pins.iter().map(|p| if matches!(p, Pin::Full(_)) { f64::INFINITY } else { 0.0 }).collect(),
        user_pins,
        url_pins,
        residual: 0.0,
        iterations: 0,
        tol: opts.tol,
    };
    if uc.is_empty() || ac.is_empty() {
        return Ok(model);
    }

    let red = Reduced {
        k: uc.iter().map(|c| c.0 as f64).collect(),
        a: uc.iter().map(|c| c.1 as f64).collect(),
        d: ac.iter().map(|c| c.0 as f64).collect(),
        b: ac.iter().map(|c| c.1 as f64).collect(),
    };
    let links: f64 = red.k.iter().zip(&red.a).map(|(k, a)| k * a).sum();
    let sqrt_l = links.sqrt();
    let mut x: Vec<f64> = red.k.iter().map(|k| k / sqrt_l).collect();
    let mut y: Vec<f64> = red.d.iter().map(|d| d / sqrt_l).collect();

    let logs = |x: &[f64], y: &[f64]| -> (Vec<f64>, Vec<f64>) {
        (x.iter().map(|v| v.ln()).collect(), y.iter().map(|v| v.ln()).collect())
    };

    let mut iterations = 0;
    let (mut theta, mut eta) = logs(&x, &y);
    let mut residual = red.residual(&theta, &eta);
    let mut window_start = residual;

    while residual > opts.tol && iterations < opts.max_iter.min(FIXED_POINT_BUDGET) {
        red.fixed_point_sweep(&mut x, &mut y);
        iterations += 1;
        (theta, eta) = logs(&x, &y);
        residual = red.residual(&theta, &eta);
        if iterations % STALL_WINDOW == 0 {
            if residual > 0.5 * window_start {
                break;
            }
            window_start = residual;
        }
    }

    let mut best = residual;
    while residual > opts.tol && iterations < opts.max_iter {
        red.newton_step(&mut theta, &mut eta);
        iterations += 1;
        residual = red.residual(&theta, &eta);
        best = best.min(residual);
        if !residual.is_finite() {
            break;
        }
    }
    if !(residual <= opts.tol) {
        return Err(Error::NonConvergence {
            iterations,
            residual: best,
        });
    }

    let user_class: HashMap<usize, usize> = uc.iter().enumerate().map(|(r, c)| (c.0, r)).collect();
    let url_class: HashMap<usize, usize> = ac.iter().enumerate().map(|(s, c)| (c.0, s)).collect();
    for (i, fit) in model.user_fitness.iter_mut().enumerate() {
        if model.user_pins[i] == Pin::Free {
            *fit = theta[user_class[&ku[i]]].exp();
        }
    }
    for (a, fit) in model.url_fitness.iter_mut().enumerate() {
        if model.url_pins[a] == Pin::Free {
            *fit = eta[url_class[&da[a]]].exp();
        }
    }
    model.residual = residual;
    model.iterations = iterations;
    Ok(model)
}

/// Human-readable solver summary line.
pub fn describe(model: &BicmModel) -> String {
    let mut s = String::new();
    let pinned = model.user_pins.iter().chain(&model.url_pins).filter(|p| **p != Pin::Free).count();
    let _ = write!(
        s,
        "{} users x {} urls, {} iterations, residual {:.3e}, {} pinned nodes",
        model.n_users(),
        model.n_urls(),
        model.iterations,
        model.residual,
        pinned
    );
    s
}
