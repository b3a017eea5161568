//! News Engagement Communities: Louvain on the validated URL network, purity
//! of each community with respect to publisher trust labels, and per-community
//! summary counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Corpus, KnowledgeBase, TrustLabel};
use crate::projection::ValidatedNetwork;

/// Community id of URLs outside every validated edge.
pub const UNCLUSTERED: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LouvainOptions {
    pub seed: u64,
    pub resolution: f64,
}

impl Default for LouvainOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            resolution: 1.0,
        }
    }
}

/// Weighted undirected graph with self-loops, as seen by one Louvain level.
#[derive(Debug, Clone)]
struct LevelGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
    degree: Vec<f64>,
    two_m: f64,
}

impl LevelGraph {
    fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        let mut self_loops = vec![0.0; n];
        for &(a, b) in edges {
            if a == b {
                self_loops[a] += 1.0;
            } else {
                *acc[a].entry(b).or_default() += 1.0;
                *acc[b].entry(a).or_default() += 1.0;
            }
        }
        Self::from_parts(acc, self_loops)
    }

    fn from_parts(acc: Vec<BTreeMap<usize, f64>>, self_loops: Vec<f64>) -> Self {
        let adj: Vec<Vec<(usize, f64)>> = acc.into_iter().map(|m| m.into_iter().collect()).collect();
        let degree: Vec<f64> = adj
            .iter()
            .zip(&self_loops)
            .map(|(nb, sl)| nb.iter().map(|(_, w)| w).sum::<f64>() + 2.0 * sl)
            .collect();
        let two_m = degree.iter().sum();
        Self {
            adj,
            self_loops,
            degree,
            two_m,
        }
    }

    fn modularity(&self, comm: &[usize], resolution: f64) -> f64 {
        if self.two_m == 0.0 {
            return 0.0;
        }
        let n_comm = comm.iter().max().map_or(0, |m| m + 1);
        let mut inside = vec![0.0; n_comm];
        let mut tot = vec![0.0; n_comm];
        for i in 0..self.adj.len() {
            let c = comm[i];
            tot[c] += self.degree[i];
            inside[c] += self.self_loops[i];
            for &(j, w) in &self.adj[i] {
                if j > i && comm[j] == c {
                    inside[c] += w;
                }
            }
        }
        let m = self.two_m / 2.0;
        inside
            .iter()
            .zip(&tot)
            .map(|(&e, &t)| e / m - resolution * (t / self.two_m).powi(2))
            .sum()
    }

    /// Local moving phase. Returns the community of every node (contiguous
    /// ids in order of first appearance) and whether any node moved.
    fn local_moves(&self, resolution: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        let n = self.adj.len();
        let mut comm: Vec<usize> = (0..n).collect();
        let mut tot = self.degree.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);

        let mut weight_to = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut moved_any = false;
        loop {
            let mut moved = false;
            for &i in &order {
                let ki = self.degree[i];
                let old = comm[i];
                tot[old] -= ki;

                for &(j, w) in &self.adj[i] {
                    let c = comm[j];
                    if weight_to[c] == 0.0 {
                        touched.push(c);
                    }
                    weight_to[c] += w;
                }
                let gain = |c: usize, w: f64| w - resolution * tot[c] * ki / self.two_m;

                let current = gain(old, weight_to[old]);
                let mut best = (old, current);
                touched.sort_unstable();
                for &c in &touched {
                    let g = gain(c, weight_to[c]);
                    // ascending ids: among equal gains the smallest id wins
                    if g > best.1 + 1e-12 {
                        best = (c, g);
                    }
                }
                for &c in &touched {
                    weight_to[c] = 0.0;
                }
                touched.clear();

                comm[i] = best.0;
                tot[best.0] += ki;
                if best.0 != old {
                    moved = true;
                    moved_any = true;
                }
            }
            if !moved {
                break;
            }
        }
        (renumber(&comm), moved_any)
    }

    fn aggregate(&self, comm: &[usize]) -> LevelGraph {
        let n_comm = comm.iter().max().map_or(0, |m| m + 1);
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n_comm];
        let mut self_loops = vec![0.0; n_comm];
        for i in 0..self.adj.len() {
            let ci = comm[i];
            self_loops[ci] += self.self_loops[i];
            for &(j, w) in &self.adj[i] {
                let cj = comm[j];
                if ci == cj {
                    if j > i {
                        self_loops[ci] += w;
                    }
                } else {
                    *acc[ci].entry(cj).or_default() += w;
                }
            }
        }
        LevelGraph::from_parts(acc, self_loops)
    }
}

fn renumber(comm: &[usize]) -> Vec<usize> {
    let mut map = HashMap::new();
    comm.iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect()
}

/// Louvain output on an index graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LouvainResult {
    /// Community of each node, contiguous from 0 in order of lowest member.
    pub membership: Vec<usize>,
    pub modularity: f64,
    /// Modularity of the singleton partition followed by the value after
    /// every completed level.
    pub pass_modularity: Vec<f64>,
}

/// Two-phase Louvain on an unweighted undirected graph with `n` nodes.
///
/// Node visit order within each level is a shuffle seeded by `opts.seed`.
/// Local moves take the largest modularity gain and break ties towards the
/// smallest community id; a node only leaves its community for a strictly
/// better one.
pub fn louvain_graph(n: usize, edges: &[(usize, usize)], opts: LouvainOptions) -> LouvainResult {
    let base = LevelGraph::from_edges(n, edges);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut membership: Vec<usize> = (0..n).collect();
    let mut pass_modularity = vec![base.modularity(&membership, opts.resolution)];

    let mut level = base.clone();
    loop {
        let (comm, moved) = level.local_moves(opts.resolution, &mut rng);
        if !moved {
            break;
        }
        for m in membership.iter_mut() {
            *m = comm[*m];
        }
        pass_modularity.push(base.modularity(&membership, opts.resolution));
        level = level.aggregate(&comm);
    }
    let membership = renumber(&membership);
    let modularity = base.modularity(&membership, opts.resolution);
    LouvainResult {
        membership,
        modularity,
        pass_modularity,
    }
}

/// Newman modularity `sum_c (m_c / m - gamma (d_c / 2m)^2)` of an
/// assignment over an index graph.
pub fn modularity_of(n: usize, edges: &[(usize, usize)], membership: &[usize], resolution: f64) -> f64 {
    LevelGraph::from_edges(n, edges).modularity(&renumber(membership), resolution)
}

/// URL to community assignment covering every corpus URL.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Partition {
    assignment: BTreeMap<String, i64>,
    pub modularity: f64,
    pub pass_modularity: Vec<f64>,
}

fn index_network(network: &ValidatedNetwork) -> (Vec<&str>, Vec<(usize, usize)>) {
    let nodes: Vec<&str> = network.nodes.iter().map(String::as_str).collect();
    let pos: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, u)| (*u, i)).collect();
    let mut edges: Vec<(usize, usize)> = network
        .edges
        .iter()
        .map(|e| {
            let (a, b) = (pos[e.url_a.as_str()], pos[e.url_b.as_str()]);
            (a.min(b), a.max(b))
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    (nodes, edges)
}

/// Modularity of the communities of `partition` on `network`.
pub fn modularity(network: &ValidatedNetwork, partition: &Partition) -> Result<f64> {
    let (nodes, edges) = index_network(network);
    let membership = nodes
        .iter()
        .map(|u| match partition.community_of(u) {
            Some(c) if c >= 0 => Ok(c as usize),
            _ => Err(Error::InvalidArgument(format!("{u} has no community"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(modularity_of(nodes.len(), &edges, &membership, 1.0))
}

/// Runs Louvain on the validated network. Every URL in `all_urls` that is
/// not a network node lands in [`UNCLUSTERED`].
pub fn louvain<'a>(
    network: &ValidatedNetwork,
    all_urls: impl IntoIterator<Item = &'a str>,
    opts: LouvainOptions,
) -> Partition {
    let mut assignment: BTreeMap<String, i64> =
        all_urls.into_iter().map(|u| (u.to_string(), UNCLUSTERED)).collect();
    if network.is_empty() {
        return Partition {
            assignment,
            ..Default::default()
        };
    }
    let (nodes, edges) = index_network(network);
    let result = louvain_graph(nodes.len(), &edges, opts);
    for (url, c) in nodes.iter().zip(&result.membership) {
        assignment.insert(url.to_string(), *c as i64);
    }
    Partition {
        assignment,
        modularity: result.modularity,
        pass_modularity: result.pass_modularity,
    }
}

impl Partition {
    pub fn from_assignment(assignment: BTreeMap<String, i64>) -> Self {
        Self {
            assignment,
            ..Default::default()
        }
    }

    pub fn assignment(&self) -> &BTreeMap<String, i64> {
        &self.assignment
    }

    pub fn community_of(&self, url: &str) -> Option<i64> {
        self.assignment.get(url).copied()
    }

    /// Members of every non-reserved community.
    pub fn communities(&self) -> BTreeMap<i64, Vec<&str>> {
        let mut out: BTreeMap<i64, Vec<&str>> = BTreeMap::new();
        for (u, &c) in &self.assignment {
            if c != UNCLUSTERED {
                out.entry(c).or_default().push(u);
            }
        }
        out
    }

    pub fn unclustered(&self) -> Vec<&str> {
        self.members(UNCLUSTERED)
    }

    pub fn members(&self, community: i64) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &c)| c == community)
            .map(|(u, _)| u.as_str())
            .collect()
    }

    pub fn n_communities(&self) -> usize {
        self.communities().len()
    }

    /// `url,community` table.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["url", "community"])?;
        for (u, c) in &self.assignment {
            w.write_record([u.as_str(), &c.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn count_level(urls: &[&str], corpus: &Corpus, kb: &KnowledgeBase, level: TrustLabel) -> usize {
    urls.iter()
        .filter(|u| corpus.publisher_of(u).map(|d| kb.label(d)) == Some(level))
        .count()
}

/// Fraction of a community's URLs whose publisher carries `level`.
pub fn purity(
    partition: &Partition,
    corpus: &Corpus,
    kb: &KnowledgeBase,
    community: i64,
    level: TrustLabel,
) -> Result<f64> {
    let members = partition.members(community);
    if members.is_empty() {
        return Err(Error::Undefined(format!("community {community} is empty")));
    }
    Ok(count_level(&members, corpus, kb, level) as f64 / members.len() as f64)
}

/// Pooled purity over all non-reserved communities.
pub fn overall_purity(
    partition: &Partition,
    corpus: &Corpus,
    kb: &KnowledgeBase,
    level: TrustLabel,
) -> Result<f64> {
    let communities = partition.communities();
    if communities.is_empty() {
        return Err(Error::Undefined("no communities".into()));
    }
    let (hits, total) = communities.values().fold((0, 0), |(h, t), members| {
        (h + count_level(members, corpus, kb, level), t + members.len())
    });
    Ok(hits as f64 / total as f64)
}

/// Purity of the unclustered bucket.
pub fn unclustered_purity(
    partition: &Partition,
    corpus: &Corpus,
    kb: &KnowledgeBase,
    level: TrustLabel,
) -> Result<f64> {
    purity(partition, corpus, kb, UNCLUSTERED, level)
        .map_err(|_| Error::Undefined("no unclustered URLs".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PurityRow {
    /// Community id, `pooled`, or `-1` for the unclustered bucket.
    pub community: String,
    pub n_urls: usize,
    #[serde(rename = "purity_T")]
    pub purity_t: f64,
    #[serde(rename = "purity_N")]
    pub purity_n: f64,
}

/// Purity per community, then the pooled and unclustered rows when defined.
pub fn purity_table(partition: &Partition, corpus: &Corpus, kb: &KnowledgeBase) -> Vec<PurityRow> {
    let mut rows = Vec::new();
    for (id, members) in partition.communities() {
        rows.push(PurityRow {
            community: id.to_string(),
            n_urls: members.len(),
            purity_t: count_level(&members, corpus, kb, TrustLabel::T) as f64 / members.len() as f64,
            purity_n: count_level(&members, corpus, kb, TrustLabel::N) as f64 / members.len() as f64,
        });
    }
    if let (Ok(t), Ok(n)) = (
        overall_purity(partition, corpus, kb, TrustLabel::T),
        overall_purity(partition, corpus, kb, TrustLabel::N),
    ) {
        let n_urls = partition.communities().values().map(Vec::len).sum();
        rows.push(PurityRow {
            community: "pooled".into(),
            n_urls,
            purity_t: t,
            purity_n: n,
        });
    }
    if let (Ok(t), Ok(n)) = (
        unclustered_purity(partition, corpus, kb, TrustLabel::T),
        unclustered_purity(partition, corpus, kb, TrustLabel::N),
    ) {
        rows.push(PurityRow {
            community: UNCLUSTERED.to_string(),
            n_urls: partition.unclustered().len(),
            purity_t: t,
            purity_n: n,
        });
    }
    rows
}

/// One row of the per-community statistics table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NecSummary {
    pub id: i64,
    pub n_users: usize,
    pub n_distinct_urls: usize,
    pub n_publishers: usize,
    /// Share events of member URLs, reposts included.
    pub n_shares: usize,
}

/// Counts per community, sorted by number of users (descending).
pub fn nec_summary(partition: &Partition, corpus: &Corpus) -> Vec<NecSummary> {
    let mut users_of: HashMap<&str, Vec<&str>> = HashMap::new();
    for (user, url, _) in corpus.interactions() {
        users_of.entry(url).or_default().push(user);
    }
    let mut shares: HashMap<&str, usize> = HashMap::new();
    for ev in corpus.share_events() {
        *shares.entry(ev.url.as_str()).or_default() += 1;
    }

    let mut rows: Vec<NecSummary> = partition
        .communities()
        .into_iter()
        .map(|(id, members)| {
            let users: BTreeSet<&str> = members
                .iter()
                .flat_map(|u| users_of.get(u).into_iter().flatten().copied())
                .collect();
            let publishers: BTreeSet<&str> =
                members.iter().filter_map(|u| corpus.publisher_of(u)).collect();
            NecSummary {
                id,
                n_users: users.len(),
                n_distinct_urls: members.len(),
                n_publishers: publishers.len(),
                n_shares: members.iter().map(|u| shares.get(u).copied().unwrap_or(0)).sum(),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.n_users.cmp(&a.n_users).then(a.id.cmp(&b.id)));
    rows
}
