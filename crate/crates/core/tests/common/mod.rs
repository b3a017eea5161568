//! Independent reference computations used by the integration suites.
//! Nothing here calls into the library code under test except for plain
//! data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trustvote::ingest::{PostKind, RawPost};

/// Article identity by string surgery: drop query and fragment, lowercase
/// the host, strip port and one leading `www.`, fold http into https.
pub fn oracle_canonical(url: &str) -> Option<(String, String)> {
    let (scheme, rest) = url.split_once("://")?;
    let scheme = match scheme.to_ascii_lowercase().as_str() {
        "http" => "https".to_string(),
        s => s.to_string(),
    };
    let rest = rest.split(['?', '#']).next().unwrap_or("");
    let (host, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, "/"),
    };
    let host = host.split(':').next()?.to_ascii_lowercase();
    let host = host.strip_prefix("www.").unwrap_or(&host).to_string();
    if host.is_empty() {
        return None;
    }
    Some((format!("{scheme}://{host}{path}"), host))
}

/// Per-user article sets and article-to-domain map, quotes excluded.
pub struct Recount {
    pub user_articles: BTreeMap<String, BTreeSet<String>>,
    pub domain_of: BTreeMap<String, String>,
    pub shares_of: BTreeMap<String, usize>,
}

impl Recount {
    pub fn from_posts(posts: &[RawPost]) -> Self {
        let mut r = Recount {
            user_articles: BTreeMap::new(),
            domain_of: BTreeMap::new(),
            shares_of: BTreeMap::new(),
        };
        for post in posts {
            if post.kind == PostKind::Quote {
                continue;
            }
            for raw in &post.urls {
                let Some((url, domain)) = oracle_canonical(raw) else { continue };
                r.user_articles.entry(post.user_id.clone()).or_default().insert(url.clone());
                r.domain_of.insert(url.clone(), domain);
                *r.shares_of.entry(url).or_default() += 1;
            }
        }
        r
    }

    pub fn diet(&self, user: &str) -> usize {
        self.user_articles[user]
            .iter()
            .map(|u| &self.domain_of[u])
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn publishers_of<'a>(&'a self, users: impl IntoIterator<Item = &'a String>) -> BTreeSet<&'a str> {
        users
            .into_iter()
            .flat_map(|u| self.user_articles[u].iter().map(|a| self.domain_of[a].as_str()))
            .collect()
    }
}

/// All 2^(n m) biadjacency matrices weighted by the independent link
/// probabilities. Returns total mass and mean user and URL degrees.
pub fn enumerate_ensemble(p: &[Vec<f64>]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = p.len();
    let m = p.first().map_or(0, Vec::len);
    let cells = n * m;
    assert!(cells <= 20);
    let (mut total, mut ku, mut ka) = (0.0, vec![0.0; n], vec![0.0; m]);
    for mask in 0u32..(1u32 << cells) {
        let mut w = 1.0;
        for c in 0..cells {
            let q = p[c / m][c % m];
            w *= if mask >> c & 1 == 1 { q } else { 1.0 - q };
        }
        total += w;
        for c in 0..cells {
            if mask >> c & 1 == 1 {
                ku[c / m] += w;
                ka[c % m] += w;
            }
        }
    }
    (total, ku, ka)
}

/// `P(S >= k)` for every k by enumerating all 2^n outcomes.
pub fn enumerate_tails(probs: &[f64]) -> Vec<f64> {
    let n = probs.len();
    assert!(n <= 20);
    let mut pmf = vec![0.0; n + 1];
    for mask in 0u32..(1u32 << n) {
        let mut w = 1.0;
        for (i, &q) in probs.iter().enumerate() {
            w *= if mask >> i & 1 == 1 { q } else { 1.0 - q };
        }
        pmf[mask.count_ones() as usize] += w;
    }
    let mut tails = vec![0.0; n + 2];
    for k in (0..=n).rev() {
        tails[k] = tails[k + 1] + pmf[k];
    }
    tails.truncate(n + 1);
    tails
}

/// Indices rejected by Benjamini-Hochberg, straight from the definition:
/// find the largest rank r with p_(r) <= r alpha / m and reject every
/// hypothesis whose p-value is at most p_(r).
pub fn brute_force_bh(pvalues: &[f64], alpha: f64, m: usize) -> BTreeSet<usize> {
    let mut order: Vec<usize> = (0..pvalues.len()).collect();
    order.sort_by(|&a, &b| pvalues[a].partial_cmp(&pvalues[b]).unwrap());
    let mut cutoff = None;
    for r in 1..=order.len() {
        let p = pvalues[order[r - 1]];
        if p <= r as f64 * alpha / m as f64 {
            cutoff = Some(p);
        }
    }
    match cutoff {
        Some(c) => (0..pvalues.len()).filter(|&i| pvalues[i] <= c).collect(),
        None => BTreeSet::new(),
    }
}

/// Random bipartite links. With `heterogeneous`, node propensities follow a
/// Pareto law so degrees spread over orders of magnitude.
pub fn random_links(n: usize, m: usize, density: f64, heterogeneous: bool, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
        if heterogeneous {
            (0..len).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / 2.5)).collect()
        } else {
            vec![1.0; len]
        }
    };
    let (wu, wa) = (weights(&mut rng, n), weights(&mut rng, m));
    let (su, sa) = (wu.iter().sum::<f64>() / n as f64, wa.iter().sum::<f64>() / m as f64);
    let mut links = Vec::new();
    for i in 0..n {
        for a in 0..m {
            let p = (density * wu[i] / su * wa[a] / sa).min(1.0);
            if rng.random::<f64>() < p {
                links.push((i, a));
            }
        }
    }
    links
}

pub fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:05}")).collect()
}
