//! Planted two-block corpora for end-to-end checks.
//!
//! Each user block prefers the URLs of one publisher pool: pool T draws
//! scores in [70, 95], pool N in [10, 50]. A fraction of publishers is
//! withheld from the knowledge base (UNC); their hidden scores are kept in
//! the ground-truth table.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{KnowledgeBase, PostKind, RawPost, TrustLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub users_per_block: usize,
    pub publishers_per_pool: usize,
    pub urls_per_publisher: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub unc_fraction: f64,
    /// Probability that a share is followed by a retweet of the same URL.
    pub retweet_rate: f64,
    /// Probability that a user also posts a quote of a random URL.
    pub quote_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users_per_block: 200,
            publishers_per_pool: 15,
            urls_per_publisher: 10,
            p_in: 0.05,
            p_out: 0.005,
            unc_fraction: 0.2,
            retweet_rate: 0.1,
            quote_rate: 0.05,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} = {p} outside [0, 1]")))
            }
        };
        prob("p_in", self.p_in)?;
        prob("p_out", self.p_out)?;
        prob("unc_fraction", self.unc_fraction)?;
        prob("retweet_rate", self.retweet_rate)?;
        prob("quote_rate", self.quote_rate)?;
        if self.p_in <= self.p_out {
            return Err(Error::InvalidArgument("p_in must exceed p_out".into()));
        }
        if self.users_per_block == 0 || self.publishers_per_pool == 0 || self.urls_per_publisher == 0 {
            return Err(Error::InvalidArgument("block, pool and URL counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublisherTruth {
    pub domain: String,
    /// Pool index: 0 for T, 1 for N.
    pub pool: usize,
    pub score: u8,
    pub withheld: bool,
}

impl PublisherTruth {
    pub fn label(&self) -> TrustLabel {
        TrustLabel::from_score(Some(self.score))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub posts: Vec<RawPost>,
    pub publishers: Vec<PublisherTruth>,
    /// User id to block index.
    pub blocks: BTreeMap<String, usize>,
}

impl SyntheticCorpus {
    pub fn knowledge_base(&self) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        for p in self.publishers.iter().filter(|p| !p.withheld) {
            kb.insert(&p.domain, Some(p.score)).expect("scores within range");
        }
        kb
    }

    pub fn write_posts(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for post in &self.posts {
            serde_json::to_writer(&mut w, post)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `domain,score`, withheld publishers omitted.
    pub fn write_knowledge_base(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["domain", "score"])?;
        for p in self.publishers.iter().filter(|p| !p.withheld) {
            w.write_record([p.domain.as_str(), &p.score.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `domain,pool,score,withheld`.
    pub fn write_truth(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.publishers {
            w.serialize(p)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn url_for(rng: &mut ChaCha8Rng, domain: &str, article: usize) -> String {
    match rng.random_range(0..4) {
        0 => format!("https://www.{domain}/news/{article}"),
        1 => format!("https://{domain}/news/{article}?utm_source=feed"),
        2 => format!("http://{domain}/news/{article}#top"),
        _ => format!("https://{domain}/news/{article}"),
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_pub = 2 * spec.publishers_per_pool;

    let mut publishers: Vec<PublisherTruth> = (0..n_pub)
        .map(|i| {
            let pool = i / spec.publishers_per_pool;
            let score = if pool == 0 {
                rng.random_range(70..=95)
            } else {
                rng.random_range(10..=50)
            };
            PublisherTruth {
                domain: format!("site{i:02}.example"),
                pool,
                score,
                withheld: false,
            }
        })
        .collect();
    let n_unc = (spec.unc_fraction * n_pub as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_pub).collect();
    order.shuffle(&mut rng);
    for &i in &order[..n_unc] {
        publishers[i].withheld = true;
    }

    // (pool, domain, article index)
    let articles: Vec<(usize, usize, usize)> = publishers
        .iter()
        .enumerate()
        .flat_map(|(p, truth)| (0..spec.urls_per_publisher).map(move |j| (truth.pool, p, j)))
        .collect();

    let mut posts = Vec::new();
    let mut blocks = BTreeMap::new();
    let mut next_id = 0u64;
    let mut push = |posts: &mut Vec<RawPost>, user: &str, url: String, kind: PostKind| {
        posts.push(RawPost {
            post_id: format!("p{next_id:07}"),
            user_id: user.to_string(),
            timestamp: 1_600_000_000 + next_id as i64,
            urls: vec![url],
            kind,
        });
        next_id += 1;
    };

    for block in 0..2 {
        for u in 0..spec.users_per_block {
            let user = format!("u{block}{u:04}");
            blocks.insert(user.clone(), block);
            for &(pool, p, j) in &articles {
                let prob = if pool == block { spec.p_in } else { spec.p_out };
                if rng.random::<f64>() >= prob {
                    continue;
                }
                let url = url_for(&mut rng, &publishers[p].domain, j);
                push(&mut posts, &user, url, PostKind::Original);
                if rng.random::<f64>() < spec.retweet_rate {
                    let url = url_for(&mut rng, &publishers[p].domain, j);
                    push(&mut posts, &user, url, PostKind::Retweet);
                }
            }
            if rng.random::<f64>() < spec.quote_rate {
                let &(_, p, j) = &articles[rng.random_range(0..articles.len())];
                let url = url_for(&mut rng, &publishers[p].domain, j);
                push(&mut posts, &user, url, PostKind::Quote);
            }
        }
    }
    Ok(SyntheticCorpus {
        posts,
        publishers,
        blocks,
    })
}
