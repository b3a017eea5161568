//! Voter selection and characterization.
//!
//! Discussion Supporters are users who shared at least one URL of the
//! validated network. Each strategy pairs a voter set with the article set
//! used to characterize a voter; the characterization value is the mean
//! publisher trust score over the distinct scored articles in that set.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Corpus, KnowledgeBase};
use crate::projection::ValidatedNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Voters: Discussion Supporters. Articles: their validated URLs only.
    #[serde(rename = "DS-URL-NEC")]
    DsUrlNec,
    /// Voters: Discussion Supporters. Articles: everything they shared.
    #[serde(rename = "DS-ALL")]
    DsAll,
    /// Voters: every other user. Articles: everything they shared.
    #[serde(rename = "DS-ALL-WO-USR-NEC")]
    DsAllWoUsrNec,
    /// Voters: all users. Articles: everything they shared.
    #[serde(rename = "USERS-ALL")]
    UsersAll,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::DsUrlNec,
        StrategyKind::DsAll,
        StrategyKind::DsAllWoUsrNec,
        StrategyKind::UsersAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::DsUrlNec => "DS-URL-NEC",
            StrategyKind::DsAll => "DS-ALL",
            StrategyKind::DsAllWoUsrNec => "DS-ALL-WO-USR-NEC",
            StrategyKind::UsersAll => "USERS-ALL",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('_', "-");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

/// Users with at least one interaction on a validated URL.
pub fn discussion_supporters(corpus: &Corpus, validated: &ValidatedNetwork) -> BTreeSet<String> {
    corpus
        .user_articles()
        .iter()
        .filter(|(_, urls)| urls.iter().any(|u| validated.contains(u)))
        .map(|(user, _)| user.clone())
        .collect()
}

pub fn select_voters(
    strategy: StrategyKind,
    corpus: &Corpus,
    validated: &ValidatedNetwork,
) -> BTreeSet<String> {
    match strategy {
        StrategyKind::DsUrlNec | StrategyKind::DsAll => discussion_supporters(corpus, validated),
        StrategyKind::DsAllWoUsrNec => {
            let ds = discussion_supporters(corpus, validated);
            corpus.users().filter(|u| !ds.contains(*u)).map(str::to_string).collect()
        }
        StrategyKind::UsersAll => corpus.users().map(str::to_string).collect(),
    }
}

/// Articles used to characterize `voter` under `strategy`.
pub fn article_set<'a>(
    voter: &str,
    strategy: StrategyKind,
    corpus: &'a Corpus,
    validated: &ValidatedNetwork,
) -> BTreeSet<&'a str> {
    let all = corpus.articles_of(voter);
    match strategy {
        StrategyKind::DsUrlNec => all.filter(|u| validated.contains(u)).collect(),
        _ => all.collect(),
    }
}

/// Mean publisher score over the scored articles. `None` if none is scored.
pub fn mean_article_score<'a>(
    articles: impl IntoIterator<Item = &'a str>,
    corpus: &Corpus,
    kb: &KnowledgeBase,
) -> Option<f64> {
    let (sum, n) = articles
        .into_iter()
        .filter_map(|u| corpus.publisher_of(u).and_then(|d| kb.score(d)))
        .fold((0u64, 0u64), |(s, n), score| (s + u64::from(score), n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

pub fn characterize(
    voter: &str,
    strategy: StrategyKind,
    corpus: &Corpus,
    validated: &ValidatedNetwork,
    kb: &KnowledgeBase,
) -> Option<f64> {
    mean_article_score(article_set(voter, strategy, corpus, validated), corpus, kb)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoterProfile {
    pub user_id: String,
    pub strategy: StrategyKind,
    pub articles: BTreeSet<String>,
    pub value: Option<f64>,
    /// Distinct publishers over the whole corpus, independent of strategy.
    pub diet: usize,
}

/// Selects and characterizes every voter of a strategy.
pub fn profile_voters(
    strategy: StrategyKind,
    corpus: &Corpus,
    validated: &ValidatedNetwork,
    kb: &KnowledgeBase,
) -> Vec<VoterProfile> {
    select_voters(strategy, corpus, validated)
        .into_iter()
        .map(|user| {
            let articles = article_set(&user, strategy, corpus, validated);
            let value = mean_article_score(articles.iter().copied(), corpus, kb);
            VoterProfile {
                diet: corpus.publishers_of(&user).len(),
                articles: articles.into_iter().map(str::to_string).collect(),
                strategy,
                value,
                user_id: user,
            }
        })
        .collect()
}

/// Voters whose information diet is at least `theta` publishers.
pub fn filter_min_publishers(voters: &[VoterProfile], theta: usize) -> Vec<&VoterProfile> {
    voters.iter().filter(|v| v.diet >= theta).collect()
}

/// `user_id,strategy,value,diet,n_articles`; undefined values are empty.
pub fn write_voter_table<'a>(
    path: impl AsRef<Path>,
    voters: impl IntoIterator<Item = &'a VoterProfile>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "strategy", "value", "diet", "n_articles"])?;
    for v in voters {
        w.write_record([
            v.user_id.as_str(),
            v.strategy.name(),
            &v.value.map(|x| x.to_string()).unwrap_or_default(),
            &v.diet.to_string(),
            &v.articles.len().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
