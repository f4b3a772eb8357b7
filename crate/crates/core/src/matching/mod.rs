//! Cross-view matching strategies.
//!
//! Three pixel-to-pixel strategies pair equal-size sets one-to-one:
//! [`match_random`], [`match_sort`] and [`match_hungarian`]. They first
//! truncate both attention sets to `k = min(|Ω_q|, |Ω_k|)`, keeping the
//! highest-attention entries. The two set strategies keep the sets whole:
//! [`match_set2set`] links every query index to all of `Ω_k`, and
//! [`match_set2set_nn`] adds each query's nearest neighbour on the full key
//! grid.

mod hungarian;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use hungarian::{assignment_cost, hungarian_solve};

use crate::error::{Error, Result};
use crate::tensor::{channels_and_positions, column, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "sort")]
    Sort,
    #[serde(rename = "hungarian")]
    Hungarian,
    #[serde(rename = "set2set")]
    Set2Set,
    #[serde(rename = "set2set-nn")]
    Set2SetNN,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Random,
        Strategy::Sort,
        Strategy::Hungarian,
        Strategy::Set2Set,
        Strategy::Set2SetNN,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Sort => "sort",
            Strategy::Hungarian => "hungarian",
            Strategy::Set2Set => "set2set",
            Strategy::Set2SetNN => "set2set-nn",
        }
    }

    pub fn is_pixel_to_pixel(self) -> bool {
        matches!(self, Strategy::Random | Strategy::Sort | Strategy::Hungarian)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(
                    "strategy",
                    format!("unknown strategy `{s}` (expected random, sort, hungarian, set2set or set2set-nn)"),
                )
            })
    }
}

/// The key indices `c_i` matched to one query index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correspondence {
    pub query: usize,
    pub keys: Vec<usize>,
    /// Key index contributed only by the nearest-neighbour search, i.e. not
    /// already in `Ω_k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nn_added: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub strategy: Strategy,
    pub entries: Vec<Correspondence>,
}

impl CorrespondenceSet {
    /// All `(query, key)` pairs in entry order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.entries
            .iter()
            .flat_map(|e| e.keys.iter().map(move |&k| (e.query, k)))
            .collect()
    }

    /// `Σ |c_i|`.
    pub fn pair_count(&self) -> usize {
        self.entries.iter().map(|e| e.keys.len()).sum()
    }

    /// Checks index bounds against grids of `query_positions` and
    /// `key_positions` cells.
    pub fn validate(&self, query_positions: usize, key_positions: usize) -> Result<()> {
        for e in &self.entries {
            if e.query >= query_positions || e.keys.iter().any(|&k| k >= key_positions) {
                return Err(Error::invalid(
                    "correspondence",
                    format!("entry {e:?} exceeds grid sizes {query_positions}/{key_positions}"),
                ));
            }
            if e.keys.is_empty() {
                return Err(Error::invalid(
                    "correspondence",
                    format!("query {} has no keys", e.query),
                ));
            }
        }
        Ok(())
    }

    /// One entry per `(query, key)` pair, each with a single key.
    pub fn one_to_one(strategy: Strategy, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        CorrespondenceSet {
            strategy,
            entries: pairs
                .into_iter()
                .map(|(q, k)| Correspondence {
                    query: q,
                    keys: vec![k],
                    nn_added: None,
                })
                .collect(),
        }
    }
}

/// `uᵀv / (‖u‖‖v‖)`, defined as 0 when either vector is zero.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine_similarity length mismatch");
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return 0.0;
    }
    (uv / (uu * vv).sqrt()).clamp(-1.0, 1.0)
}

fn require_non_empty(omega_q: &[usize], omega_k: &[usize]) -> Result<()> {
    if omega_q.is_empty() || omega_k.is_empty() {
        return Err(Error::invalid("omega", "corresponding sets must be non-empty"));
    }
    Ok(())
}

fn truncated<'a>(omega_q: &'a [usize], omega_k: &'a [usize]) -> (&'a [usize], &'a [usize]) {
    let k = omega_q.len().min(omega_k.len());
    (&omega_q[..k], &omega_k[..k])
}

/// Pairs the truncated sets after a seeded uniform shuffle of the key side.
/// The sets are expected in attention order, as produced by
/// [`select_set`](crate::attention::select_set).
pub fn match_random(omega_q: &[usize], omega_k: &[usize], seed: u64) -> Result<CorrespondenceSet> {
    require_non_empty(omega_q, omega_k)?;
    let (q, k) = truncated(omega_q, omega_k);
    let mut keys = k.to_vec();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(CorrespondenceSet::one_to_one(
        Strategy::Random,
        q.iter().copied().zip(keys),
    ))
}

fn rank_by_attention(omega: &[usize], rescaled: &Tensor) -> Result<Vec<usize>> {
    let values = rescaled.data();
    if let Some(&bad) = omega.iter().find(|&&j| j >= values.len()) {
        return Err(Error::invalid(
            "omega",
            format!("index {bad} outside a {}-cell map", values.len()),
        ));
    }
    let mut ranked = omega.to_vec();
    ranked.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    Ok(ranked)
}

/// Pairs rank `r` of the query set with rank `r` of the key set, ranking by
/// rescaled attention (descending, ties by ascending index).
pub fn match_sort(
    omega_q: &[usize],
    omega_k: &[usize],
    rescaled_q: &Tensor,
    rescaled_k: &Tensor,
) -> Result<CorrespondenceSet> {
    require_non_empty(omega_q, omega_k)?;
    let q = rank_by_attention(omega_q, rescaled_q)?;
    let k = rank_by_attention(omega_k, rescaled_k)?;
    let (q, k) = truncated(&q, &k);
    Ok(CorrespondenceSet::one_to_one(
        Strategy::Sort,
        q.iter().copied().zip(k.iter().copied()),
    ))
}

/// Minimum total cosine distance matching of the truncated sets, using the
/// projected maps `p_q`, `p_k` (`C′×H×W`).
pub fn match_hungarian(omega_q: &[usize], omega_k: &[usize], p_q: &Tensor, p_k: &Tensor) -> Result<CorrespondenceSet> {
    require_non_empty(omega_q, omega_k)?;
    check_indices(omega_q, p_q)?;
    check_indices(omega_k, p_k)?;
    let (q, k) = truncated(omega_q, omega_k);
    let n = q.len();
    let q_cols: Vec<Vec<f64>> = q.iter().map(|&i| column(p_q, i)).collect();
    let k_cols: Vec<Vec<f64>> = k.iter().map(|&j| column(p_k, j)).collect();
    let cost = Tensor::from_fn(&[n, n], |idx| {
        1.0 - cosine_similarity(&q_cols[idx / n], &k_cols[idx % n])
    });
    let assignment = hungarian_solve(&cost)?;
    Ok(CorrespondenceSet::one_to_one(
        Strategy::Hungarian,
        q.iter().zip(assignment).map(|(&qi, a)| (qi, k[a])),
    ))
}

/// Every query index paired with the whole key set.
pub fn match_set2set(omega_q: &[usize], omega_k: &[usize]) -> Result<CorrespondenceSet> {
    require_non_empty(omega_q, omega_k)?;
    Ok(CorrespondenceSet {
        strategy: Strategy::Set2Set,
        entries: omega_q
            .iter()
            .map(|&q| Correspondence {
                query: q,
                keys: omega_k.to_vec(),
                nn_added: None,
            })
            .collect(),
    })
}

fn check_indices(omega: &[usize], map: &Tensor) -> Result<()> {
    let (_, hw) = channels_and_positions(map);
    match omega.iter().find(|&&j| j >= hw) {
        Some(bad) => Err(Error::invalid("omega", format!("index {bad} outside a {hw}-cell grid"))),
        None => Ok(()),
    }
}

/// Key position whose backbone feature is most cosine-similar to the query
/// feature at `i`, scanning the full key grid. Ties go to the lower index.
pub fn nearest_neighbor(z_q: &Tensor, z_k: &Tensor, i: usize) -> Result<usize> {
    let (cq, hw_q) = channels_and_positions(z_q);
    let (ck, hw_k) = channels_and_positions(z_k);
    if cq != ck {
        return Err(Error::shape("nearest_neighbor", format!("channel counts {cq} vs {ck}")));
    }
    if i >= hw_q {
        return Err(Error::invalid(
            "i",
            format!("query index {i} outside a {hw_q}-cell grid"),
        ));
    }
    let query = column(z_q, i);
    let mut best = (0, f64::NEG_INFINITY);
    for j in 0..hw_k {
        let s = cosine_similarity(&query, &column(z_k, j));
        if s > best.1 {
            best = (j, s);
        }
    }
    Ok(best.0)
}

/// `c_i = Ω_k ∪ {n_i}` for each query index.
pub fn match_set2set_nn(omega_q: &[usize], omega_k: &[usize], z_q: &Tensor, z_k: &Tensor) -> Result<CorrespondenceSet> {
    require_non_empty(omega_q, omega_k)?;
    let mut entries = Vec::with_capacity(omega_q.len());
    for &q in omega_q {
        let nn = nearest_neighbor(z_q, z_k, q)?;
        let mut keys = omega_k.to_vec();
        let nn_added = if keys.contains(&nn) {
            None
        } else {
            keys.push(nn);
            Some(nn)
        };
        entries.push(Correspondence {
            query: q,
            keys,
            nn_added,
        });
    }
    Ok(CorrespondenceSet {
        strategy: Strategy::Set2SetNN,
        entries,
    })
}

/// Everything any strategy may consult for one view pair.
#[derive(Debug, Clone, Copy)]
pub struct MatchInputs<'a> {
    pub omega_q: &'a [usize],
    pub omega_k: &'a [usize],
    pub rescaled_q: &'a Tensor,
    pub rescaled_k: &'a Tensor,
    pub z_q: &'a Tensor,
    pub z_k: &'a Tensor,
    pub p_q: &'a Tensor,
    pub p_k: &'a Tensor,
}

/// Dispatches to the strategy's matcher. `seed` is used by `Random` only.
pub fn match_views(strategy: Strategy, inputs: &MatchInputs<'_>, seed: u64) -> Result<CorrespondenceSet> {
    match strategy {
        Strategy::Random => match_random(inputs.omega_q, inputs.omega_k, seed),
        Strategy::Sort => match_sort(inputs.omega_q, inputs.omega_k, inputs.rescaled_q, inputs.rescaled_k),
        Strategy::Hungarian => match_hungarian(inputs.omega_q, inputs.omega_k, inputs.p_q, inputs.p_k),
        Strategy::Set2Set => match_set2set(inputs.omega_q, inputs.omega_k),
        Strategy::Set2SetNN => match_set2set_nn(inputs.omega_q, inputs.omega_k, inputs.z_q, inputs.z_k),
    }
}
