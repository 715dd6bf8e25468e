//! Set-sequence corpora and per-user sample preparation.
//!
//! A corpus is a list of users, each with an ordered list of element sets.
//! The final set of every user is the prediction target; everything before
//! it is history. [`prepare_sample`] turns one user into the membership
//! matrix the model consumes.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    /// Each set is sorted ascending and duplicate free.
    pub sets: Vec<Vec<usize>>,
}

impl UserRecord {
    pub fn history(&self) -> &[Vec<usize>] {
        &self.sets[..self.sets.len().saturating_sub(1)]
    }

    pub fn target(&self) -> &[usize] {
        self.sets.last().map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub vocab_size: usize,
    pub users: Vec<UserRecord>,
}

/// What [`load_corpus`] had to clean up.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub duplicate_ids_removed: usize,
    pub empty_sets_dropped: usize,
    pub users_dropped: usize,
}

#[derive(Deserialize)]
struct RawUser {
    user_id: String,
    sets: Vec<Vec<i64>>,
}

#[derive(Deserialize)]
struct RawCorpus {
    vocab_size: i64,
    users: Vec<RawUser>,
}

impl Corpus {
    /// Parse and validate the JSON corpus format.
    pub fn from_json(text: &str) -> Result<(Self, LoadReport)> {
        let raw: RawCorpus = serde_json::from_str(text).map_err(|e| Error::Load(format!("malformed corpus: {e}")))?;
        if raw.vocab_size <= 0 {
            return Err(Error::Load(format!(
                "vocab_size must be positive, got {}",
                raw.vocab_size
            )));
        }
        let vocab_size = raw.vocab_size as usize;
        let mut report = LoadReport::default();
        let mut users = Vec::with_capacity(raw.users.len());
        for user in raw.users {
            let mut sets = Vec::with_capacity(user.sets.len());
            for (set_idx, set) in user.sets.into_iter().enumerate() {
                let mut clean = BTreeSet::new();
                for (offset, id) in set.iter().enumerate() {
                    if *id < 0 || *id as u64 >= vocab_size as u64 {
                        return Err(Error::Load(format!(
                            "user `{}`, set {set_idx}, offset {offset}: id {id} outside [0, {vocab_size})",
                            user.user_id
                        )));
                    }
                    if !clean.insert(*id as usize) {
                        report.duplicate_ids_removed += 1;
                    }
                }
                if clean.is_empty() {
                    report.empty_sets_dropped += 1;
                } else {
                    sets.push(clean.into_iter().collect());
                }
            }
            if sets.len() < 2 {
                report.users_dropped += 1;
                continue;
            }
            users.push(UserRecord {
                user_id: user.user_id,
                sets,
            });
        }
        Ok((Corpus { vocab_size, users }, report))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Longest history (sets minus the target) over all users.
    pub fn max_history_len(&self) -> usize {
        self.users.iter().map(|u| u.sets.len() - 1).max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

pub fn load_corpus(path: &Path) -> Result<(Corpus, LoadReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_json(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
}

/// Shuffle users with `seed` and cut them into train/val/test. Train and
/// validation sizes are floored; the test part takes the remainder.
pub fn split_users(corpus: &Corpus, ratios: SplitRatios, seed: u64) -> Result<Split> {
    let SplitRatios { train, val, test } = ratios;
    if !(train > 0.0 && val > 0.0 && test > 0.0) {
        return Err(Error::Split(format!(
            "ratios must be positive, got {train}/{val}/{test}"
        )));
    }
    if (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!(
            "ratios must sum to 1, got {}",
            train + val + test
        )));
    }
    let n = corpus.users.len();
    // the epsilon keeps 10 * 0.7 from flooring to 6
    let n_train = (n as f64 * train + 1e-9).floor() as usize;
    let n_val = (n as f64 * val + 1e-9).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Split(format!(
            "{n} users cannot fill all three parts with ratios {train}/{val}/{test}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng_for(seed, "split"));
    let take = |idx: &[usize]| Corpus {
        vocab_size: corpus.vocab_size,
        users: idx.iter().map(|&i| corpus.users[i].clone()).collect(),
    };
    Ok(Split {
        train: take(&order[..n_train]),
        val: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
    })
}

/// One user's history laid out for the network.
///
/// Row `i` of `membership` describes domain element `index_map[i]`; column
/// `j` is a time step. Histories shorter than `K` are left-padded with
/// all-zero columns. `prepare_sample` emits rows in ascending id order, but
/// any consistent reordering of `index_map` and `membership` rows is an
/// equally valid sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub index_map: Vec<usize>,
    pub membership: Matrix,
    /// Sorted ids of the target set; empty when predicting.
    pub target: Vec<usize>,
    pub vocab_size: usize,
    /// Number of history columns actually used (T, after truncation).
    pub history_len: usize,
}

impl PreparedSample {
    /// Build from explicit history sets; keeps only the `max_len` most recent.
    pub fn from_history(history: &[Vec<usize>], target: &[usize], max_len: usize, vocab_size: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Sample("K must be at least 1".into()));
        }
        if history.is_empty() {
            return Err(Error::Sample("history is empty".into()));
        }
        let kept = &history[history.len().saturating_sub(max_len)..];
        let universe: BTreeSet<usize> = kept.iter().flatten().copied().collect();
        if universe.is_empty() {
            return Err(Error::Sample("history contains no elements".into()));
        }
        if let Some(&bad) = universe.iter().chain(target).find(|&&id| id >= vocab_size) {
            return Err(Error::Sample(format!(
                "element id {bad} outside vocabulary of {vocab_size}"
            )));
        }
        let index_map: Vec<usize> = universe.into_iter().collect();
        let row_of: HashMap<usize, usize> = index_map.iter().enumerate().map(|(r, &id)| (id, r)).collect();
        let pad = max_len - kept.len();
        let mut membership = Matrix::zeros(index_map.len(), max_len);
        for (t, set) in kept.iter().enumerate() {
            for id in set {
                membership[(row_of[id], pad + t)] = 1.0;
            }
        }
        let mut target = target.to_vec();
        target.sort_unstable();
        target.dedup();
        Ok(Self {
            index_map,
            membership,
            target,
            vocab_size,
            history_len: kept.len(),
        })
    }

    /// N, the number of distinct elements in the history.
    pub fn universe_size(&self) -> usize {
        self.index_map.len()
    }

    pub fn max_len(&self) -> usize {
        self.membership.cols()
    }

    pub fn target_multi_hot(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.vocab_size];
        for &id in &self.target {
            y[id] = 1.0;
        }
        y
    }

    /// Same sample with universe rows enumerated in `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            index_map: order.iter().map(|&i| self.index_map[i]).collect(),
            membership: self.membership.select_rows(order),
            ..self.clone()
        }
    }
}

/// History = every set but the last; target = the last set.
pub fn prepare_sample(user: &UserRecord, max_len: usize, vocab_size: usize) -> Result<PreparedSample> {
    if user.sets.len() < 2 {
        return Err(Error::Sample(format!(
            "user `{}` has {} set(s); need at least one history set and a target",
            user.user_id,
            user.sets.len()
        )));
    }
    PreparedSample::from_history(user.history(), user.target(), max_len, vocab_size)
}

pub fn prepare_corpus(corpus: &Corpus, max_len: usize) -> Result<Vec<PreparedSample>> {
    corpus
        .users
        .iter()
        .map(|u| prepare_sample(u, max_len, corpus.vocab_size))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    /// Every set of a user is the same basket.
    Periodic,
    /// Sets are drawn mostly from a small personal pool.
    RepeatBiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub users: usize,
    pub vocab_size: usize,
    /// History length; users get `history_len + 1` sets (periodic) or a
    /// random count in `2..=history_len + 1` (repeat-biased).
    pub history_len: usize,
    pub pattern: Pattern,
    pub seed: u64,
}

pub const REPEAT_PROBABILITY: f64 = 0.8;
const POOL_SIZE: usize = 8;

/// Generate a corpus with known structure.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    if spec.vocab_size < 10 {
        return Err(Error::Config(format!(
            "synthetic vocab must be >= 10, got {}",
            spec.vocab_size
        )));
    }
    if spec.users == 0 || spec.history_len == 0 {
        return Err(Error::Config(
            "synthetic corpus needs >= 1 user and history_len >= 1".into(),
        ));
    }
    let mut rng = seed::rng_for(spec.seed, "synthetic");
    let all: Vec<usize> = (0..spec.vocab_size).collect();
    let users = (0..spec.users)
        .map(|u| {
            let sets = match spec.pattern {
                Pattern::Periodic => {
                    let size = rng.random_range(3..=5);
                    let mut basket: Vec<usize> = all.choose_multiple(&mut rng, size).copied().collect();
                    basket.sort_unstable();
                    vec![basket; spec.history_len + 1]
                }
                Pattern::RepeatBiased => {
                    let pool: Vec<usize> = all.choose_multiple(&mut rng, POOL_SIZE).copied().collect();
                    let count = rng.random_range(2..=spec.history_len + 1);
                    (0..count)
                        .map(|_| {
                            let size = rng.random_range(3..=5);
                            draw_repeat_biased_set(&mut rng, &pool, spec.vocab_size, size).0
                        })
                        .collect()
                }
            };
            UserRecord {
                user_id: format!("u{u}"),
                sets,
            }
        })
        .collect();
    Ok(Corpus {
        vocab_size: spec.vocab_size,
        users,
    })
}

/// Returns the sorted set and how many of its slots came from the pool branch.
fn draw_repeat_biased_set(rng: &mut impl Rng, pool: &[usize], vocab: usize, size: usize) -> (Vec<usize>, usize) {
    let mut set = BTreeSet::new();
    let mut from_pool = 0;
    while set.len() < size {
        if rng.random_bool(REPEAT_PROBABILITY) {
            let fresh: Vec<usize> = pool.iter().copied().filter(|id| !set.contains(id)).collect();
            if let Some(&id) = fresh.choose(rng) {
                set.insert(id);
                from_pool += 1;
                continue;
            }
        }
        loop {
            let id = rng.random_range(0..vocab);
            if set.insert(id) {
                break;
            }
        }
    }
    (set.into_iter().collect(), from_pool)
}

/// Column names used when converting a flat interaction dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvertOptions {
    pub user_column: String,
    pub set_column: String,
    pub item_column: String,
    pub delimiter: u8,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        Self {
            user_column: "user_id".into(),
            set_column: "order_id".into(),
            item_column: "item_id".into(),
            delimiter: b',',
        }
    }
}

/// Dense item vocabulary written next to a converted corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    pub vocab_size: usize,
    /// `items[id]` is the original item label.
    pub items: Vec<String>,
}

/// Orders labels numerically when every label parses as a number.
fn sort_labels(labels: &mut [String]) {
    if labels.iter().all(|l| l.trim().parse::<f64>().is_ok()) {
        labels.sort_by(|a, b| {
            let (x, y): (f64, f64) = (a.trim().parse().unwrap(), b.trim().parse().unwrap());
            x.total_cmp(&y).then_with(|| a.cmp(b))
        });
    } else {
        labels.sort();
    }
}

/// Group rows of a delimited dump by user, then by set key, and remap items
/// to a dense 0-based vocabulary.
pub fn convert_interactions<R: std::io::Read>(reader: R, opts: &ConvertOptions) -> Result<(Corpus, Vocab)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Load(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Load(format!("column `{name}` not found in header {headers:?}")))
    };
    let (uc, sc, ic) = (col(&opts.user_column)?, col(&opts.set_column)?, col(&opts.item_column)?);

    let mut grouped: HashMap<String, HashMap<String, BTreeSet<String>>> = HashMap::new();
    let mut item_labels = BTreeSet::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Load(format!("record {}: {e}", line + 1)))?;
        let field = |c: usize| rec.get(c).unwrap_or("").to_string();
        let (user, set, item) = (field(uc), field(sc), field(ic));
        if user.is_empty() || set.is_empty() || item.is_empty() {
            continue;
        }
        item_labels.insert(item.clone());
        grouped.entry(user).or_default().entry(set).or_default().insert(item);
    }

    let mut items: Vec<String> = item_labels.into_iter().collect();
    sort_labels(&mut items);
    let id_of: HashMap<&str, usize> = items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut user_ids: Vec<String> = grouped.keys().cloned().collect();
    sort_labels(&mut user_ids);
    let mut users = Vec::new();
    for uid in user_ids {
        let sets_by_key = &grouped[&uid];
        let mut keys: Vec<String> = sets_by_key.keys().cloned().collect();
        sort_labels(&mut keys);
        let sets: Vec<Vec<usize>> = keys
            .iter()
            .map(|k| {
                let mut s: Vec<usize> = sets_by_key[k].iter().map(|i| id_of[i.as_str()]).collect();
                s.sort_unstable();
                s
            })
            .collect();
        if sets.len() >= 2 {
            users.push(UserRecord { user_id: uid, sets });
        }
    }
    let vocab = Vocab {
        vocab_size: items.len(),
        items,
    };
    Ok((
        Corpus {
            vocab_size: vocab.vocab_size,
            users,
        },
        vocab,
    ))
}
