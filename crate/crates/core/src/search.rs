//! Bit-packed Hamming retrieval and the evaluation protocol.
//!
//! Codes are packed into `u64` words, one bit per code bit: bit `i` of a code
//! (zero-based) lives at position `i % 64` of word `i / 64`; `+1` is a set bit
//! and `-1` a cleared bit. Unused high bits of the last word are always zero,
//! so they never contribute to a distance.

use std::io::Write;

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A set of packed binary codes of equal length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    bits: usize,
    count: usize,
    words: Vec<u64>,
}

/// Borrowed view of one packed code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeRef<'a> {
    pub bits: usize,
    pub words: &'a [u64],
}

pub fn words_per_code(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl PackedCodes {
    pub fn pack(codes: &CodeMatrix) -> Self {
        let bits = codes.bits();
        let wpc = words_per_code(bits);
        let mut words = vec![0u64; wpc * codes.samples()];
        for j in 0..codes.samples() {
            let out = &mut words[j * wpc..(j + 1) * wpc];
            for (i, &v) in codes.column(j).iter().enumerate() {
                if v > 0 {
                    out[i / 64] |= 1u64 << (i % 64);
                }
            }
        }
        Self {
            bits,
            count: codes.samples(),
            words,
        }
    }

    /// Builds from raw words; padding bits must be zero.
    pub fn from_words(bits: usize, count: usize, words: Vec<u64>) -> Result<Self> {
        if bits == 0 {
            return Err(Error::InvalidArgument("codes need at least one bit".into()));
        }
        let wpc = words_per_code(bits);
        if words.len() != wpc * count {
            return Err(Error::Dimension(format!(
                "{} words cannot hold {count} codes of {bits} bits",
                words.len()
            )));
        }
        if !bits.is_multiple_of(64) {
            let mask = !((1u64 << (bits % 64)) - 1);
            for j in 0..count {
                if words[j * wpc + wpc - 1] & mask != 0 {
                    return Err(Error::Format(format!("code {j} has non-zero padding bits")));
                }
            }
        }
        Ok(Self { bits, count, words })
    }

    pub fn unpack(&self) -> Result<CodeMatrix> {
        let wpc = words_per_code(self.bits);
        let mut entries = Vec::with_capacity(self.bits * self.count);
        for j in 0..self.count {
            let w = &self.words[j * wpc..(j + 1) * wpc];
            for i in 0..self.bits {
                entries.push(if w[i / 64] >> (i % 64) & 1 == 1 { 1 } else { -1 });
            }
        }
        CodeMatrix::from_entries(self.bits, self.count, entries)
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> CodeRef<'_> {
        let wpc = words_per_code(self.bits);
        CodeRef {
            bits: self.bits,
            words: &self.words[i * wpc..(i + 1) * wpc],
        }
    }
}

/// Number of differing bits, by XOR and population count.
pub fn hamming_distance(a: CodeRef<'_>, b: CodeRef<'_>) -> Result<u32> {
    if a.bits != b.bits || a.words.len() != b.words.len() {
        return Err(Error::Dimension(format!(
            "cannot compare codes of {} and {} bits",
            a.bits, b.bits
        )));
    }
    Ok(a.words
        .iter()
        .zip(b.words)
        .map(|(x, y)| (x ^ y).count_ones())
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: u32,
}

/// Linear scan of `db`, ordered by ascending distance then ascending index.
pub fn rank_by_hamming(query: CodeRef<'_>, db: &PackedCodes) -> Result<Vec<Neighbor>> {
    if query.bits != db.bits {
        return Err(Error::Dimension(format!(
            "query has {} bits, database has {}",
            query.bits, db.bits
        )));
    }
    // Counting sort: buckets are filled in index order, so ties stay ascending.
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); db.bits + 1];
    for i in 0..db.count {
        let d = hamming_distance(query, db.get(i))?;
        buckets[d as usize].push(i);
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .flat_map(|(d, idx)| {
            idx.into_iter().map(move |index| Neighbor {
                index,
                distance: d as u32,
            })
        })
        .collect())
}

/// Relevant database indices for every query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    /// Per query, in the order they were produced (nearest first for Euclidean
    /// ground truth, ascending index for label ground truth).
    sets: Vec<Vec<usize>>,
    db_size: usize,
}

impl GroundTruth {
    pub fn new(sets: Vec<Vec<usize>>, db_size: usize) -> Result<Self> {
        for (q, set) in sets.iter().enumerate() {
            if let Some(&bad) = set.iter().find(|&&i| i >= db_size) {
                return Err(Error::Dimension(format!(
                    "query {q} lists database index {bad}, database has {db_size} items"
                )));
            }
        }
        Ok(Self { sets, db_size })
    }

    pub fn queries(&self) -> usize {
        self.sets.len()
    }

    pub fn db_size(&self) -> usize {
        self.db_size
    }

    pub fn relevant(&self, query: usize) -> &[usize] {
        &self.sets[query]
    }

    fn membership(&self, query: usize) -> Vec<bool> {
        let mut mask = vec![false; self.db_size];
        for &i in &self.sets[query] {
            mask[i] = true;
        }
        mask
    }
}

/// The `k` nearest database points of every query under Euclidean distance,
/// ties broken by ascending index.
pub fn euclidean_ground_truth(db: &Matrix, queries: &Matrix, k: usize) -> Result<GroundTruth> {
    if db.nrows() != queries.nrows() {
        return Err(Error::Dimension(format!(
            "database has {} features, queries have {}",
            db.nrows(),
            queries.nrows()
        )));
    }
    let n = db.ncols();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!(
            "ground truth size {k} must be between 1 and the database size {n}"
        )));
    }
    let sets = queries
        .column_iter()
        .map(|q| {
            let mut dist: Vec<(f64, usize)> = db
                .column_iter()
                .enumerate()
                .map(|(i, x)| ((x - q).norm_squared(), i))
                .collect();
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            dist.truncate(k);
            dist.into_iter().map(|(_, i)| i).collect()
        })
        .collect();
    GroundTruth::new(sets, n)
}

/// Ground truth from class labels: every database item sharing the query's label.
pub fn label_ground_truth(db_labels: &[u32], query_labels: &[u32]) -> GroundTruth {
    let sets = query_labels
        .iter()
        .map(|&y| {
            db_labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == y)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    GroundTruth {
        sets,
        db_size: db_labels.len(),
    }
}

fn average_precision_masked(ranking: &[Neighbor], relevant: &[bool], total: usize, top_k: Option<usize>) -> f64 {
    let denom = match top_k {
        Some(k) => total.min(k),
        None => total,
    };
    if denom == 0 {
        return 0.0;
    }
    let depth = top_k.map_or(ranking.len(), |k| k.min(ranking.len()));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, nb) in ranking[..depth].iter().enumerate() {
        if relevant[nb.index] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / denom as f64
}

/// Average precision of one ranking.
///
/// Sums precision-at-rank over relevant items (within the first `top_k`
/// positions when set) and divides by `min(|relevant|, top_k)`.
pub fn average_precision(ranking: &[Neighbor], relevant: &[usize], db_size: usize, top_k: Option<usize>) -> f64 {
    let mut mask = vec![false; db_size];
    for &i in relevant {
        mask[i] = true;
    }
    average_precision_masked(ranking, &mask, relevant.len(), top_k)
}

fn check_rankings(rankings: &[Vec<Neighbor>], gt: &GroundTruth) -> Result<()> {
    if rankings.len() != gt.queries() {
        return Err(Error::Dimension(format!(
            "{} rankings for {} ground-truth queries",
            rankings.len(),
            gt.queries()
        )));
    }
    for r in rankings {
        if let Some(nb) = r.iter().find(|nb| nb.index >= gt.db_size) {
            return Err(Error::Dimension(format!(
                "ranking mentions item {} beyond the database size {}",
                nb.index, gt.db_size
            )));
        }
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn mean_average_precision(rankings: &[Vec<Neighbor>], gt: &GroundTruth, top_k: Option<usize>) -> Result<f64> {
    check_rankings(rankings, gt)?;
    let aps: Vec<f64> = rankings
        .iter()
        .enumerate()
        .map(|(q, r)| average_precision_masked(r, &gt.membership(q), gt.relevant(q).len(), top_k))
        .collect();
    Ok(mean(&aps))
}

/// Items within `radius` of the query and how many of them are relevant.
fn radius_counts(ranking: &[Neighbor], relevant: &[bool], radius: u32) -> (usize, usize) {
    let mut within = 0;
    let mut hits = 0;
    for nb in ranking.iter().filter(|nb| nb.distance <= radius) {
        within += 1;
        if relevant[nb.index] {
            hits += 1;
        }
    }
    (within, hits)
}

/// Mean over queries of the precision among items within `radius`; a query
/// with no item inside the radius scores zero.
pub fn precision_at_radius(rankings: &[Vec<Neighbor>], gt: &GroundTruth, radius: u32) -> Result<f64> {
    check_rankings(rankings, gt)?;
    let per: Vec<f64> = rankings
        .iter()
        .enumerate()
        .map(|(q, r)| {
            let (within, hits) = radius_counts(r, &gt.membership(q), radius);
            if within == 0 {
                0.0
            } else {
                hits as f64 / within as f64
            }
        })
        .collect();
    Ok(mean(&per))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryEval {
    pub average_precision: f64,
    pub within_radius: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub map: f64,
    pub precision_at_radius: f64,
    pub per_query: Vec<QueryEval>,
    pub bits: usize,
    /// Ground-truth set size when it is the same for every query.
    pub ground_truth_size: Option<usize>,
    pub map_top_k: Option<usize>,
    pub radius: u32,
}

/// Ranks every query against `db` and computes both metrics.
pub fn evaluate(
    db: &PackedCodes,
    queries: &PackedCodes,
    gt: &GroundTruth,
    top_k: Option<usize>,
    radius: u32,
) -> Result<EvalReport> {
    if db.bits() != queries.bits() {
        return Err(Error::Dimension(format!(
            "database codes have {} bits, query codes {}",
            db.bits(),
            queries.bits()
        )));
    }
    if gt.queries() != queries.len() || gt.db_size() != db.len() {
        return Err(Error::Dimension(format!(
            "ground truth covers {} queries over {} items, got {} queries over {} items",
            gt.queries(),
            gt.db_size(),
            queries.len(),
            db.len()
        )));
    }
    let mut per_query = Vec::with_capacity(queries.len());
    for q in 0..queries.len() {
        let ranking = rank_by_hamming(queries.get(q), db)?;
        let mask = gt.membership(q);
        let ap = average_precision_masked(&ranking, &mask, gt.relevant(q).len(), top_k);
        let (within, hits) = radius_counts(&ranking, &mask, radius);
        per_query.push(QueryEval {
            average_precision: ap,
            within_radius: within,
            precision: if within == 0 { 0.0 } else { hits as f64 / within as f64 },
        });
    }
    let aps: Vec<f64> = per_query.iter().map(|e| e.average_precision).collect();
    let precs: Vec<f64> = per_query.iter().map(|e| e.precision).collect();
    let sizes: Vec<usize> = (0..gt.queries()).map(|q| gt.relevant(q).len()).collect();
    let ground_truth_size = match sizes.first() {
        Some(&s) if sizes.iter().all(|&v| v == s) => Some(s),
        _ => None,
    };
    Ok(EvalReport {
        map: mean(&aps),
        precision_at_radius: mean(&precs),
        per_query,
        bits: db.bits(),
        ground_truth_size,
        map_top_k: top_k,
        radius,
    })
}

impl EvalReport {
    /// CSV with header `query,ap,within_radius,precision`, one row per query
    /// and a final `mean` row holding the aggregates (its `within_radius` is
    /// the mean count).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "query,ap,within_radius,precision")?;
        for (q, e) in self.per_query.iter().enumerate() {
            writeln!(out, "{q},{},{},{}", e.average_precision, e.within_radius, e.precision)?;
        }
        let mean_within = self.per_query.iter().map(|e| e.within_radius as f64).sum::<f64>()
            / self.per_query.len().max(1) as f64;
        writeln!(out, "mean,{},{},{}", self.map, mean_within, self.precision_at_radius)?;
        Ok(())
    }
}
