//! Pairwise constraint store.
//!
//! Must-links are kept as a union-find over sample ids; cannot-links are
//! tracked between must-link components, so every query sees the transitive
//! closure. Constraints bind samples, and the per-batch [`IndicatorViews`]
//! expand each sample pair onto its four augmented view pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    MustLink,
    CannotLink,
}

impl std::fmt::Display for Link {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Link::MustLink => "must-link",
            Link::CannotLink => "cannot-link",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSource {
    /// Chosen by the active query strategy.
    Queried,
    /// Uniformly random initial constraints.
    Seed,
    /// High-confidence similarity extension; never counted as a query.
    Pseudo,
}

/// One line of the constraint log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub i: usize,
    pub j: usize,
    pub link: Link,
    pub step: u64,
    pub source: ConstraintSource,
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Pairs implied by the closure of the recorded answers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DerivedPairs {
    pub must: BTreeSet<(usize, usize)>,
    pub cannot: BTreeSet<(usize, usize)>,
}

/// Binary `n x n` matrix stored densely.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl BinMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set_sym(&mut self, i: usize, j: usize) {
        self.bits[i * self.n + j] = true;
        self.bits[j * self.n + i] = true;
    }

    /// Entries set in row `i`.
    pub fn row_count(&self, i: usize) -> usize {
        self.bits[i * self.n..(i + 1) * self.n].iter().filter(|&&b| b).count()
    }

    /// Number of set entries strictly above the diagonal.
    pub fn upper_count(&self) -> usize {
        (0..self.n)
            .map(|i| ((i + 1)..self.n).filter(|&j| self.get(i, j)).count())
            .sum()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.n, self.n, |i, j| f64::from(u8::from(self.get(i, j))))
    }
}

/// Indicator matrices for one batch of `2N` augmented rows. Row `i` and row
/// `i + N` are the two views of batch sample `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorViews {
    pub batch: usize,
    /// Augmentation pairs `(i, i + N)`.
    pub aug: BinMatrix,
    /// Must-link view pairs, including closure and pseudo links.
    pub plus: BinMatrix,
    /// Cannot-link view pairs, including closure.
    pub minus: BinMatrix,
    /// Must-link view pairs above the diagonal that come from oracle answers.
    pub n_plus: usize,
}

impl IndicatorViews {
    /// Views with only the augmentation pairs set.
    pub fn unconstrained(batch: usize) -> Self {
        let rows = 2 * batch;
        let mut aug = BinMatrix::new(rows);
        for i in 0..batch {
            aug.set_sym(i, i + batch);
        }
        Self {
            batch,
            aug,
            plus: BinMatrix::new(rows),
            minus: BinMatrix::new(rows),
            n_plus: 0,
        }
    }

    pub fn rows(&self) -> usize {
        2 * self.batch
    }

    /// Sample-level relation between batch positions `a` and `b`.
    pub fn sample_relation(&self, a: usize, b: usize) -> Option<Link> {
        if self.plus.get(a, b) {
            Some(Link::MustLink)
        } else if self.minus.get(a, b) {
            Some(Link::CannotLink)
        } else {
            None
        }
    }

    /// Marks all four view pairs of batch samples `a` and `b`.
    fn mark(target: &mut BinMatrix, batch: usize, a: usize, b: usize) {
        for (x, y) in [(a, b), (a, b + batch), (a + batch, b), (a + batch, b + batch)] {
            target.set_sym(x, y);
        }
    }

    /// Number of constrained sample pairs in the batch.
    pub fn constrained_sample_pairs(&self) -> usize {
        let mut q = 0;
        for a in 0..self.batch {
            for b in (a + 1)..self.batch {
                if self.plus.get(a, b) || self.minus.get(a, b) {
                    q += 1;
                }
            }
        }
        q
    }
}

#[derive(Clone, Debug)]
struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    fn find_compress(&mut self, x: usize) -> usize {
        let root = self.find(x);
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Returns `(kept_root, absorbed_root)`.
    fn union(&mut self, a: usize, b: usize) -> Option<(usize, usize)> {
        let (ra, rb) = (self.find_compress(a), self.find_compress(b));
        if ra == rb {
            return None;
        }
        let (keep, absorb) = if self.size[ra] >= self.size[rb] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[absorb] = keep;
        self.size[keep] += self.size[absorb];
        Some((keep, absorb))
    }
}

/// Accumulated oracle answers over a dataset of `len` samples.
#[derive(Clone, Debug)]
pub struct ConstraintStore {
    len: usize,
    must_links: BTreeSet<(usize, usize)>,
    cannot_links: BTreeSet<(usize, usize)>,
    pseudo_links: BTreeSet<(usize, usize)>,
    /// Components over oracle must-links and pseudo links.
    components: UnionFind,
    /// Components over oracle must-links alone.
    answered: UnionFind,
    /// Cannot-link adjacency between component roots.
    apart: HashMap<usize, HashSet<usize>>,
    answer_log: Vec<AnswerRecord>,
}

impl ConstraintStore {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            must_links: BTreeSet::new(),
            cannot_links: BTreeSet::new(),
            pseudo_links: BTreeSet::new(),
            components: UnionFind::new(len),
            answered: UnionFind::new(len),
            apart: HashMap::new(),
            answer_log: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// True when no oracle answer has been recorded (pseudo links ignored).
    pub fn is_empty(&self) -> bool {
        self.must_links.is_empty() && self.cannot_links.is_empty()
    }

    pub fn must_links(&self) -> &BTreeSet<(usize, usize)> {
        &self.must_links
    }

    pub fn cannot_links(&self) -> &BTreeSet<(usize, usize)> {
        &self.cannot_links
    }

    pub fn pseudo_links(&self) -> &BTreeSet<(usize, usize)> {
        &self.pseudo_links
    }

    pub fn answer_log(&self) -> &[AnswerRecord] {
        &self.answer_log
    }

    /// Number of oracle answers (seed and queried), excluding pseudo links.
    pub fn answer_count(&self) -> usize {
        self.must_links.len() + self.cannot_links.len()
    }

    pub fn component(&self, id: usize) -> usize {
        self.components.find(id)
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.len {
            return Err(Error::UnknownSample { id, len: self.len });
        }
        Ok(())
    }

    /// Closure relation between two samples.
    pub fn relation(&self, i: usize, j: usize) -> Option<Link> {
        if i == j {
            return Some(Link::MustLink);
        }
        let (ri, rj) = (self.components.find(i), self.components.find(j));
        if ri == rj {
            Some(Link::MustLink)
        } else if self.apart.get(&ri).is_some_and(|s| s.contains(&rj)) {
            Some(Link::CannotLink)
        } else {
            None
        }
    }

    pub fn is_constrained(&self, i: usize, j: usize) -> bool {
        self.relation(i, j).is_some()
    }

    /// Must-link path from `a` to `b` through recorded must-links.
    fn must_path(&self, a: usize, b: usize) -> Vec<usize> {
        let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
        for &(x, y) in &self.must_links {
            adj.entry(x).or_default().push(y);
            adj.entry(y).or_default().push(x);
        }
        let mut prev: HashMap<usize, usize> = HashMap::new();
        let mut queue = VecDeque::from([a]);
        prev.insert(a, a);
        while let Some(cur) = queue.pop_front() {
            if cur == b {
                break;
            }
            for &next in adj.get(&cur).map(Vec::as_slice).unwrap_or(&[]) {
                if let std::collections::hash_map::Entry::Vacant(e) = prev.entry(next) {
                    e.insert(cur);
                    queue.push_back(next);
                }
            }
        }
        let mut path = vec![b];
        let mut cur = b;
        while cur != a {
            match prev.get(&cur) {
                Some(&p) => {
                    path.push(p);
                    cur = p;
                }
                None => return vec![a, b],
            }
        }
        path.reverse();
        path
    }

    /// Chain explaining why components of `i` and `j` are cannot-linked:
    /// `i ~ x`, `x ⊥ y`, `y ~ j`.
    fn apart_chain(&self, i: usize, j: usize) -> Vec<usize> {
        let (ri, rj) = (self.components.find(i), self.components.find(j));
        for &(x, y) in &self.cannot_links {
            let (rx, ry) = (self.components.find(x), self.components.find(y));
            let (x, y) = if rx == ri && ry == rj {
                (x, y)
            } else if rx == rj && ry == ri {
                (y, x)
            } else {
                continue;
            };
            let mut chain = self.must_path(i, x);
            chain.extend(self.must_path(y, j));
            return chain;
        }
        vec![i, j]
    }

    /// Records an oracle answer and updates the closure.
    pub fn record_answer(&mut self, i: usize, j: usize, link: Link, step: u64, source: ConstraintSource) -> Result<()> {
        self.check_id(i)?;
        self.check_id(j)?;
        if i == j {
            return Err(Error::SelfPair(i));
        }
        if source == ConstraintSource::Pseudo {
            return self.add_pseudo(i, j, step);
        }
        let oracle_view = if self.pseudo_links.is_empty() {
            None
        } else {
            Some(self.without_pseudo())
        };
        let judge = oracle_view.as_ref().unwrap_or(self);
        match (judge.relation(i, j), link) {
            (None, _) => {}
            (Some(Link::CannotLink), Link::MustLink) => {
                return Err(Error::InconsistentOracle {
                    i,
                    j,
                    link: link.to_string(),
                    chain: judge.apart_chain(i, j),
                })
            }
            (Some(Link::MustLink), Link::CannotLink) => {
                return Err(Error::InconsistentOracle {
                    i,
                    j,
                    link: link.to_string(),
                    chain: judge.must_path(i, j),
                })
            }
            (Some(_), _) => return Err(Error::AlreadyConstrained(i, j)),
        }
        let record = AnswerRecord {
            i,
            j,
            link,
            step,
            source,
        };
        let contradicts_pseudo = matches!(
            (self.relation(i, j), link),
            (Some(Link::CannotLink), Link::MustLink) | (Some(Link::MustLink), Link::CannotLink)
        );
        if let (true, Some(mut fresh)) = (contradicts_pseudo, oracle_view) {
            // oracle answers outrank pseudo links: drop the closure built on
            // them and keep only the pseudo links still consistent
            fresh.apply(&record);
            for r in &self.answer_log {
                let pair = ordered(r.i, r.j);
                if r.source == ConstraintSource::Pseudo
                    && self.pseudo_links.contains(&pair)
                    && fresh.relation(r.i, r.j).is_none()
                {
                    fresh.pseudo_links.insert(pair);
                    fresh.merge(r.i, r.j);
                }
            }
            fresh.answer_log = std::mem::take(&mut self.answer_log);
            fresh.answer_log.push(record);
            *self = fresh;
            return Ok(());
        }
        self.apply(&record);
        self.answer_log.push(record);
        Ok(())
    }

    /// Adds an oracle answer to the closure without consistency checks.
    fn apply(&mut self, r: &AnswerRecord) {
        let pair = ordered(r.i, r.j);
        match r.link {
            Link::MustLink => {
                self.must_links.insert(pair);
                self.answered.union(r.i, r.j);
                self.merge(r.i, r.j);
            }
            Link::CannotLink => {
                self.cannot_links.insert(pair);
                let (ri, rj) = (self.components.find(r.i), self.components.find(r.j));
                self.apart.entry(ri).or_default().insert(rj);
                self.apart.entry(rj).or_default().insert(ri);
            }
        }
        // an oracle answer overrides any pseudo link on the same pair
        self.pseudo_links.remove(&pair);
    }

    fn merge(&mut self, i: usize, j: usize) {
        if let Some((keep, absorb)) = self.components.union(i, j) {
            if let Some(neighbours) = self.apart.remove(&absorb) {
                for n in neighbours {
                    if let Some(set) = self.apart.get_mut(&n) {
                        set.remove(&absorb);
                        set.insert(keep);
                    }
                    self.apart.entry(keep).or_default().insert(n);
                }
            }
        }
    }

    /// The closure of the oracle answers alone, without the log.
    fn without_pseudo(&self) -> Self {
        let mut out = Self::new(self.len);
        for r in self.answer_log.iter().filter(|r| r.source != ConstraintSource::Pseudo) {
            out.apply(r);
        }
        out
    }

    fn add_pseudo(&mut self, i: usize, j: usize, step: u64) -> Result<()> {
        if self.relation(i, j).is_some() || self.pseudo_links.contains(&ordered(i, j)) {
            return Err(Error::AlreadyConstrained(i, j));
        }
        self.pseudo_links.insert(ordered(i, j));
        self.merge(i, j);
        self.answer_log.push(AnswerRecord {
            i,
            j,
            link: Link::MustLink,
            step,
            source: ConstraintSource::Pseudo,
        });
        Ok(())
    }

    /// Every pair implied by the recorded answers.
    pub fn transitive_close(&self) -> DerivedPairs {
        let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let touched: BTreeSet<usize> = self
            .must_links
            .iter()
            .chain(&self.cannot_links)
            .flat_map(|&(a, b)| [a, b])
            .collect();
        for &id in &touched {
            members.entry(self.components.find(id)).or_default().push(id);
        }
        let mut out = DerivedPairs::default();
        for group in members.values() {
            for (x, &a) in group.iter().enumerate() {
                for &b in &group[x + 1..] {
                    out.must.insert(ordered(a, b));
                }
            }
        }
        for (&root, others) in &self.apart {
            let Some(left) = members.get(&root) else { continue };
            for other in others {
                let Some(right) = members.get(other) else { continue };
                for &a in left {
                    for &b in right {
                        out.cannot.insert(ordered(a, b));
                    }
                }
            }
        }
        out
    }

    /// Indicator matrices for a batch of distinct sample ids.
    pub fn indicator_views(&self, batch_ids: &[usize]) -> Result<IndicatorViews> {
        let n = batch_ids.len();
        let mut seen = HashSet::with_capacity(n);
        for &id in batch_ids {
            self.check_id(id)?;
            if !seen.insert(id) {
                return Err(Error::InvalidConfig(format!("batch id {id} appears twice")));
            }
        }
        let mut views = IndicatorViews::unconstrained(n);
        let mut queried_plus = 0;
        for a in 0..n {
            for b in (a + 1)..n {
                let (ia, ib) = (batch_ids[a], batch_ids[b]);
                match self.relation(ia, ib) {
                    Some(Link::MustLink) => {
                        IndicatorViews::mark(&mut views.plus, n, a, b);
                        if self.answered.find(ia) == self.answered.find(ib) {
                            queried_plus += 4;
                        }
                    }
                    Some(Link::CannotLink) => IndicatorViews::mark(&mut views.minus, n, a, b),
                    None => {}
                }
            }
        }
        views.n_plus = queried_plus;
        Ok(views)
    }

    /// Adds pseudo must-links for unconstrained batch pairs whose two-view
    /// averaged cosine similarity exceeds `threshold`, most similar first,
    /// at most `max_new`. `z` holds the `2N` view rows of the batch.
    pub fn high_confidence_extend(
        &mut self,
        batch_ids: &[usize],
        z: &Matrix,
        threshold: f64,
        max_new: usize,
        step: u64,
    ) -> Result<Vec<(usize, usize)>> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold must lie in (0, 1], got {threshold}"
            )));
        }
        let n = batch_ids.len();
        if z.rows() != 2 * n {
            return Err(Error::DimensionMismatch {
                context: "high_confidence_extend",
                expected: format!("{} rows", 2 * n),
                got: format!("{} rows", z.rows()),
            });
        }
        let mut candidates = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                let (ia, ib) = (batch_ids[a], batch_ids[b]);
                if self.relation(ia, ib).is_some() {
                    continue;
                }
                let s = 0.5 * (cosine_similarity(z.row(a), z.row(b))? + cosine_similarity(z.row(a + n), z.row(b + n))?);
                if s > threshold {
                    candidates.push((s, ordered(ia, ib)));
                }
            }
        }
        candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        let mut added = Vec::new();
        for (_, (i, j)) in candidates {
            if added.len() == max_new {
                break;
            }
            // earlier additions may already imply this pair
            if self.relation(i, j).is_some() {
                continue;
            }
            self.add_pseudo(i, j, step)?;
            added.push((i, j));
        }
        Ok(added)
    }

    /// Rebuilds a store by replaying a log in order.
    pub fn from_log(len: usize, log: &[AnswerRecord]) -> Result<Self> {
        let mut store = Self::new(len);
        for r in log {
            store.record_answer(r.i, r.j, r.link, r.step, r.source)?;
        }
        Ok(store)
    }

    pub fn write_log<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.answer_log {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_log(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_log(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Reads a line-delimited constraint log.
pub fn read_log<R: BufRead>(input: R) -> Result<Vec<AnswerRecord>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_log(path: &Path) -> Result<Vec<AnswerRecord>> {
    read_log(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Answers waiting to be applied at the next batch boundary.
#[derive(Clone, Debug, Default)]
pub struct ConstraintInbox {
    queue: Arc<Mutex<Vec<AnswerRecord>>>,
}

impl ConstraintInbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, record: AnswerRecord) {
        self.queue.lock().expect("inbox poisoned").push(record);
    }

    pub fn drain(&self) -> Vec<AnswerRecord> {
        std::mem::take(&mut *self.queue.lock().expect("inbox poisoned"))
    }

    pub fn is_empty(&self) -> bool {
        self.queue.lock().expect("inbox poisoned").is_empty()
    }
}
