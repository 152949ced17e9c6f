//! Multiclass gradient-boosted decision trees with histogram split search.
//!
//! Each round fits one regression tree per class to the softmax
//! cross-entropy gradients. Features are quantile-binned once (bin edges sit
//! between observed values, so thresholds never leave the data range); trees grow
//! depth-wise to `max_depth` using histogram subtraction for siblings. Leaf
//! values are one-step Newton estimates `-G / (H + lambda)` scaled by the
//! learning rate.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::scene_sim::rng_for;

pub const MODEL_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub n_bins: usize,
    pub subsample: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: 6,
            min_samples_leaf: 5,
            n_bins: 256,
            subsample: 1.0,
            lambda: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::param(m.to_string()));
        if self.n_rounds == 0 {
            return bad("n_rounds must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if self.max_depth == 0 || self.min_samples_leaf == 0 {
            return bad("max_depth and min_samples_leaf must be >= 1");
        }
        if !(2..=256).contains(&self.n_bins) {
            return bad("n_bins must lie in [2, 256]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        /// `x <= threshold` goes left.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }

    fn scale_leaves(&mut self, s: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= s;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub version: u64,
    pub classes: Vec<String>,
    pub n_features: usize,
    /// Optional column names, used to check layout compatibility.
    #[serde(default)]
    pub feature_names: Option<Vec<String>>,
    pub config: TrainConfig,
    /// Per-class initial score (log prior).
    pub base_score: Vec<f64>,
    /// `trees[round][class]`.
    pub trees: Vec<Vec<Tree>>,
    /// Training cross-entropy before the first round and after each round.
    pub loss_history: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Binning
// ---------------------------------------------------------------------------

/// Per-feature ascending bin edges: midpoints between adjacent distinct
/// training values, the last edge being the maximum. Value `x` falls in the
/// first bin whose edge is `>= x`.
#[derive(Debug, Clone)]
struct BinMapper {
    edges: Vec<Vec<f64>>,
}

impl BinMapper {
    fn fit(x: &[Vec<f64>], n_features: usize, n_bins: usize) -> Self {
        let edges = (0..n_features)
            .map(|f| {
                let mut col: Vec<f64> = x.iter().map(|r| r[f]).collect();
                col.sort_by(f64::total_cmp);
                let mut uniq = col.clone();
                uniq.dedup();
                let mid = |j: usize| uniq[j] + (uniq[j + 1] - uniq[j]) / 2.0;
                let last = *uniq.last().expect("non-empty column");
                let mut e: Vec<f64> = if uniq.len() <= n_bins {
                    (0..uniq.len() - 1).map(mid).collect()
                } else {
                    let n = col.len();
                    (1..n_bins)
                        .filter_map(|q| {
                            let v = col[((q * n) / n_bins).saturating_sub(1).min(n - 1)];
                            let j = uniq.partition_point(|&u| u < v);
                            (j + 1 < uniq.len()).then(|| mid(j))
                        })
                        .collect()
                };
                e.push(last);
                e.dedup();
                e
            })
            .collect();
        BinMapper { edges }
    }

    fn bin(&self, f: usize, v: f64) -> u8 {
        let e = &self.edges[f];
        let i = e.partition_point(|&edge| edge < v);
        i.min(e.len() - 1) as u8
    }

    fn n_bins(&self, f: usize) -> usize {
        self.edges[f].len()
    }
}

// ---------------------------------------------------------------------------
// Tree growth
// ---------------------------------------------------------------------------

struct Grower<'a> {
    bins: &'a [Vec<u8>],
    mapper: &'a BinMapper,
    offsets: Vec<usize>,
    total_bins: usize,
    grad: &'a [f64],
    hess: &'a [f64],
    config: &'a TrainConfig,
}

/// Per-bin `[gradient sum, hessian sum, count]`, all features concatenated.
struct Hist(Vec<[f64; 3]>);

thread_local! {
    static HIST_POOL: std::cell::RefCell<Vec<Hist>> = const { std::cell::RefCell::new(Vec::new()) };
}

struct SplitChoice {
    feature: usize,
    bin: usize,
    gain: f64,
}

impl<'a> Grower<'a> {
    fn new(
        bins: &'a [Vec<u8>],
        mapper: &'a BinMapper,
        grad: &'a [f64],
        hess: &'a [f64],
        config: &'a TrainConfig,
    ) -> Self {
        let mut offsets = Vec::with_capacity(bins.len() + 1);
        let mut acc = 0;
        for f in 0..bins.len() {
            offsets.push(acc);
            acc += mapper.n_bins(f);
        }
        offsets.push(acc);
        Grower {
            bins,
            mapper,
            offsets,
            total_bins: acc,
            grad,
            hess,
            config,
        }
    }

    fn build_hist(&self, rows: &[u32], pool: &mut Vec<Hist>) -> Hist {
        let mut hist = match pool.pop() {
            Some(mut h) => {
                h.0.fill([0.0; 3]);
                h
            }
            None => Hist(vec![[0.0; 3]; self.total_bins]),
        };
        let g: Vec<f64> = rows.iter().map(|&r| self.grad[r as usize]).collect();
        let h: Vec<f64> = rows.iter().map(|&r| self.hess[r as usize]).collect();
        for (f, col) in self.bins.iter().enumerate() {
            let part = &mut hist.0[self.offsets[f]..self.offsets[f + 1]];
            for (i, &r) in rows.iter().enumerate() {
                let e = &mut part[col[r as usize] as usize];
                e[0] += g[i];
                e[1] += h[i];
                e[2] += 1.0;
            }
        }
        hist
    }

    /// Turns `parent` into the histogram of its other child.
    fn subtract(mut parent: Hist, child: &Hist) -> Hist {
        for (a, b) in parent.0.iter_mut().zip(&child.0) {
            a[0] -= b[0];
            a[1] -= b[1];
            a[2] -= b[2];
        }
        parent
    }

    fn best_split(&self, hist: &Hist, g_tot: f64, h_tot: f64, n_tot: usize) -> Option<SplitChoice> {
        let lambda = self.config.lambda;
        let min_leaf = self.config.min_samples_leaf as f64;
        let n_tot = n_tot as f64;
        let parent = g_tot * g_tot / (h_tot + lambda);
        let mut best: Option<SplitChoice> = None;
        let mut gain = [0.0f64; 256];
        let mut gl = [0.0f64; 256];
        let mut hl = [0.0f64; 256];
        let mut nl = [0.0f64; 256];
        for f in 0..self.bins.len() {
            let part = &hist.0[self.offsets[f]..self.offsets[f + 1]];
            // A split after the last bin sends everything left.
            let m = part.len().saturating_sub(1);
            let (mut sg, mut sh, mut sn) = (0.0, 0.0, 0.0);
            for (b, e) in part[..m].iter().enumerate() {
                sg += e[0];
                sh += e[1];
                sn += e[2];
                gl[b] = sg;
                hl[b] = sh;
                nl[b] = sn;
            }
            // Empty bins repeat the previous candidate's gain exactly, so the
            // first maximum is the same split the sparse scan would pick.
            for b in 0..m {
                let (g, h, n) = (gl[b], hl[b], nl[b]);
                let gr = g_tot - g;
                let v = g * g / (h + lambda) + gr * gr / (h_tot - h + lambda) - parent;
                let ok = n >= min_leaf && n_tot - n >= min_leaf;
                gain[b] = if ok { v } else { f64::NEG_INFINITY };
            }
            let mut fb: Option<(usize, f64)> = None;
            for (b, &v) in gain[..m].iter().enumerate() {
                if v > 1e-12 && fb.is_none_or(|(_, x)| v > x) {
                    fb = Some((b, v));
                }
            }
            if let Some((bin, v)) = fb {
                if best.as_ref().is_none_or(|s| v > s.gain) {
                    best = Some(SplitChoice { feature: f, bin, gain: v });
                }
            }
        }
        best
    }

    fn splittable(&self, n: usize, depth: usize) -> bool {
        depth < self.config.max_depth && n >= 2 * self.config.min_samples_leaf
    }

    /// Grow the subtree for `rows`, recording each row's leaf in `leaf_of`.
    /// `hist` is present exactly when the node may still split.
    fn grow(
        &self,
        rows: &mut [u32],
        hist: Option<Hist>,
        depth: usize,
        nodes: &mut Vec<Node>,
        leaf_of: &mut [(u32, f64)],
        pool: &mut Vec<Hist>,
    ) -> usize {
        let (mut g_tot, mut h_tot) = (0.0, 0.0);
        for &r in rows.iter() {
            g_tot += self.grad[r as usize];
            h_tot += self.hess[r as usize];
        }
        let id = nodes.len();
        let leaf_value = -g_tot / (h_tot + self.config.lambda) * self.config.learning_rate;
        let split = hist.as_ref().and_then(|h| self.best_split(h, g_tot, h_tot, rows.len()));
        let Some(split) = split else {
            pool.extend(hist);
            nodes.push(Node::Leaf { value: leaf_value });
            for &r in rows.iter() {
                leaf_of[r as usize] = (id as u32, leaf_value);
            }
            return id;
        };
        nodes.push(Node::Leaf { value: 0.0 });
        let col = &self.bins[split.feature];
        let (mut left, mut right): (Vec<u32>, Vec<u32>) =
            rows.iter().partition(|&&r| (col[r as usize] as usize) <= split.bin);
        let n_left = left.len();
        let want_l = self.splittable(left.len(), depth + 1);
        let want_r = self.splittable(right.len(), depth + 1);
        let (left_hist, right_hist) = match hist {
            Some(parent) if want_l || want_r => {
                // Build the smaller child, derive the larger by subtraction.
                if left.len() <= right.len() {
                    let lh = self.build_hist(&left, pool);
                    let rh = if want_r { Some(Self::subtract(parent, &lh)) } else { pool.push(parent); None };
                    let lh = if want_l { Some(lh) } else { pool.push(lh); None };
                    (lh, rh)
                } else {
                    let rh = self.build_hist(&right, pool);
                    let lh = if want_l { Some(Self::subtract(parent, &rh)) } else { pool.push(parent); None };
                    let rh = if want_r { Some(rh) } else { pool.push(rh); None };
                    (lh, rh)
                }
            }
            parent => {
                pool.extend(parent);
                (
                    want_l.then(|| self.build_hist(&left, pool)),
                    want_r.then(|| self.build_hist(&right, pool)),
                )
            }
        };
        let l = self.grow(&mut left, left_hist, depth + 1, nodes, leaf_of, pool);
        let r = self.grow(&mut right, right_hist, depth + 1, nodes, leaf_of, pool);
        rows[..n_left].copy_from_slice(&left);
        rows[n_left..].copy_from_slice(&right);
        nodes[id] = Node::Split {
            feature: split.feature,
            threshold: self.mapper.edges[split.feature][split.bin],
            left: l,
            right: r,
        };
        id
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(scores) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Mean cross-entropy of row-major scores `f` (n x k).
fn log_loss(f: &[f64], y: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let s = &f[i * k..(i + 1) * k];
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - s[yi];
    }
    total / y.len() as f64
}

/// Fit on rows `x` with string labels `y`. Classes are the sorted distinct
/// labels.
pub fn fit<S: AsRef<str>>(x: &[Vec<f64>], y: &[S], config: &TrainConfig) -> Result<TreeEnsemble> {
    fit_with(x, y, config, Parallelism::default())
}

pub fn fit_with<S: AsRef<str>>(
    x: &[Vec<f64>],
    y: &[S],
    config: &TrainConfig,
    mode: Parallelism,
) -> Result<TreeEnsemble> {
    config.validate()?;
    if x.len() != y.len() {
        return Err(Error::Training(format!("{} rows but {} labels", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Training("need at least 2 samples".into()));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::Training("rows must share a non-zero dimension".into()));
    }
    if let Some(i) = x.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Training(format!("row {i} contains NaN or infinite values")));
    }
    let mut classes: Vec<String> = y.iter().map(|s| s.as_ref().to_string()).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Training("need at least 2 classes".into()));
    }
    let k = classes.len();
    let n = x.len();
    let yi: Vec<usize> = y
        .iter()
        .map(|s| classes.binary_search_by(|c| c.as_str().cmp(s.as_ref())).expect("label present"))
        .collect();

    let mapper = BinMapper::fit(x, d, config.n_bins);
    let bins: Vec<Vec<u8>> = (0..d)
        .map(|f| x.iter().map(|r| mapper.bin(f, r[f])).collect())
        .collect();

    let mut counts = vec![0usize; k];
    for &c in &yi {
        counts[c] += 1;
    }
    let base_score: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();
    let mut f: Vec<f64> = (0..n).flat_map(|_| base_score.iter().copied()).collect();
    let mut loss = log_loss(&f, &yi, k);
    let mut loss_history = vec![loss];
    let mut trees = Vec::with_capacity(config.n_rounds);
    let mut grad = vec![vec![0.0; n]; k];
    let mut hess = vec![vec![0.0; n]; k];
    let mut p = vec![0.0; k];

    for round in 0..config.n_rounds {
        for i in 0..n {
            softmax_into(&f[i * k..(i + 1) * k], &mut p);
            for c in 0..k {
                let target = if yi[i] == c { 1.0 } else { 0.0 };
                grad[c][i] = p[c] - target;
                hess[c][i] = (p[c] * (1.0 - p[c])).max(1e-16);
            }
        }
        let sample: Vec<u32> = if config.subsample < 1.0 {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            let mut rng = rng_for(config.seed, &[round as u64]);
            idx.shuffle(&mut rng);
            let m = ((n as f64 * config.subsample).ceil() as usize).clamp(1, n);
            let mut s = idx[..m].to_vec();
            s.sort_unstable();
            s
        } else {
            (0..n as u32).collect()
        };
        let built = par::map_indexed(mode, k, |c| {
            let grower = Grower::new(&bins, &mapper, &grad[c], &hess[c], config);
            let mut rows = sample.clone();
            let mut nodes = Vec::new();
            let mut leaf_of = vec![(u32::MAX, 0.0); n];
            HIST_POOL.with(|pool| {
                let pool = &mut pool.borrow_mut();
                pool.retain(|h| h.0.len() == grower.total_bins);
                let hist = grower.splittable(rows.len(), 0).then(|| grower.build_hist(&rows, pool));
                grower.grow(&mut rows, hist, 0, &mut nodes, &mut leaf_of, pool);
            });
            (Tree { nodes }, leaf_of)
        });
        // Per-row increments; rows left out of the sample are routed through
        // the tree on their raw values.
        let mut delta = vec![0.0; n * k];
        for (c, (tree, leaf_of)) in built.iter().enumerate() {
            for i in 0..n {
                delta[i * k + c] = if leaf_of[i].0 != u32::MAX { leaf_of[i].1 } else { tree.predict(&x[i]) };
            }
        }
        // Step-halving keeps the training loss non-increasing.
        let mut scale = 1.0;
        let mut candidate = vec![0.0; n * k];
        let mut new_loss;
        let mut tries = 0;
        loop {
            for j in 0..n * k {
                candidate[j] = f[j] + scale * delta[j];
            }
            new_loss = log_loss(&candidate, &yi, k);
            if new_loss <= loss || tries >= 30 {
                break;
            }
            scale *= 0.5;
            tries += 1;
        }
        let mut round_trees: Vec<Tree> = built.into_iter().map(|(t, _)| t).collect();
        if new_loss > loss {
            scale = 0.0;
            new_loss = loss;
            candidate.copy_from_slice(&f);
        }
        if scale != 1.0 {
            for t in &mut round_trees {
                t.scale_leaves(scale);
            }
        }
        f = candidate;
        loss = new_loss;
        loss_history.push(loss);
        trees.push(round_trees);
    }

    Ok(TreeEnsemble {
        version: MODEL_VERSION,
        classes,
        n_features: d,
        feature_names: None,
        config: config.clone(),
        base_score,
        trees,
        loss_history,
    })
}

// ---------------------------------------------------------------------------
// Prediction and serialization
// ---------------------------------------------------------------------------

impl TreeEnsemble {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn tree_count(&self) -> usize {
        self.trees.iter().map(|r| r.len()).sum()
    }

    pub fn raw_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::Prediction(format!(
                "feature dimension {} does not match model dimension {}",
                x.len(),
                self.n_features
            )));
        }
        let mut s = self.base_score.clone();
        for round in &self.trees {
            for (c, t) in round.iter().enumerate() {
                s[c] += t.predict(x);
            }
        }
        Ok(s)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let s = self.raw_scores(x)?;
        let mut p = vec![0.0; s.len()];
        softmax_into(&s, &mut p);
        Ok(p)
    }

    /// Index of the most probable class (lowest index on ties).
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let p = self.predict_proba(x)?;
        Ok(argmax(&p))
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<&str> {
        Ok(&self.classes[self.predict(x)?])
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        serde_json::to_vec(self).map_err(|e| Error::Format { offset: 0, message: e.to_string() })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| Error::Format {
            offset: byte_offset(bytes, e.line(), e.column()),
            message: e.to_string(),
        })?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format { offset: 0, message: "missing or invalid \"version\" field".into() })?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion { found: version, expected: MODEL_VERSION });
        }
        let model: TreeEnsemble = serde_json::from_value(value)
            .map_err(|e| Error::Format { offset: 0, message: e.to_string() })?;
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format { offset: 0, message: m });
        let k = self.classes.len();
        if k < 2 || self.base_score.len() != k {
            return bad("class list and base scores disagree".into());
        }
        if let Some(names) = &self.feature_names {
            if names.len() != self.n_features {
                return bad("feature name count differs from n_features".into());
            }
        }
        for (ri, round) in self.trees.iter().enumerate() {
            if round.len() != k {
                return bad(format!("round {ri} has {} trees for {k} classes", round.len()));
            }
            for t in round {
                if t.nodes.is_empty() {
                    return bad(format!("empty tree in round {ri}"));
                }
                for (ni, node) in t.nodes.iter().enumerate() {
                    if let Node::Split { feature, left, right, threshold } = node {
                        if *feature >= self.n_features || *left <= ni || *right <= ni
                            || *left >= t.nodes.len() || *right >= t.nodes.len() || !threshold.is_finite()
                        {
                            return bad(format!("invalid split node {ni} in round {ri}"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    let mut cur = 1;
    for (i, &b) in bytes.iter().enumerate() {
        if cur == line {
            offset = i;
            break;
        }
        if b == b'\n' {
            cur += 1;
            offset = i + 1;
        }
    }
    (offset + column.saturating_sub(1)).min(bytes.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<String>) {
        let mut rng = rng_for(seed, &[]);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 3;
            let (cx, cy) = [(0.0, 0.0), (3.0, 0.5), (1.0, 3.0)][c];
            x.push(vec![cx + rng.gen_range(-0.8..0.8), cy + rng.gen_range(-0.8..0.8), rng.gen_range(0.0..1.0)]);
            y.push(format!("c{c}"));
        }
        (x, y)
    }

    fn xor(n_per: usize) -> (Vec<Vec<f64>>, Vec<String>) {
        let mut rng = rng_for(3, &[]);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (cx, cy, label) in [(0.0, 0.0, "a"), (1.0, 1.0, "a"), (0.0, 1.0, "b"), (1.0, 0.0, "b")] {
            for _ in 0..n_per {
                x.push(vec![cx + rng.gen_range(-0.2..0.2), cy + rng.gen_range(-0.2..0.2)]);
                y.push(label.to_string());
            }
        }
        (x, y)
    }

    fn accuracy(m: &TreeEnsemble, x: &[Vec<f64>], y: &[String]) -> f64 {
        let hits = x.iter().zip(y).filter(|(r, l)| m.predict_label(r).unwrap() == l.as_str()).count();
        hits as f64 / x.len() as f64
    }

    #[test]
    fn separable_two_class() {
        let mut rng = rng_for(1, &[]);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let label = if a + b > 0.0 { "pos" } else { "neg" };
            if (a + b).abs() < 0.05 {
                continue;
            }
            x.push(vec![a, b]);
            y.push(label.to_string());
            let _ = i;
        }
        let cfg = TrainConfig { n_rounds: 20, min_samples_leaf: 1, ..TrainConfig::default() };
        let m = fit(&x, &y, &cfg).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
        assert_eq!(m.tree_count(), 20 * 2);
    }

    #[test]
    fn xor_needs_depth_two() {
        let (x, y) = xor(25);
        let cfg = TrainConfig { n_rounds: 30, max_depth: 2, min_samples_leaf: 1, ..TrainConfig::default() };
        let m = fit(&x, &y, &cfg).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn loss_is_monotone() {
        let (x, y) = blobs(300, 2);
        let m = fit(&x, &y, &TrainConfig { n_rounds: 40, ..TrainConfig::default() }).unwrap();
        assert_eq!(m.loss_history.len(), 41);
        assert!(m.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(m.loss_history.last().unwrap() < &(0.5 * m.loss_history[0]));
    }

    #[test]
    fn degenerate_inputs() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert!(matches!(fit(&x, &["a", "a", "a"], &TrainConfig::default()), Err(Error::Training(_))));
        let nan = vec![vec![1.0], vec![f64::NAN]];
        assert!(matches!(fit(&nan, &["a", "b"], &TrainConfig::default()), Err(Error::Training(_))));
        assert!(fit(&x, &["a", "b"], &TrainConfig::default()).is_err());
    }

    #[test]
    fn probabilities_and_dimension_check() {
        let (x, y) = blobs(150, 4);
        let m = fit(&x, &y, &TrainConfig { n_rounds: 15, ..TrainConfig::default() }).unwrap();
        let p = m.predict_proba(&[3.0, 0.5, 0.5]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert_eq!(m.predict_label(&[3.0, 0.5, 0.5]).unwrap(), "c1");
        assert!(matches!(m.predict_proba(&[1.0]), Err(Error::Prediction(_))));
    }

    #[test]
    fn leaf_shift_keeps_argmax() {
        let (x, y) = blobs(150, 5);
        let m = fit(&x, &y, &TrainConfig { n_rounds: 10, ..TrainConfig::default() }).unwrap();
        let mut shifted = m.clone();
        for round in &mut shifted.trees {
            for t in round {
                for n in &mut t.nodes {
                    if let Node::Leaf { value } = n {
                        *value += 0.75;
                    }
                }
            }
        }
        for r in &x {
            assert_eq!(m.predict(r).unwrap(), shifted.predict(r).unwrap());
        }
    }

    #[test]
    fn thresholds_stay_in_range() {
        let (x, y) = blobs(200, 6);
        let m = fit(&x, &y, &TrainConfig { n_rounds: 10, n_bins: 16, ..TrainConfig::default() }).unwrap();
        for round in &m.trees {
            for t in round {
                for n in &t.nodes {
                    if let Node::Split { feature, threshold, .. } = n {
                        let lo = x.iter().map(|r| r[*feature]).fold(f64::INFINITY, f64::min);
                        let hi = x.iter().map(|r| r[*feature]).fold(f64::NEG_INFINITY, f64::max);
                        assert!(*threshold >= lo && *threshold <= hi);
                    }
                }
                assert!(t.depth() <= 6);
            }
        }
    }

    #[test]
    fn serialization_round_trip_and_errors() {
        let (x, y) = blobs(120, 7);
        let m = fit(&x, &y, &TrainConfig { n_rounds: 8, ..TrainConfig::default() }).unwrap();
        let bytes = m.to_bytes().unwrap();
        let back = TreeEnsemble::from_bytes(&bytes).unwrap();
        let mut rng = rng_for(9, &[]);
        for _ in 0..100 {
            let q = vec![rng.gen_range(-2.0..5.0), rng.gen_range(-2.0..5.0), rng.gen_range(0.0..1.0)];
            let a = m.predict_proba(&q).unwrap();
            let b = back.predict_proba(&q).unwrap();
            assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
        let truncated = &bytes[..bytes.len() / 2];
        assert!(matches!(TreeEnsemble::from_bytes(truncated), Err(Error::Format { .. })));
        let text = String::from_utf8(bytes).unwrap().replacen("\"version\":1", "\"version\":7", 1);
        assert!(matches!(
            TreeEnsemble::from_bytes(text.as_bytes()),
            Err(Error::UnsupportedVersion { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn deterministic_and_parallel_agree() {
        let (x, y) = blobs(200, 8);
        let cfg = TrainConfig { n_rounds: 12, subsample: 0.7, seed: 4, ..TrainConfig::default() };
        let a = fit_with(&x, &y, &cfg, Parallelism::Sequential).unwrap();
        let b = fit_with(&x, &y, &cfg, Parallelism::Rayon).unwrap();
        let c = fit_with(&x, &y, &cfg, Parallelism::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn column_scaling_keeps_predictions(scale in 0.01f64..100.0, col in 0usize..3, seed in 0u64..50) {
            let (x, y) = blobs(120, seed);
            let scaled: Vec<Vec<f64>> = x.iter().map(|r| {
                let mut r = r.clone();
                r[col] *= scale;
                r
            }).collect();
            let cfg = TrainConfig { n_rounds: 6, ..TrainConfig::default() };
            let a = fit(&x, &y, &cfg).unwrap();
            let b = fit(&scaled, &y, &cfg).unwrap();
            for (r, s) in x.iter().zip(&scaled) {
                prop_assert_eq!(a.predict(r).unwrap(), b.predict(s).unwrap());
            }
        }
    }
}

