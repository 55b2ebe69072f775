//! Random survival forests: bootstrap survival trees grown with log-rank
//! splits, Nelson-Aalen leaves, and an ensemble mortality score.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SurvivalLabel;
use crate::metrics::{self, MetricsError};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RsfError {
    #[error("a split child is empty")]
    EmptyChild,
    #[error("no observed events")]
    NoEvents,
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid forest parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T, E = RsfError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per node; `None` means `ceil(sqrt(d))`.
    pub mtry: Option<usize>,
    pub min_leaf_size: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, mtry: None, min_leaf_size: 15, seed: 0 }
    }
}

impl ForestParams {
    fn resolved_mtry(&self, d: usize) -> Result<usize> {
        let m = self.mtry.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize);
        if m == 0 || m > d {
            return Err(RsfError::InvalidParams(format!("mtry must lie in [1, {d}], got {m}")));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Nelson-Aalen steps `(time, H(time))` of the in-leaf data, and the
    /// sum of `H` over the forest's event-time grid.
    Leaf { steps: Vec<(f64, f64)>, mortality: f64 },
}

/// Arena of nodes; index 0 is the root. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTree {
    pub nodes: Vec<Node>,
}

impl SurvivalTree {
    pub fn leaf_for(&self, x: &[f64]) -> &Node {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Split { feature, threshold, left, right } => {
                    k = if x[*feature] <= *threshold { *left } else { *right };
                }
                leaf => return leaf,
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<SurvivalTree>,
    pub params: ForestParams,
    pub n_features: usize,
    /// Sorted distinct event times of the training data.
    pub event_time_grid: Vec<f64>,
}

/// Absolute standardized log-rank statistic between two child groups.
pub fn logrank_split_score(left: &[SurvivalLabel], right: &[SurvivalLabel]) -> Result<f64> {
    match metrics::logrank_components(left, right) {
        Ok(c) => Ok(c.standardized()),
        Err(MetricsError::EmptyGroup) => Err(RsfError::EmptyChild),
        Err(MetricsError::NoEvents) => Err(RsfError::NoEvents),
        Err(e) => Err(RsfError::DegenerateData(e.to_string())),
    }
}

/// Node rows sorted by time with the pooled counts at each distinct time.
struct TimeTable {
    /// `(row, event)` in increasing time.
    rows: Vec<(usize, bool)>,
    /// `(start, end, deaths)` ranges into `rows`, one per distinct time.
    groups: Vec<(usize, usize, f64)>,
}

impl TimeTable {
    fn new(rows: &[usize], labels: &[SurvivalLabel]) -> Self {
        let mut sorted: Vec<usize> = rows.to_vec();
        sorted.sort_by(|&a, &b| labels[a].time_days.total_cmp(&labels[b].time_days));
        let mut groups = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let t = labels[sorted[i]].time_days;
            let mut j = i;
            let mut d = 0.0;
            while j < sorted.len() && labels[sorted[j]].time_days == t {
                d += f64::from(u8::from(labels[sorted[j]].event));
                j += 1;
            }
            groups.push((i, j, d));
            i = j;
        }
        let rows = sorted.iter().map(|&r| (r, labels[r].event)).collect();
        Self { rows, groups }
    }

    /// Same statistic as [`logrank_split_score`], for the split given by
    /// `in_left` (indexed by row).
    fn score(&self, in_left: &[bool], n_left: usize) -> f64 {
        let mut n = self.rows.len() as f64;
        let mut n_a = n_left as f64;
        let (mut ome, mut var) = (0.0, 0.0);
        for &(s, e, d) in &self.groups {
            let mut d_a = 0.0;
            let mut leaving_a = 0.0;
            for &(r, event) in &self.rows[s..e] {
                if in_left[r] {
                    leaving_a += 1.0;
                    if event {
                        d_a += 1.0;
                    }
                }
            }
            if d > 0.0 {
                let frac = n_a / n;
                ome += d_a - d * frac;
                if n > 1.0 {
                    var += d * frac * (1.0 - frac) * (n - d) / (n - 1.0);
                }
            }
            n -= (e - s) as f64;
            n_a -= leaving_a;
        }
        if var > 0.0 {
            ome.abs() / var.sqrt()
        } else {
            0.0
        }
    }
}

fn nelson_aalen(rows: &[usize], labels: &[SurvivalLabel], grid: &[f64]) -> Node {
    let table = TimeTable::new(rows, labels);
    let mut at_risk = rows.len() as f64;
    let mut h = 0.0;
    let mut steps = Vec::new();
    for &(s, e, d) in &table.groups {
        if d > 0.0 {
            h += d / at_risk;
            steps.push((labels[table.rows[s].0].time_days, h));
        }
        at_risk -= (e - s) as f64;
    }
    let mut mortality = 0.0;
    let mut k = 0;
    for &g in grid {
        while k < steps.len() && steps[k].0 <= g {
            k += 1;
        }
        if k > 0 {
            mortality += steps[k - 1].1;
        }
    }
    Node::Leaf { steps, mortality }
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    labels: &'a [SurvivalLabel],
    grid: &'a [f64],
    mtry: usize,
    min_leaf: usize,
}

impl Grower<'_> {
    /// Best `(score, feature, threshold)` over `mtry` sampled features.
    fn best_split(&self, rows: &[usize], rng: &mut rng::Rng, in_left: &mut [bool]) -> Option<(f64, usize, f64)> {
        let table = TimeTable::new(rows, self.labels);
        let mut best: Option<(f64, usize, f64)> = None;
        for feature in rng::sample_without_replacement(rng, self.x.ncols(), self.mtry) {
            let mut by_value: Vec<usize> = rows.to_vec();
            by_value.sort_by(|&a, &b| self.x[(a, feature)].total_cmp(&self.x[(b, feature)]));
            for &r in rows {
                in_left[r] = false;
            }
            for (pos, w) in by_value.windows(2).enumerate() {
                in_left[w[0]] = true;
                let (lo, hi) = (self.x[(w[0], feature)], self.x[(w[1], feature)]);
                let n_left = pos + 1;
                if lo == hi || n_left < self.min_leaf || rows.len() - n_left < self.min_leaf {
                    continue;
                }
                let score = table.score(in_left, n_left);
                if score > 0.0 && best.is_none_or(|(b, _, _)| score > b) {
                    best = Some((score, feature, 0.5 * (lo + hi)));
                }
            }
        }
        for &r in rows {
            in_left[r] = false;
        }
        best
    }

    fn grow(&self, rows: Vec<usize>, rng: &mut rng::Rng) -> SurvivalTree {
        let mut nodes = vec![Node::Leaf { steps: Vec::new(), mortality: 0.0 }];
        let mut in_left = vec![false; self.x.nrows()];
        let mut stack = vec![(0usize, rows)];
        while let Some((slot, rows)) = stack.pop() {
            let splittable = rows.len() >= 2 * self.min_leaf && rows.iter().any(|&r| self.labels[r].event);
            let split = if splittable { self.best_split(&rows, rng, &mut in_left) } else { None };
            match split {
                Some((_, feature, threshold)) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[(i, feature)] <= threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf { steps: Vec::new(), mortality: 0.0 });
                    nodes.push(Node::Leaf { steps: Vec::new(), mortality: 0.0 });
                    nodes[slot] = Node::Split { feature, threshold, left, right: left + 1 };
                    stack.push((left + 1, r));
                    stack.push((left, l));
                }
                None => nodes[slot] = nelson_aalen(&rows, self.labels, self.grid),
            }
        }
        SurvivalTree { nodes }
    }
}

/// Lexicographic order on (time, event, covariates) so that fitting does
/// not depend on input row order.
fn canonical_order(x: &DMatrix<f64>, labels: &[SurvivalLabel]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        labels[a]
            .time_days
            .total_cmp(&labels[b].time_days)
            .then(labels[a].event.cmp(&labels[b].event))
            .then_with(|| {
                (0..x.ncols())
                    .map(|j| x[(a, j)].total_cmp(&x[(b, j)]))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    order
}

/// Grows `n_trees` survival trees, each on a bootstrap resample drawn from
/// its own derived seed. Trees are built in parallel and kept in index
/// order.
pub fn fit_forest(x: &DMatrix<f64>, labels: &[SurvivalLabel], params: &ForestParams) -> Result<ForestModel> {
    let (n, d) = x.shape();
    if n != labels.len() {
        return Err(RsfError::DimensionMismatch { expected: labels.len(), found: n });
    }
    if params.n_trees == 0 {
        return Err(RsfError::InvalidParams("n_trees must be at least 1".into()));
    }
    if params.min_leaf_size == 0 {
        return Err(RsfError::InvalidParams("min_leaf_size must be at least 1".into()));
    }
    if n == 0 || d == 0 {
        return Err(RsfError::DegenerateData(format!("{n} rows × {d} features")));
    }
    if x.iter().any(|v| !v.is_finite()) || labels.iter().any(|l| !l.time_days.is_finite()) {
        return Err(RsfError::DegenerateData("non-finite value".into()));
    }
    if !labels.iter().any(|l| l.event) {
        return Err(RsfError::NoEvents);
    }
    let mtry = params.resolved_mtry(d)?;

    let order = canonical_order(x, labels);
    let x = x.select_rows(&order);
    let labels: Vec<SurvivalLabel> = order.iter().map(|&i| labels[i]).collect();
    let mut grid: Vec<f64> = labels.iter().filter(|l| l.event).map(|l| l.time_days).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let grower = Grower { x: &x, labels: &labels, grid: &grid, mtry, min_leaf: params.min_leaf_size };
    let trees = rng::derive_seeds(params.seed, params.n_trees)
        .into_par_iter()
        .map(|s| {
            let mut stream = rng::seeded(s);
            let rows: Vec<usize> = (0..n).map(|_| rng::index(&mut stream, n)).collect();
            grower.grow(rows, &mut stream)
        })
        .collect();
    Ok(ForestModel { trees, params: ForestParams { mtry: Some(mtry), ..*params }, n_features: d, event_time_grid: grid })
}

impl ForestModel {
    /// Ensemble mortality: mean over trees of the leaf cumulative hazard
    /// summed over the event-time grid.
    pub fn predict_risk(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(RsfError::DimensionMismatch { expected: self.n_features, found: x.len() });
        }
        let total: f64 = self
            .trees
            .iter()
            .map(|t| match t.leaf_for(x) {
                Node::Leaf { mortality, .. } => *mortality,
                Node::Split { .. } => unreachable!("leaf_for returns a leaf"),
            })
            .sum();
        Ok(total / self.trees.len() as f64)
    }

    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                self.predict_risk(&row)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::c_index;
    use proptest::prelude::*;

    fn l(event: bool, t: f64) -> SurvivalLabel {
        SurvivalLabel { event, time_days: t }
    }

    fn strong_signal(n: usize, seed: u64) -> (DMatrix<f64>, Vec<SurvivalLabel>) {
        let mut r = rng::seeded(seed);
        let mut x = DMatrix::zeros(n, 3);
        let mut labels = Vec::new();
        for i in 0..n {
            for j in 0..3 {
                x[(i, j)] = rng::standard_normal(&mut r);
            }
            let rate = 0.05 * (2.0 * x[(i, 0)]).exp();
            let t = -rng::open_unit(&mut r).ln() / rate;
            let c = -rng::open_unit(&mut r).ln() / 0.05;
            labels.push(l(t <= c, t.min(c)));
        }
        (x, labels)
    }

    #[test]
    fn split_score_examples() {
        let g = [l(true, 1.0), l(false, 2.0), l(true, 3.0)];
        assert_eq!(logrank_split_score(&g, &g).unwrap(), 0.0);
        let early = [l(true, 1.0), l(true, 2.0), l(true, 3.0)];
        let late = [l(false, 10.0), l(false, 11.0), l(false, 12.0)];
        assert!(logrank_split_score(&early, &late).unwrap() > 1.5);
        assert_eq!(logrank_split_score(&[], &late), Err(RsfError::EmptyChild));
        assert_eq!(logrank_split_score(&late, &late), Err(RsfError::NoEvents));
    }

    #[test]
    fn six_subject_hand_case() {
        // times 1..6, left = {1, 3, 5} all deaths, right = {2, 4, 6} censored
        // at t=1: n=6, n_a=3, d=1 → E=1/2, V=1/4
        // at t=3: n=4, n_a=2, d=1 → E=1/2, V=1/4
        // at t=5: n=2, n_a=1, d=1 → E=1/2, V=1/4
        let left = [l(true, 1.0), l(true, 3.0), l(true, 5.0)];
        let right = [l(false, 2.0), l(false, 4.0), l(false, 6.0)];
        let expected = 1.5 / 0.75f64.sqrt();
        assert!((logrank_split_score(&left, &right).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn table_score_matches_reference() {
        let (x, labels) = strong_signal(60, 9);
        let rows: Vec<usize> = (0..60).collect();
        let table = TimeTable::new(&rows, &labels);
        let in_left: Vec<bool> = (0..60).map(|i| x[(i, 1)] <= 0.3).collect();
        let n_left = in_left.iter().filter(|b| **b).count();
        let (a, b): (Vec<SurvivalLabel>, Vec<SurvivalLabel>) = {
            let a = (0..60).filter(|&i| in_left[i]).map(|i| labels[i]).collect();
            let b = (0..60).filter(|&i| !in_left[i]).map(|i| labels[i]).collect();
            (a, b)
        };
        let reference = logrank_split_score(&a, &b).unwrap();
        assert!((table.score(&in_left, n_left) - reference).abs() < 1e-12);
    }

    #[test]
    fn oversized_leaf_gives_constant_forest() {
        let (x, labels) = strong_signal(40, 1);
        let p = ForestParams { n_trees: 5, min_leaf_size: 40, ..ForestParams::default() };
        let f = fit_forest(&x, &labels, &p).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
        let preds = f.predict_batch(&x).unwrap();
        assert!(preds.iter().all(|&p| p == preds[0]));
    }

    #[test]
    fn strong_signal_generalizes() {
        let (x, labels) = strong_signal(400, 2);
        let (xt, lt) = strong_signal(200, 3);
        let p = ForestParams { n_trees: 50, seed: 5, ..ForestParams::default() };
        let f = fit_forest(&x, &labels, &p).unwrap();
        let c = c_index(&f.predict_batch(&xt).unwrap(), &lt).unwrap();
        assert!(c >= 0.75, "c = {c}");
        assert_eq!(f, fit_forest(&x, &labels, &p).unwrap());
    }

    #[test]
    fn leaf_ordering_follows_hazard() {
        let mut x = DMatrix::zeros(40, 1);
        let mut labels = Vec::new();
        for i in 0..40 {
            x[(i, 0)] = i as f64;
            labels.push(if i < 20 { l(true, 1.0 + i as f64 * 0.1) } else { l(false, 50.0 + i as f64) });
        }
        let p = ForestParams { n_trees: 10, min_leaf_size: 5, ..ForestParams::default() };
        let f = fit_forest(&x, &labels, &p).unwrap();
        assert!(f.predict_risk(&[2.0]).unwrap() > f.predict_risk(&[35.0]).unwrap());
        assert!(matches!(f.predict_risk(&[1.0, 2.0]), Err(RsfError::DimensionMismatch { .. })));
    }

    #[test]
    fn matches_hand_traversal() {
        let (x, labels) = strong_signal(20, 4);
        let p = ForestParams { n_trees: 7, min_leaf_size: 3, ..ForestParams::default() };
        let f = fit_forest(&x, &labels, &p).unwrap();
        for i in 0..20 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let mut total = 0.0;
            for tree in &f.trees {
                let mut k = 0;
                while let Node::Split { feature, threshold, left, right } = &tree.nodes[k] {
                    k = if row[*feature] <= *threshold { *left } else { *right };
                }
                if let Node::Leaf { steps, .. } = &tree.nodes[k] {
                    for &g in &f.event_time_grid {
                        total += steps.iter().filter(|s| s.0 <= g).map(|s| s.1).fold(0.0, f64::max);
                    }
                }
            }
            let expected = total / f.trees.len() as f64;
            assert!((f.predict_risk(&row).unwrap() - expected).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn fit_is_order_invariant(seed in 0u64..1000, rot in 1usize..29) {
            let (x, labels) = strong_signal(30, seed);
            let p = ForestParams { n_trees: 4, min_leaf_size: 4, seed, ..ForestParams::default() };
            let order: Vec<usize> = (0..30).map(|i| (i + rot) % 30).collect();
            let xr = x.select_rows(&order);
            let lr: Vec<SurvivalLabel> = order.iter().map(|&i| labels[i]).collect();
            let a = fit_forest(&x, &labels, &p).unwrap();
            let b = fit_forest(&xr, &lr, &p).unwrap();
            prop_assert_eq!(a.predict_batch(&x).unwrap(), b.predict_batch(&x).unwrap());
            for t in &a.trees {
                for node in &t.nodes {
                    if let Node::Leaf { steps, mortality } = node {
                        prop_assert!(steps.windows(2).all(|w| w[0].1 <= w[1].1));
                        prop_assert!(*mortality >= 0.0);
                    }
                }
            }
        }
    }
}
