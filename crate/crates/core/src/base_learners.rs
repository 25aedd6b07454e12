//! Weak learners: signed coordinates, threshold stumps and greedy depth-2
//! trees, each returning the candidate with the largest weighted
//! correlation `Σ_j D(j) y_j h(x_j)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("no weak learner with positive correlation (best {best})")]
    NoWeakLearner { best: f64 },
    #[error("feature vector has {got} entries, expected more than index {index}")]
    DimensionMismatch { got: usize, index: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Finite(*v)
        } else if *v > 0.0 {
            Repr::Named("inf".into())
        } else {
            Repr::Named("-inf".into())
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Named(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Named(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Named(s) => Err(serde::de::Error::custom(format!("bad threshold '{s}'"))),
        }
    }
}

/// `polarity · sign(x[index] - threshold)` with `sign(0) = +1`. Infinite
/// thresholds give constant predictors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub index: usize,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub polarity: i8,
}

impl Stump {
    #[inline]
    pub fn above(&self, x: &[f64]) -> bool {
        x[self.index] >= self.threshold
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> i8 {
        if self.above(x) {
            self.polarity
        } else {
            -self.polarity
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BaseHypothesis {
    SignedCoordinate {
        index: usize,
        sign: i8,
    },
    Stump(Stump),
    /// Root split, one stump per side, and the leaf signs in the order
    /// `[left-below, left-above, right-below, right-above]` where "left" is
    /// `x[root.index] < root.threshold`. The child polarities are unused.
    Tree2 {
        root: Stump,
        left: Stump,
        right: Stump,
        leaves: [i8; 4],
    },
}

impl BaseHypothesis {
    fn max_index(&self) -> usize {
        match self {
            BaseHypothesis::SignedCoordinate { index, .. } => *index,
            BaseHypothesis::Stump(s) => s.index,
            BaseHypothesis::Tree2 { root, left, right, .. } => root.index.max(left.index).max(right.index),
        }
    }

    /// Prediction without the dimension check.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> i8 {
        match self {
            BaseHypothesis::SignedCoordinate { index, sign } => {
                if x[*index] >= 0.0 {
                    *sign
                } else {
                    -*sign
                }
            }
            BaseHypothesis::Stump(s) => s.eval(x),
            BaseHypothesis::Tree2 { root, left, right, leaves } => {
                let leaf = if root.above(x) { 2 + usize::from(right.above(x)) } else { usize::from(left.above(x)) };
                leaves[leaf]
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<i8, LearnError> {
        let index = self.max_index();
        if index >= x.len() {
            return Err(LearnError::DimensionMismatch { got: x.len(), index });
        }
        Ok(self.eval(x))
    }
}

/// A dataset with a probability distribution over its examples.
#[derive(Debug, Clone, Copy)]
pub struct WeightedData<'a> {
    pub data: &'a Dataset,
    pub weights: &'a [f64],
}

impl<'a> WeightedData<'a> {
    pub fn new(data: &'a Dataset, weights: &'a [f64]) -> Result<Self, LearnError> {
        if weights.len() != data.len() {
            return Err(LearnError::InvalidWeights(format!("{} weights for {} examples", weights.len(), data.len())));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(LearnError::InvalidWeights("negative or non-finite weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LearnError::InvalidWeights(format!("weights sum to {total}")));
        }
        Ok(WeightedData { data, weights })
    }

    /// `Σ_j D(j) y_j h(x_j)`.
    pub fn correlation(&self, h: &BaseHypothesis) -> f64 {
        let labels = self.data.labels();
        (0..self.data.len()).map(|j| self.weights[j] * f64::from(labels[j] * h.eval(self.data.row(j)))).sum()
    }

    /// Weighted mass of the examples `h` gets wrong.
    pub fn error(&self, h: &BaseHypothesis) -> f64 {
        let labels = self.data.labels();
        (0..self.data.len()).filter(|&j| labels[j] != h.eval(self.data.row(j))).map(|j| self.weights[j]).sum()
    }

    fn signed_weights(&self) -> Vec<f64> {
        self.weights.iter().zip(self.data.labels()).map(|(&w, &y)| w * f64::from(y)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub hypothesis: BaseHypothesis,
    pub correlation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    /// `h(x) = ±x_i` on ±1 features.
    Coordinate,
    Stump,
    Tree2,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Coordinate => "coordinate",
            LearnerKind::Stump => "stump",
            LearnerKind::Tree2 => "tree2",
        }
    }
}

/// Per-feature sort orders, computed once per dataset.
#[derive(Debug, Clone)]
pub struct FeatureOrder {
    order: Vec<Vec<u32>>,
}

impl FeatureOrder {
    pub fn new(ds: &Dataset) -> Self {
        let order = (0..ds.dim())
            .map(|i| {
                let mut idx: Vec<u32> = (0..ds.len() as u32).collect();
                idx.sort_by(|&a, &b| ds.value(a as usize, i).total_cmp(&ds.value(b as usize, i)).then(a.cmp(&b)));
                idx
            })
            .collect();
        FeatureOrder { order }
    }
}

/// A weak learner bound to one training set.
#[derive(Debug, Clone)]
pub struct Learner {
    kind: LearnerKind,
    order: Option<FeatureOrder>,
}

impl Learner {
    pub fn new(kind: LearnerKind, ds: &Dataset) -> Self {
        let order = match kind {
            LearnerKind::Coordinate => None,
            LearnerKind::Stump | LearnerKind::Tree2 => Some(FeatureOrder::new(ds)),
        };
        Learner { kind, order }
    }

    pub fn kind(&self) -> LearnerKind {
        self.kind
    }

    pub fn fit(&self, wd: &WeightedData) -> Result<Fitted, LearnError> {
        match (self.kind, &self.order) {
            (LearnerKind::Coordinate, _) => fit_signed_coordinate(wd),
            (LearnerKind::Stump, Some(order)) => fit_stump(wd, order),
            (LearnerKind::Tree2, Some(order)) => fit_tree2(wd, order),
            _ => unreachable!("sort order is built for stump learners"),
        }
    }
}

fn require_positive(fitted: Fitted) -> Result<Fitted, LearnError> {
    if fitted.correlation > 0.0 {
        Ok(fitted)
    } else {
        Err(LearnError::NoWeakLearner { best: fitted.correlation })
    }
}

pub fn best_signed_coordinate(wd: &WeightedData) -> Result<BaseHypothesis, LearnError> {
    fit_signed_coordinate(wd).map(|f| f.hypothesis)
}

pub fn best_threshold_stump(wd: &WeightedData) -> Result<BaseHypothesis, LearnError> {
    fit_stump(wd, &FeatureOrder::new(wd.data)).map(|f| f.hypothesis)
}

pub fn best_tree2(wd: &WeightedData) -> Result<BaseHypothesis, LearnError> {
    fit_tree2(wd, &FeatureOrder::new(wd.data)).map(|f| f.hypothesis)
}

/// Ties go to the smallest index, then to `sign = +1`.
pub fn fit_signed_coordinate(wd: &WeightedData) -> Result<Fitted, LearnError> {
    let ds = wd.data;
    let sw = wd.signed_weights();
    let mut corr = vec![0.0; ds.dim()];
    for (j, &w) in sw.iter().enumerate() {
        for (c, &x) in corr.iter_mut().zip(ds.row(j)) {
            *c += w * x;
        }
    }
    let mut best =
        Fitted { hypothesis: BaseHypothesis::SignedCoordinate { index: 0, sign: 1 }, correlation: f64::NEG_INFINITY };
    for (index, &c) in corr.iter().enumerate() {
        for sign in [1i8, -1] {
            let value = f64::from(sign) * c;
            if value > best.correlation {
                best = Fitted { hypothesis: BaseHypothesis::SignedCoordinate { index, sign }, correlation: value };
            }
        }
    }
    require_positive(best)
}

#[derive(Debug, Clone, Copy)]
struct StumpCandidate {
    stump: Stump,
    correlation: f64,
}

impl StumpCandidate {
    fn is_split(&self) -> bool {
        self.stump.threshold.is_finite()
    }

    /// Higher correlation wins; on an exact tie a real split beats a
    /// constant predictor, otherwise the earlier candidate stays.
    fn beats(&self, other: &StumpCandidate) -> bool {
        self.correlation > other.correlation
            || (self.correlation == other.correlation && self.is_split() && !other.is_split())
    }
}

/// Best stump restricted to the examples selected by `mask` (all when `None`).
/// Candidates are scanned by feature, then increasing threshold; polarity +1
/// is preferred on ties.
fn scan_stumps(ds: &Dataset, sw: &[f64], order: &FeatureOrder, mask: Option<&[bool]>) -> StumpCandidate {
    let included = |j: usize| mask.is_none_or(|m| m[j]);
    let total: f64 = (0..ds.len()).filter(|&j| included(j)).map(|j| sw[j]).sum();
    let mut best: Option<StumpCandidate> = None;
    let mut offer = |stump_index: usize, threshold: f64, below: f64| {
        // corr = p · (total − 2·below) where `below` sums examples with x < threshold.
        let raw = total - 2.0 * below;
        let polarity = if raw >= 0.0 { 1 } else { -1 };
        let cand = StumpCandidate { stump: Stump { index: stump_index, threshold, polarity }, correlation: raw.abs() };
        if best.as_ref().is_none_or(|b| cand.beats(b)) {
            best = Some(cand);
        }
    };
    for (i, idx) in order.order.iter().enumerate() {
        offer(i, f64::NEG_INFINITY, 0.0);
        let mut below = 0.0;
        let mut prev: Option<f64> = None;
        for &j in idx {
            let j = j as usize;
            if !included(j) {
                continue;
            }
            let v = ds.value(j, i);
            if let Some(p) = prev {
                if v > p {
                    offer(i, 0.5 * (p + v), below);
                }
            }
            below += sw[j];
            prev = Some(v);
        }
        offer(i, f64::INFINITY, total);
    }
    best.expect("dataset has at least one feature")
}

pub fn fit_stump(wd: &WeightedData, order: &FeatureOrder) -> Result<Fitted, LearnError> {
    let sw = wd.signed_weights();
    let best = scan_stumps(wd.data, &sw, order, None);
    require_positive(Fitted { hypothesis: BaseHypothesis::Stump(best.stump), correlation: best.correlation })
}

/// Greedy depth-2 tree: best root stump on all data, then the best stump on
/// each side of the root, with every leaf predicting its weighted majority.
pub fn fit_tree2(wd: &WeightedData, order: &FeatureOrder) -> Result<Fitted, LearnError> {
    let ds = wd.data;
    let sw = wd.signed_weights();
    let root = scan_stumps(ds, &sw, order, None).stump;
    let right_mask: Vec<bool> = ds.rows().map(|x| root.above(x)).collect();
    let left_mask: Vec<bool> = right_mask.iter().map(|&r| !r).collect();
    let left = scan_stumps(ds, &sw, order, Some(&left_mask)).stump;
    let right = scan_stumps(ds, &sw, order, Some(&right_mask)).stump;

    let mut sums = [0.0; 4];
    for (j, x) in ds.rows().enumerate() {
        let leaf = if right_mask[j] { 2 + usize::from(right.above(x)) } else { usize::from(left.above(x)) };
        sums[leaf] += sw[j];
    }
    let leaves = sums.map(|s| if s >= 0.0 { 1i8 } else { -1 });
    let correlation = sums.iter().map(|s| s.abs()).sum();
    require_positive(Fitted { hypothesis: BaseHypothesis::Tree2 { root, left, right, leaves }, correlation })
}
