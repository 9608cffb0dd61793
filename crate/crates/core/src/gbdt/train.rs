use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sigmoid, BoostedModel, GbdtError, Node, TrainConfig, Tree, LOGIT_CLAMP};
use crate::features::{FeatureSchema, FeatureVector};

// Hessian floor for Newton leaf values.
const LEAF_L2: f64 = 1.0;
const MIN_SPLIT_GAIN: f64 = 1e-12;
const MAX_HALVINGS: usize = 40;

/// Per-round training loss, recorded alongside the fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Mean logistic loss before any tree, then after each round.
    pub train_loss: Vec<f64>,
}

/// Equal-frequency thresholds for one feature. A row falls in bin `b` when
/// exactly `b` thresholds are `<=` its value.
struct FeatureBins {
    thresholds: Vec<f64>,
    codes: Vec<u16>,
}

fn bin_feature(column: &[f64], bins: usize) -> FeatureBins {
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let min = sorted[0];
    let mut thresholds: Vec<f64> = (1..bins)
        .map(|k| sorted[(k * n / bins).min(n - 1)])
        .filter(|&t| t > min)
        .collect();
    thresholds.dedup();
    let codes = column
        .iter()
        .map(|&x| thresholds.partition_point(|&t| t <= x) as u16)
        .collect();
    FeatureBins { thresholds, codes }
}

fn logloss(y: u8, raw: f64) -> f64 {
    // log(1 + exp(-s z)) with s = ±1, computed stably
    let z = raw.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    let m = if y == 1 { -z } else { z };
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

struct Split {
    feature: usize,
    bin: usize,
    gain: f64,
}

struct Grower<'a> {
    bins: &'a [FeatureBins],
    residual: &'a [f64],
    hessian: &'a [f64],
    features: &'a [usize],
    cfg: &'a TrainConfig,
    nodes: Vec<Node>,
    leaves: Vec<usize>,
}

impl Grower<'_> {
    fn best_split(&self, rows: &[usize]) -> Option<Split> {
        let total_n = rows.len() as f64;
        let total_s: f64 = rows.iter().map(|&r| self.residual[r]).sum();
        let parent = total_s * total_s / total_n;
        let min_leaf = self.cfg.min_samples_leaf;
        let mut best: Option<Split> = None;
        for &f in self.features {
            let fb = &self.bins[f];
            if fb.thresholds.is_empty() {
                continue;
            }
            let width = fb.thresholds.len() + 1;
            let mut sums = vec![0.0; width];
            let mut counts = vec![0usize; width];
            for &r in rows {
                let b = usize::from(fb.codes[r]);
                sums[b] += self.residual[r];
                counts[b] += 1;
            }
            let (mut ls, mut ln) = (0.0, 0usize);
            // split at threshold t sends bins 0..=t left
            for t in 0..fb.thresholds.len() {
                ls += sums[t];
                ln += counts[t];
                let rn = rows.len() - ln;
                if ln < min_leaf || rn < min_leaf {
                    continue;
                }
                let rs = total_s - ls;
                let gain = ls * ls / ln as f64 + rs * rs / rn as f64 - parent;
                if gain > MIN_SPLIT_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Split {
                        feature: f,
                        bin: t,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if depth < self.cfg.max_depth && rows.len() >= 2 * self.cfg.min_samples_leaf {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            None => {
                let g: f64 = rows.iter().map(|&r| self.residual[r]).sum();
                let h: f64 = rows.iter().map(|&r| self.hessian[r]).sum();
                self.nodes[id] = Node::Leaf {
                    value: g / (h + LEAF_L2),
                };
                self.leaves.push(id);
            }
            Some(s) => {
                let fb = &self.bins[s.feature];
                let (left, right): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&r| usize::from(fb.codes[r]) <= s.bin);
                let threshold = fb.thresholds[s.bin];
                let l = self.grow(left, depth + 1);
                let r = self.grow(right, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold,
                    left: l,
                    right: r,
                };
            }
        }
        id
    }
}

fn subsample(rng: &mut ChaCha8Rng, n: usize, ratio: f64) -> Vec<usize> {
    if ratio >= 1.0 {
        return (0..n).collect();
    }
    let k = ((n as f64 * ratio).round() as usize).clamp(1, n);
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Fits a model on labeled vectors sharing `schema`.
pub fn fit(
    rows: &[FeatureVector],
    schema: &FeatureSchema,
    cfg: &TrainConfig,
) -> Result<BoostedModel, GbdtError> {
    fit_traced(rows, schema, cfg).map(|(m, _)| m)
}

/// As [`fit`], also returning the per-round training loss.
pub fn fit_traced(
    rows: &[FeatureVector],
    schema: &FeatureSchema,
    cfg: &TrainConfig,
) -> Result<(BoostedModel, FitTrace), GbdtError> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(GbdtError::EmptyMatrix);
    }
    let fingerprint = schema.fingerprint();
    let width = schema.len();
    let mut labels = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.schema != fingerprint {
            return Err(GbdtError::SchemaMismatch {
                expected: fingerprint,
                found: r.schema,
            });
        }
        if r.values.len() != width {
            return Err(GbdtError::Width {
                expected: width,
                found: r.values.len(),
            });
        }
        if r.values.iter().any(|x| !x.is_finite()) {
            return Err(GbdtError::NonFinite(i));
        }
        match r.label {
            Some(l @ (0 | 1)) => labels.push(l),
            _ => {
                return Err(GbdtError::MissingLabel {
                    row: i,
                    paper_id: r.paper_id.clone(),
                    ref_index: r.ref_index,
                })
            }
        }
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(GbdtError::SingleClass(0));
    }
    if positives == labels.len() {
        return Err(GbdtError::SingleClass(1));
    }

    let n = rows.len();
    let rate = positives as f64 / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let bins: Vec<FeatureBins> = (0..width)
        .map(|f| {
            let column: Vec<f64> = rows.iter().map(|r| r.values[f]).collect();
            bin_feature(&column, cfg.bins)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut raw = vec![base_score; n];
    let mean_loss = |raw: &[f64]| {
        labels.iter().zip(raw).map(|(&y, &z)| logloss(y, z)).sum::<f64>() / n as f64
    };
    let mut trace = FitTrace {
        train_loss: vec![mean_loss(&raw)],
    };
    let mut trees = Vec::with_capacity(cfg.trees);
    let mut residual = vec![0.0; n];
    let mut hessian = vec![0.0; n];

    for _ in 0..cfg.trees {
        for i in 0..n {
            let p = sigmoid(raw[i].clamp(-LOGIT_CLAMP, LOGIT_CLAMP));
            residual[i] = f64::from(labels[i]) - p;
            hessian[i] = p * (1.0 - p);
        }
        let sampled_rows = subsample(&mut rng, n, cfg.row_subsample);
        let features = subsample(&mut rng, width, cfg.feature_subsample);
        let mut grower = Grower {
            bins: &bins,
            residual: &residual,
            hessian: &hessian,
            features: &features,
            cfg,
            nodes: Vec::new(),
            leaves: Vec::new(),
        };
        grower.grow(sampled_rows, 0);
        let Grower { nodes, leaves, .. } = grower;
        let mut tree = Tree { nodes };

        // Every training row, grouped by the leaf it lands in. A leaf step is
        // halved until it does not increase the loss of its rows.
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
        for (i, r) in rows.iter().enumerate() {
            members[tree.leaf_index(&r.values)].push(i);
        }
        for &leaf in &leaves {
            let Node::Leaf { value } = tree.nodes[leaf] else {
                unreachable!("leaves list holds leaf ids")
            };
            let rows_here = &members[leaf];
            let before: f64 = rows_here.iter().map(|&i| logloss(labels[i], raw[i])).sum();
            let mut v = value;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let step = cfg.learning_rate * v;
                let after: f64 = rows_here
                    .iter()
                    .map(|&i| logloss(labels[i], raw[i] + step))
                    .sum();
                if after <= before {
                    accepted = true;
                    break;
                }
                v *= 0.5;
            }
            tree.nodes[leaf] = Node::Leaf {
                value: if accepted { v } else { 0.0 },
            };
        }
        for (i, r) in rows.iter().enumerate() {
            raw[i] += cfg.learning_rate * tree.predict(&r.values);
        }
        trace.train_loss.push(mean_loss(&raw));
        trees.push(tree);
    }

    let model = BoostedModel {
        base_score,
        learning_rate: cfg.learning_rate,
        n_features: width,
        schema: fingerprint,
        trees,
    };
    Ok((model, trace))
}
