//! Online phase. Each arriving instance is ranked against every class map,
//! the classes are ordered by an iterative k-nearest-neighbor vote, a label
//! set is assembled with the Bayes-rule acceptance test, and the model is then
//! adapted with the predicted labels only. True labels are never consulted.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offline::Model;
use crate::stats::{update_cardinality, AvgOutputMode};
use crate::types::{Instance, LabelSet};

pub const DEFAULT_ETA: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Classify and adapt the model after every instance.
    #[default]
    Adaptive,
    /// Classify only; the model is never touched.
    Frozen,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Variant::Adaptive),
            "frozen" => Ok(Variant::Frozen),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected adaptive or frozen)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Adaptive => "adaptive",
            Variant::Frozen => "frozen",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub eta: f64,
    pub avg_output_mode: AvgOutputMode,
    pub variant: Variant,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            eta: DEFAULT_ETA,
            avg_output_mode: AvgOutputMode::default(),
            variant: Variant::default(),
        }
    }
}

/// Per-map neuron rankings for one instance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedNeurons {
    /// For each class, `(neuron index, distance)` ascending by distance.
    pub sorted: Vec<Vec<(usize, f64)>>,
    /// Best matching neuron of each class map.
    pub winner: Vec<usize>,
    /// `exp(-distance)` of each winner.
    pub winner_output: Vec<f64>,
}

impl RankedNeurons {
    pub fn n_classes(&self) -> usize {
        self.sorted.len()
    }

    /// Builds rankings from already-sorted per-class lists.
    pub fn from_sorted(sorted: Vec<Vec<(usize, f64)>>) -> Self {
        let winner = sorted.iter().map(|l| l[0].0).collect();
        let winner_output = sorted.iter().map(|l| (-l[0].1).exp()).collect();
        RankedNeurons {
            sorted,
            winner,
            winner_output,
        }
    }
}

pub fn rank_all_maps(model: &Model, x: &[f64]) -> Result<RankedNeurons> {
    if x.len() != model.n_features() {
        return Err(Error::usage(format!(
            "instance has {} features, model expects {}",
            x.len(),
            model.n_features()
        )));
    }
    let mut ranked = RankedNeurons::default();
    rank_into(model, x, &mut ranked);
    Ok(ranked)
}

fn rank_into(model: &Model, x: &[f64], ranked: &mut RankedNeurons) {
    let n = model.n_classes();
    ranked.sorted.resize_with(n, Vec::new);
    ranked.winner.resize(n, 0);
    ranked.winner_output.resize(n, 0.0);
    for (j, map) in model.maps.iter().enumerate() {
        let list = &mut ranked.sorted[j];
        map.sort_neurons_into(x, list);
        ranked.winner[j] = list[0].0;
        ranked.winner_output[j] = (-list[0].1).exp();
    }
}

/// Orders all classes by repeated k-nearest-neighbor votes.
///
/// Each round pools the neurons of every class not yet ranked, takes the `k`
/// nearest (all of them if fewer remain), and appends the class owning the
/// most of those. Vote ties go to the class with the nearest single neuron,
/// then to the lowest class index. The winner's neurons leave the pool.
pub fn rank_classes_knn(ranked: &RankedNeurons, k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(ranked.n_classes());
    let mut scratch = KnnScratch::default();
    rank_classes_into(ranked, k, &mut out, &mut scratch);
    out
}

#[derive(Debug, Default)]
struct KnnScratch {
    remaining: Vec<bool>,
    cursor: Vec<usize>,
    votes: Vec<usize>,
    nearest: Vec<f64>,
}

fn rank_classes_into(ranked: &RankedNeurons, k: usize, out: &mut Vec<usize>, s: &mut KnnScratch) {
    let n = ranked.n_classes();
    out.clear();
    s.remaining.clear();
    s.remaining.resize(n, true);
    s.cursor.resize(n, 0);
    s.votes.resize(n, 0);
    s.nearest.resize(n, f64::INFINITY);
    let k = k.max(1);

    while out.len() < n {
        for j in 0..n {
            s.cursor[j] = 0;
            s.votes[j] = 0;
            s.nearest[j] = f64::INFINITY;
        }
        // k-way merge over the remaining classes' sorted lists.
        for _ in 0..k {
            let mut pick: Option<(usize, f64)> = None;
            for j in 0..n {
                if !s.remaining[j] {
                    continue;
                }
                if let Some(&(_, d)) = ranked.sorted[j].get(s.cursor[j]) {
                    if pick.is_none_or(|(_, best)| d < best) {
                        pick = Some((j, d));
                    }
                }
            }
            let Some((j, d)) = pick else { break };
            if s.votes[j] == 0 {
                s.nearest[j] = d;
            }
            s.votes[j] += 1;
            s.cursor[j] += 1;
        }
        let mut best: Option<usize> = None;
        for j in 0..n {
            if !s.remaining[j] || s.votes[j] == 0 {
                continue;
            }
            best = match best {
                None => Some(j),
                Some(b) if s.votes[j] > s.votes[b]
                    || (s.votes[j] == s.votes[b] && s.nearest[j] < s.nearest[b]) =>
                {
                    Some(j)
                }
                keep => keep,
            };
        }
        match best {
            Some(w) => {
                s.remaining[w] = false;
                out.push(w);
            }
            // Only reachable with empty maps, which a valid model never has.
            None => {
                out.extend((0..n).filter(|&j| s.remaining[j]));
                break;
            }
        }
    }
}

/// Number of ranked classes considered for a prediction: `ceil(z)` clamped to `[1, n]`.
pub fn label_budget(z: f64, n: usize) -> usize {
    let c = z.ceil();
    if c.is_nan() || c < 1.0 {
        1
    } else {
        (c as usize).min(n).max(1)
    }
}

/// Assembles the predicted label set. The top-ranked class is always taken;
/// each following candidate `c` within the budget is accepted when
/// `p(y_c) * prod p(y_d|y_c) * output(c) >= threshold`, the product running
/// over already accepted classes with non-zero conditionals.
pub fn select_labels(model: &Model, ranked: &RankedNeurons, win_classes: &[usize]) -> LabelSet {
    let budget = label_budget(model.cardinality.z, model.n_classes()).min(win_classes.len());
    let mut y = LabelSet::singleton(win_classes[0]);
    for pos in 1..budget {
        let c = win_classes[pos];
        let mut conditional = 1.0;
        for &d in &win_classes[..pos] {
            if y.contains(d) {
                let p = model.probs.conditional(d, c);
                if p > 0.0 {
                    conditional *= p;
                }
            }
        }
        let score = model.probs.prior(c) * conditional * ranked.winner_output[c];
        if score >= model.neuron_stats.threshold[c][ranked.winner[c]] {
            y.insert(c);
        }
    }
    y
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub sequence_id: u64,
    pub labels: LabelSet,
}

/// Mutable online classifier wrapping a trained model.
#[derive(Debug)]
pub struct OnlineState {
    model: Model,
    cfg: OnlineConfig,
    rejects: u64,
    x: Vec<f64>,
    ranked: RankedNeurons,
    win_classes: Vec<usize>,
    knn: KnnScratch,
}

impl OnlineState {
    pub fn new(model: Model, cfg: OnlineConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.eta) {
            return Err(Error::Config(format!("eta {} outside [0, 1]", cfg.eta)));
        }
        model.check_invariants()?;
        let x = vec![0.0; model.n_features()];
        Ok(OnlineState {
            model,
            cfg,
            rejects: 0,
            x,
            ranked: RankedNeurons::default(),
            win_classes: Vec::new(),
            knn: KnnScratch::default(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &OnlineConfig {
        &self.cfg
    }

    /// Instances skipped as malformed so far.
    pub fn rejects(&self) -> u64 {
        self.rejects
    }

    /// Classifies raw (unscaled) features without changing the model.
    pub fn classify(&mut self, raw: &[f64]) -> Result<LabelSet> {
        self.check_raw(raw)?;
        self.model.prepare(raw, &mut self.x)?;
        rank_into(&self.model, &self.x, &mut self.ranked);
        rank_classes_into(&self.ranked, self.model.k, &mut self.win_classes, &mut self.knn);
        Ok(select_labels(&self.model, &self.ranked, &self.win_classes))
    }

    /// Classifies raw features, then adapts the model (adaptive variant only).
    pub fn step(&mut self, raw: &[f64]) -> Result<LabelSet> {
        let y = self.classify(raw)?;
        if self.cfg.variant == Variant::Adaptive {
            let x = std::mem::take(&mut self.x);
            let winners = std::mem::take(&mut self.ranked.winner);
            self.adapt_with(&x, &winners, &y);
            self.x = x;
            self.ranked.winner = winners;
        }
        Ok(y)
    }

    /// Unsupervised update with a predicted label set for prepared features `x`:
    /// advance `N`, nudge each predicted class's winning neuron towards `x`,
    /// fold the new output into its average, then refresh cardinality,
    /// counts, probabilities and thresholds.
    pub fn adapt(&mut self, x: &[f64], y: &LabelSet) -> Result<()> {
        if x.len() != self.model.n_features() {
            return Err(Error::usage("feature length mismatch"));
        }
        y.check_bounds(self.model.n_classes())?;
        if y.is_empty() {
            return Err(Error::usage("cannot adapt with an empty label set"));
        }
        let winners: Vec<usize> = self.model.maps.iter().map(|m| m.bmu(x).0).collect();
        self.adapt_with(x, &winners, y);
        Ok(())
    }

    fn adapt_with(&mut self, x: &[f64], winners: &[usize], y: &LabelSet) {
        let m = &mut self.model;
        m.counts.n_total += 1;
        let n_total = m.counts.n_total;
        for c in y.iter() {
            let b = winners[c];
            m.maps[c].nudge(b, x, self.cfg.eta);
            let output = (-crate::types::distance(x, m.maps[c].weight(b))).exp();
            m.neuron_stats.record_output(c, b, output, self.cfg.avg_output_mode);
        }
        m.cardinality = update_cardinality(m.cardinality, y, n_total).expect("N >= 1");
        m.counts.update(y);
        m.probs.refresh(&m.counts);
        m.neuron_stats.update_thresholds(&m.probs);
    }

    fn check_raw(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.model.n_features() {
            return Err(Error::usage(format!(
                "instance has {} features, model expects {}",
                raw.len(),
                self.model.n_features()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("instance has non-finite features"));
        }
        Ok(())
    }

    /// Runs every instance through [`step`](Self::step) in order, handing each
    /// prediction to `sink` as soon as it is produced. Malformed instances are
    /// logged and skipped. Returns the number accepted.
    pub fn run<I, F>(&mut self, stream: I, mut sink: F) -> u64
    where
        I: IntoIterator<Item = Instance>,
        F: FnMut(Prediction),
    {
        let mut accepted = 0;
        for Instance {
            sequence_id,
            features,
            ..
        } in stream
        {
            match self.step(&features) {
                Ok(labels) => {
                    accepted += 1;
                    sink(Prediction {
                        sequence_id,
                        labels,
                    });
                }
                Err(e) => {
                    self.rejects += 1;
                    warn!("skipping instance {sequence_id}: {e}");
                }
            }
        }
        accepted
    }
}

/// Processes a whole stream and collects the prediction log.
pub fn process_stream<I>(state: &mut OnlineState, stream: I) -> Vec<Prediction>
where
    I: IntoIterator<Item = Instance>,
{
    let mut log = Vec::new();
    state.run(stream, |p| log.push(p));
    log
}
