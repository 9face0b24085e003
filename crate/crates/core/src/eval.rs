//! Evaluation metrics: threshold-swept FP tagging metrics, teacher-forced
//! reconstruction error, rhythm-side duration MSE, and router accuracy.

use crate::adaptation::trainer::pair_with_bos;
use crate::corpus::buckets::assign_speed_tag;
use crate::corpus::fp::FpTag;
use crate::corpus::records::{Corpus, FpDataset};
use crate::error::{Error, Result};
use crate::model::{decide_fp_tags, moe_combine, AcousticModel, LossSelect};
use crate::numerics::Scalar;

/// Token-level and sentence-presence FP metrics at one threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FpEvalRow {
    pub threshold: f64,
    /// Token level, 3-class: a true positive is a non-NONE prediction whose
    /// class matches the gold tag.
    pub token_recall: f64,
    pub token_precision: f64,
    pub token_accuracy: f64,
    /// Sentence level: does the utterance contain any FP at all.
    pub presence_recall: f64,
    pub presence_precision: f64,
    pub presence_accuracy: f64,
    /// Total predicted non-NONE tags across the dataset.
    pub fp_count: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Sweeps the decision threshold over a held-out SPON-FP split. Probabilities
/// are computed once per pair; each threshold reuses them.
pub fn eval_fp<S: Scalar>(
    model: &AcousticModel<S>,
    dataset: &FpDataset,
    thresholds: &[f64],
    speaker: &str,
) -> Result<Vec<FpEvalRow>> {
    if dataset.is_empty() {
        return Err(Error::Data("FP evaluation set is empty".into()));
    }
    let mut per_pair: Vec<(Vec<[f64; 3]>, Vec<FpTag>)> = Vec::with_capacity(dataset.len());
    for rec in &dataset.pairs {
        let pair = pair_with_bos(&rec.pair);
        let probs = model.fp_probs_for_symbols(&pair.phonemes, speaker)?;
        per_pair.push((probs, pair.tags));
    }

    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut tp = 0u64;
        let mut pred_pos = 0u64;
        let mut gold_pos = 0u64;
        let mut correct = 0u64;
        let mut tokens = 0u64;
        let mut s_tp = 0u64;
        let mut s_pred = 0u64;
        let mut s_gold = 0u64;
        let mut s_correct = 0u64;
        for (probs, gold) in &per_pair {
            let pred = decide_fp_tags(probs, t);
            let mut any_pred = false;
            let mut any_gold = false;
            for (p, g) in pred.iter().zip(gold) {
                tokens += 1;
                if p == g {
                    correct += 1;
                }
                if p.is_fp() {
                    pred_pos += 1;
                    any_pred = true;
                }
                if g.is_fp() {
                    gold_pos += 1;
                    any_gold = true;
                }
                if p.is_fp() && p == g {
                    tp += 1;
                }
            }
            if any_pred {
                s_pred += 1;
            }
            if any_gold {
                s_gold += 1;
            }
            if any_pred && any_gold {
                s_tp += 1;
            }
            if any_pred == any_gold {
                s_correct += 1;
            }
        }
        rows.push(FpEvalRow {
            threshold: t,
            token_recall: ratio(tp, gold_pos),
            token_precision: ratio(tp, pred_pos),
            token_accuracy: ratio(correct, tokens),
            presence_recall: ratio(s_tp, s_gold),
            presence_precision: ratio(s_tp, s_pred),
            presence_accuracy: ratio(s_correct, per_pair.len() as u64),
            fp_count: pred_pos,
        });
    }
    Ok(rows)
}

/// Binary positive-class (UH+UM vs NONE) recall at one threshold; the
/// training-check metric for FP adaptation.
pub fn fp_positive_recall<S: Scalar>(
    model: &AcousticModel<S>,
    dataset: &FpDataset,
    threshold: f64,
    speaker: &str,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data("FP dataset is empty".into()));
    }
    let mut tp = 0u64;
    let mut gold_pos = 0u64;
    for rec in &dataset.pairs {
        let pair = pair_with_bos(&rec.pair);
        let probs = model.fp_probs_for_symbols(&pair.phonemes, speaker)?;
        let pred = decide_fp_tags(&probs, threshold);
        for (p, g) in pred.iter().zip(&pair.tags) {
            if g.is_fp() {
                gold_pos += 1;
                if p.is_fp() {
                    tp += 1;
                }
            }
        }
    }
    Ok(ratio(tp, gold_pos))
}

/// The paper-shaped default grid, bracketing 0.10 and 0.99.
pub fn default_threshold_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    grid.push(0.95);
    grid.push(0.99);
    grid
}

pub fn fp_eval_csv(rows: &[FpEvalRow]) -> String {
    let mut out = String::from(
        "threshold,token_recall,token_precision,token_accuracy,presence_recall,presence_precision,presence_accuracy,fp_count\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{:.2},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.threshold,
            r.token_recall,
            r.token_precision,
            r.token_accuracy,
            r.presence_recall,
            r.presence_precision,
            r.presence_accuracy,
            r.fp_count
        ));
    }
    out
}

/// Mean teacher-forced mel L1 over a corpus, evaluation mode.
pub fn teacher_forced_mel_l1<S: Scalar>(model: &AcousticModel<S>, corpus: &Corpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Data("corpus is empty".into()));
    }
    let mut total = 0.0;
    for r in &corpus.records {
        let fwd = model.forward_train(r, LossSelect::speaker(), None)?;
        total += fwd.bundle.mel_l1.expect("mel selected");
    }
    Ok(total / corpus.len() as f64)
}

/// Log-domain duration MSE of the adapted MoE (router-weighted experts) over
/// a corpus with ground-truth FP insertion.
pub fn moe_duration_mse<S: Scalar>(model: &AcousticModel<S>, corpus: &Corpus) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for r in &corpus.records {
        let view = model.rhythm_view(r)?;
        let experts = view
            .experts
            .as_ref()
            .ok_or_else(|| Error::State("MoE duration MSE requires initialized experts".into()))?;
        for i in 0..view.targets.len() {
            let pred = moe_combine(view.router[i], experts[i]);
            let d = pred - view.targets[i];
            total += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("corpus has no positions".into()));
    }
    Ok(total / n as f64)
}

/// Log-domain duration MSE of the single (source) duration predictor.
pub fn single_duration_mse<S: Scalar>(model: &AcousticModel<S>, corpus: &Corpus) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for r in &corpus.records {
        let view = model.rhythm_view(r)?;
        for i in 0..view.targets.len() {
            let d = view.single[i] - view.targets[i];
            total += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("corpus has no positions".into()));
    }
    Ok(total / n as f64)
}

/// Fraction of positions whose router argmax matches the ground-truth speed
/// bucket of the recorded duration.
pub fn router_accuracy<S: Scalar>(model: &AcousticModel<S>, corpus: &Corpus) -> Result<f64> {
    let buckets = model
        .buckets
        .ok_or_else(|| Error::State("model has no speed buckets".into()))?;
    let mut hit = 0usize;
    let mut n = 0usize;
    for r in &corpus.records {
        let view = model.rhythm_view(r)?;
        for (i, &d) in view.durations.iter().enumerate() {
            let gold = assign_speed_tag(d, buckets).index();
            let row = view.router[i];
            let argmax = (0..3)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).expect("finite"))
                .unwrap();
            if argmax == gold {
                hit += 1;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("corpus has no positions".into()));
    }
    Ok(hit as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_brackets_published_endpoints() {
        let g = default_threshold_grid();
        assert_eq!(g.first(), Some(&0.10));
        assert_eq!(g.last(), Some(&0.99));
        assert!(g.contains(&0.95));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn ratio_convention() {
        assert_eq!(ratio(0, 0), 1.0);
        assert_eq!(ratio(1, 2), 0.5);
    }
}
