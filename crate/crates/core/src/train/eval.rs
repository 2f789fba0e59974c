use super::loop_::clip_batch;
use super::TrainError;
use crate::dataio::{ClipSample, FrameImage, Label};
use crate::model::{classify_prob, Mode, Model};
use crate::numeric::{Element, Graph};
use std::collections::BTreeMap;

const EVAL_BATCH: usize = 8;

/// Malignancy probability of every clip, in input order.
pub fn predict_clips<T: Element>(model: &Model<T>, clips: &[ClipSample]) -> Result<Vec<f64>, TrainError> {
    let mut probs = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(EVAL_BATCH) {
        let frames: Vec<&[FrameImage]> = chunk.iter().map(|c| c.frames.as_slice()).collect();
        let (slow, fast) = clip_batch::<T>(&frames, chunk[0].slow_stride)?;
        let mut g = Graph::inference();
        let (sv, fv) = (g.input(slow, false), g.input(fast, false));
        let out = model.net.forward(&mut g, &model.store, sv, fv, Mode::Eval)?;
        probs.extend(g.value(out.logit).data().iter().map(|l| classify_prob(l.as_f64())));
    }
    Ok(probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseScore {
    pub case_id: String,
    pub clip_probs: Vec<f64>,
    pub case_prob: f64,
    pub pred_label: Label,
    pub true_label: Label,
}

/// Mean clip probability; malignant iff the mean is at least 0.5.
pub fn aggregate_case(case_id: &str, true_label: Label, clip_probs: Vec<f64>) -> Result<CaseScore, TrainError> {
    if clip_probs.is_empty() {
        return Err(TrainError::Config(format!("case {case_id} has no clips")));
    }
    let case_prob = clip_probs.iter().sum::<f64>() / clip_probs.len() as f64;
    Ok(CaseScore {
        case_id: case_id.to_string(),
        clip_probs,
        case_prob,
        pred_label: if case_prob >= 0.5 { Label::Malignant } else { Label::Benign },
        true_label,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseEvaluation {
    /// Sorted by case id.
    pub scores: Vec<CaseScore>,
    /// Cases that produced no clips and were left out.
    pub skipped: Vec<String>,
}

/// Groups clip predictions by case. `cases` lists every case expected in
/// the evaluation so clip-less ones can be reported.
pub fn evaluate_cases<T: Element>(
    model: &Model<T>,
    cases: &[(String, Label)],
    clips: &[ClipSample],
) -> Result<CaseEvaluation, TrainError> {
    let probs = predict_clips(model, clips)?;
    let mut grouped: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (c, p) in clips.iter().zip(probs) {
        grouped.entry(c.window.case_id.as_str()).or_default().push(p);
    }
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    let mut sorted: Vec<&(String, Label)> = cases.iter().collect();
    sorted.sort();
    for (id, label) in sorted {
        match grouped.remove(id.as_str()) {
            Some(p) => scores.push(aggregate_case(id, *label, p)?),
            None => {
                log::warn!("case {id} has no clips; excluded from metrics");
                skipped.push(id.clone());
            }
        }
    }
    if let Some(id) = grouped.keys().next() {
        return Err(TrainError::Config(format!("clip references unknown case {id}")));
    }
    Ok(CaseEvaluation { scores, skipped })
}

/// Per-class average of tempered prototype assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeDistribution {
    pub benign: Vec<f64>,
    pub malignant: Vec<f64>,
}

impl CodeDistribution {
    pub fn rows(&self) -> [(Label, &[f64]); 2] {
        [(Label::Benign, &self.benign), (Label::Malignant, &self.malignant)]
    }

    pub fn l1_distance(&self) -> f64 {
        self.benign.iter().zip(&self.malignant).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Runs the projection head on every clip, takes `softmax(scores/τ)` and
/// averages per class.
pub fn export_code_distribution<T: Element>(model: &Model<T>, clips: &[ClipSample]) -> Result<CodeDistribution, TrainError> {
    let k = model.head.cfg.k_prototypes;
    let mut sums = [vec![0.0; k], vec![0.0; k]];
    let mut counts = [0usize; 2];
    for chunk in clips.chunks(EVAL_BATCH) {
        let frames: Vec<&[FrameImage]> = chunk.iter().map(|c| c.frames.as_slice()).collect();
        let (slow, fast) = clip_batch::<T>(&frames, chunk[0].slow_stride)?;
        let mut g = Graph::inference();
        let (sv, fv) = (g.input(slow, false), g.input(fast, false));
        let out = model.forward(&mut g, sv, fv, Mode::Eval)?;
        let p = g.softmax(out.scores, model.head.cfg.temperature)?;
        for (clip, row) in chunk.iter().zip(g.value(p).rows()) {
            let c = clip.label().is_positive() as usize;
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(row) {
                *s += v.as_f64();
            }
        }
    }
    for (label, n) in [Label::Benign, Label::Malignant].iter().zip(counts) {
        if n == 0 {
            return Err(TrainError::Config(format!("no {} clips for code distribution", label.as_str())));
        }
    }
    let [benign, malignant] = sums.map(|row| {
        let t: f64 = row.iter().sum();
        row.iter().map(|v| v / t).collect::<Vec<_>>()
    });
    Ok(CodeDistribution { benign, malignant })
}
