//! Keypoint accuracy at pixel thresholds, normalized by subject size.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::EvalError;
use crate::composition::KeypointSet;
use crate::dataset::CocoFile;

/// Reference box diagonal, px: distances are rescaled as if every subject's
/// box diagonal were this long.
pub const DEFAULT_REF_SIZE: f64 = 256.0;
pub const DEFAULT_THRESHOLDS: [f64; 3] = [5.0, 10.0, 15.0];

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: u64,
    pub keypoints: KeypointSet,
    /// `[x, y, w, h]`; only the diagonal is used.
    pub bbox: [f64; 4],
}

/// Percentage of labelled ground-truth keypoints whose prediction lies within
/// `threshold` after scaling the pixel error by `ref_size / bbox_diagonal`.
/// The boundary counts as correct. Ground-truth images without a prediction
/// count all their keypoints as misses.
pub fn ap_at_threshold(
    pred: &BTreeMap<u64, KeypointSet>,
    gt: &[GroundTruth],
    threshold: f64,
    ref_size: f64,
) -> Result<f64, EvalError> {
    let (correct, counted) = count_correct(pred, gt, threshold, ref_size)?;
    Ok(100.0 * correct as f64 / counted as f64)
}

fn count_correct(
    pred: &BTreeMap<u64, KeypointSet>,
    gt: &[GroundTruth],
    threshold: f64,
    ref_size: f64,
) -> Result<(usize, usize), EvalError> {
    if !(threshold > 0.0 && ref_size > 0.0) {
        return Err(EvalError::Invalid(format!(
            "threshold {threshold} and reference size {ref_size} must be positive"
        )));
    }
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    if !gt.iter().any(|g| pred.contains_key(&g.image_id)) {
        return Err(EvalError::NoOverlap);
    }
    let mut correct = 0;
    let mut counted = 0;
    for g in gt {
        let labelled = g.keypoints.points.iter().filter(|k| k.visibility > 0).count();
        if labelled == 0 {
            continue;
        }
        counted += labelled;
        let Some(p) = pred.get(&g.image_id) else {
            continue;
        };
        let diag = g.bbox[2].hypot(g.bbox[3]);
        if !(diag > 0.0 && diag.is_finite()) {
            return Err(EvalError::DegenerateBox(g.image_id));
        }
        let scale = ref_size / diag;
        for (gk, pk) in g.keypoints.points.iter().zip(&p.points) {
            if gk.visibility == 0 {
                continue;
            }
            let err = (pk.x - gk.x).hypot(pk.y - gk.y) * scale;
            if err <= threshold {
                correct += 1;
            }
        }
    }
    if counted == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    Ok((correct, counted))
}

/// AP at each threshold, keyed by the threshold's display form.
pub fn ap_table(
    pred: &BTreeMap<u64, KeypointSet>,
    gt: &[GroundTruth],
    thresholds: &[f64],
    ref_size: f64,
) -> Result<BTreeMap<String, f64>, EvalError> {
    thresholds
        .iter()
        .map(|&t| Ok((format!("{t}"), ap_at_threshold(pred, gt, t, ref_size)?)))
        .collect()
}

pub fn ground_truth_from_coco(doc: &CocoFile) -> Result<Vec<GroundTruth>, EvalError> {
    doc.annotations
        .iter()
        .map(|a| {
            Ok(GroundTruth {
                image_id: a.image_id,
                keypoints: KeypointSet::from_flat(&a.keypoints)?,
                bbox: a.bbox,
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct PredictionEntry {
    image_id: u64,
    keypoints: Vec<f64>,
    #[serde(default)]
    score: Option<f64>,
}

/// Reads predictions from either a COCO document or a COCO results list
/// (`[{"image_id", "keypoints", "score"}]`). With several predictions per
/// image, the highest-scoring one (else the first) is kept.
pub fn predictions_from_json(value: serde_json::Value) -> Result<BTreeMap<u64, KeypointSet>, EvalError> {
    let entries: Vec<PredictionEntry> = if value.is_array() {
        serde_json::from_value(value).map_err(|e| EvalError::Invalid(e.to_string()))?
    } else {
        let doc: CocoFile = serde_json::from_value(value).map_err(|e| EvalError::Invalid(e.to_string()))?;
        doc.annotations
            .into_iter()
            .map(|a| PredictionEntry {
                image_id: a.image_id,
                keypoints: a.keypoints,
                score: None,
            })
            .collect()
    };
    let mut best: BTreeMap<u64, (f64, KeypointSet)> = BTreeMap::new();
    for e in entries {
        let score = e.score.unwrap_or(f64::NEG_INFINITY);
        let kps = KeypointSet::from_flat(&e.keypoints)?;
        match best.get(&e.image_id) {
            Some((s, _)) if *s >= score => {}
            _ => {
                best.insert(e.image_id, (score, kps));
            }
        }
    }
    Ok(best.into_iter().map(|(id, (_, k))| (id, k)).collect())
}
