//! Semantic mIoU, panoptic quality and pixel accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ensure_same_dims, BinaryMask, LabelImage};
use crate::io::ClassMap;

/// Per-pixel class ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticImage {
    pub width: usize,
    pub height: usize,
    pub classes: Vec<u16>,
}

impl SemanticImage {
    pub const IGNORE: u16 = u16::MAX;

    /// Maps instance ids to classes: background to class 0, UNLABELED to
    /// IGNORE. Ids missing from `map` are an error.
    pub fn from_instances(labels: &LabelImage, map: &ClassMap) -> Result<Self> {
        let classes = labels
            .ids
            .iter()
            .map(|&id| match id {
                LabelImage::BACKGROUND => Ok(0),
                LabelImage::UNLABELED => Ok(Self::IGNORE),
                _ => map
                    .get(&id)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("instance {id} has no class"))),
            })
            .collect::<Result<_>>()?;
        Ok(SemanticImage {
            width: labels.width,
            height: labels.height,
            classes,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiouResult {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

/// Confusion counts over all image pairs. Ground-truth IGNORE pixels are
/// skipped; a predicted IGNORE is a miss of the ground-truth class.
fn class_counts(
    pred: &[SemanticImage],
    gt: &[SemanticImage],
    num_classes: usize,
) -> Result<(Vec<[u64; 3]>, u64)> {
    if pred.len() != gt.len() {
        return Err(Error::mismatch(format!(
            "{} predictions for {} ground truths",
            pred.len(),
            gt.len()
        )));
    }
    // [tp, fp, fn] per class.
    let mut counts = vec![[0u64; 3]; num_classes];
    let mut valid = 0;
    for (p, g) in pred.iter().zip(gt) {
        if (p.width, p.height) != (g.width, g.height) {
            return Err(Error::mismatch("semantic image sizes differ"));
        }
        for (&a, &b) in p.classes.iter().zip(&g.classes) {
            if b == SemanticImage::IGNORE {
                continue;
            }
            let b = b as usize;
            let out_of_range = |c: usize| {
                Error::invalid(format!("class {c} out of range for {num_classes} classes"))
            };
            if b >= num_classes {
                return Err(out_of_range(b));
            }
            valid += 1;
            if a == SemanticImage::IGNORE {
                counts[b][2] += 1;
                continue;
            }
            let a = a as usize;
            if a >= num_classes {
                return Err(out_of_range(a));
            }
            if a == b {
                counts[a][0] += 1;
            } else {
                counts[a][1] += 1;
                counts[b][2] += 1;
            }
        }
    }
    Ok((counts, valid))
}

pub fn miou(
    pred: &[SemanticImage],
    gt: &[SemanticImage],
    num_classes: usize,
) -> Result<MiouResult> {
    let (counts, valid) = class_counts(pred, gt, num_classes)?;
    if valid == 0 {
        return Err(Error::invalid("no valid pixels to evaluate"));
    }
    let per_class: Vec<Option<f64>> = counts
        .iter()
        .map(|&[tp, fp, fn_]| {
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(MiouResult {
        miou: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    })
}

/// Matching tallies of one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PqCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou_sum: f64,
}

impl PqCounts {
    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    fn add(&mut self, other: &PqCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.iou_sum += other.iou_sum;
    }

    pub fn scores(&self) -> PqScores {
        let denom = self.tp as f64 + 0.5 * (self.fp + self.fn_) as f64;
        if denom == 0.0 {
            return PqScores::default();
        }
        let sq = if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        };
        PqScores {
            pq: self.iou_sum / denom,
            sq,
            rq: self.tp as f64 / denom,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PqScores {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

/// Mean of per-class scores over classes with any segment. With no such
/// class there is nothing to get wrong and all scores are 1.
fn mean_scores(per_class: &BTreeMap<u16, PqCounts>) -> PqScores {
    let scored: Vec<PqScores> = per_class
        .values()
        .filter(|c| !c.is_empty())
        .map(PqCounts::scores)
        .collect();
    if scored.is_empty() {
        return PqScores {
            pq: 1.0,
            sq: 1.0,
            rq: 1.0,
        };
    }
    let n = scored.len() as f64;
    PqScores {
        pq: scored.iter().map(|s| s.pq).sum::<f64>() / n,
        sq: scored.iter().map(|s| s.sq).sum::<f64>() / n,
        rq: scored.iter().map(|s| s.rq).sum::<f64>() / n,
    }
}

/// Instance ids with their classes; id 0 is background.
#[derive(Clone, Copy, Debug)]
pub struct PanopticFrame<'a> {
    pub labels: &'a LabelImage,
    pub semantic_map: &'a ClassMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PqResult {
    pub scores: PqScores,
    pub per_class: BTreeMap<u16, PqCounts>,
}

struct Segment {
    class: u16,
    area: u64,
    void: u64,
}

fn segments(frame: &PanopticFrame, background: &[u16]) -> Result<BTreeMap<u16, Segment>> {
    let mut out: BTreeMap<u16, Segment> = BTreeMap::new();
    for &id in &frame.labels.ids {
        if id == LabelImage::BACKGROUND || id == LabelImage::UNLABELED {
            continue;
        }
        if let Some(s) = out.get_mut(&id) {
            s.area += 1;
            continue;
        }
        let class = *frame
            .semantic_map
            .get(&id)
            .ok_or_else(|| Error::invalid(format!("instance {id} has no class")))?;
        out.insert(
            id,
            Segment {
                class,
                area: 1,
                void: 0,
            },
        );
    }
    out.retain(|_, s| !background.contains(&s.class));
    Ok(out)
}

/// Panoptic quality of one image pair.
///
/// Segments are the non-background instance ids whose class is not in
/// `background_classes`. Ground-truth UNLABELED pixels are void: they are
/// left out of IoUs, and a prediction lying mostly in void is not a false
/// positive. A prediction and a ground-truth segment of the same class
/// match when their IoU exceeds 0.5, which makes matches unique.
pub fn panoptic_quality(
    pred: PanopticFrame,
    gt: PanopticFrame,
    background_classes: &[u16],
) -> Result<PqResult> {
    ensure_same_dims(pred.labels, gt.labels)?;
    let mut pred_segs = segments(&pred, background_classes)?;
    let gt_segs = segments(&gt, background_classes)?;
    let mut overlap: BTreeMap<(u16, u16), u64> = BTreeMap::new();
    for (&p, &g) in pred.labels.ids.iter().zip(&gt.labels.ids) {
        let Some(ps) = pred_segs.get_mut(&p) else {
            continue;
        };
        if g == LabelImage::UNLABELED {
            ps.void += 1;
        } else if gt_segs.contains_key(&g) {
            *overlap.entry((p, g)).or_default() += 1;
        }
    }
    let mut per_class: BTreeMap<u16, PqCounts> = BTreeMap::new();
    let mut pred_matched = BTreeMap::new();
    let mut gt_matched = BTreeMap::new();
    for (&(p, g), &inter) in &overlap {
        let (ps, gs) = (&pred_segs[&p], &gt_segs[&g]);
        if ps.class != gs.class {
            continue;
        }
        let union = ps.area - ps.void + gs.area - inter;
        let iou = inter as f64 / union as f64;
        if iou > 0.5 {
            let c = per_class.entry(gs.class).or_default();
            c.tp += 1;
            c.iou_sum += iou;
            pred_matched.insert(p, ());
            gt_matched.insert(g, ());
        }
    }
    for (id, s) in &gt_segs {
        if !gt_matched.contains_key(id) {
            per_class.entry(s.class).or_default().fn_ += 1;
        }
    }
    for (id, s) in &pred_segs {
        if !pred_matched.contains_key(id) && 2 * s.void <= s.area {
            per_class.entry(s.class).or_default().fp += 1;
        }
    }
    Ok(PqResult {
        scores: mean_scores(&per_class),
        per_class,
    })
}

/// Fraction of pixels where the masks agree.
pub fn pixel_accuracy(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    ensure_same_dims(pred, gt)?;
    if gt.bits.is_empty() {
        return Err(Error::invalid("pixel accuracy of an empty image"));
    }
    let agree = pred
        .bits
        .iter()
        .zip(&gt.bits)
        .filter(|(a, b)| a == b)
        .count();
    Ok(agree as f64 / gt.bits.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub iou: Option<f64>,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewReport {
    pub view: usize,
    pub miou: f64,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

/// Evaluation over a set of views. `pq`, `sq` and `rq` average the
/// per-view scores; `pooled` sums matching counts over all views first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub miou: f64,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub per_class: BTreeMap<String, ClassReport>,
    pub per_view: Vec<ViewReport>,
    pub pooled: PqScores,
}

/// Scores predicted instance maps against ground truth, view by view.
pub fn evaluate_views(
    pred: &[PanopticFrame],
    gt: &[PanopticFrame],
    num_classes: usize,
    background_classes: &[u16],
) -> Result<MetricReport> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::mismatch(format!(
            "{} predicted views for {} ground-truth views",
            pred.len(),
            gt.len()
        )));
    }
    let mut sem_pred = Vec::with_capacity(pred.len());
    let mut sem_gt = Vec::with_capacity(gt.len());
    let mut per_view = Vec::with_capacity(pred.len());
    let mut pooled: BTreeMap<u16, PqCounts> = BTreeMap::new();
    let mut view_scores = Vec::new();
    for (v, (p, g)) in pred.iter().zip(gt).enumerate() {
        let sp = SemanticImage::from_instances(p.labels, p.semantic_map)?;
        let sg = SemanticImage::from_instances(g.labels, g.semantic_map)?;
        let view_miou = miou(
            std::slice::from_ref(&sp),
            std::slice::from_ref(&sg),
            num_classes,
        )?;
        let pq = panoptic_quality(*p, *g, background_classes)?;
        for (class, c) in &pq.per_class {
            pooled.entry(*class).or_default().add(c);
        }
        if pq.per_class.values().any(|c| !c.is_empty()) {
            view_scores.push(pq.scores);
        }
        per_view.push(ViewReport {
            view: v,
            miou: view_miou.miou,
            pq: pq.scores.pq,
            sq: pq.scores.sq,
            rq: pq.scores.rq,
        });
        sem_pred.push(sp);
        sem_gt.push(sg);
    }
    let overall = miou(&sem_pred, &sem_gt, num_classes)?;
    let averaged = if view_scores.is_empty() {
        mean_scores(&BTreeMap::new())
    } else {
        let n = view_scores.len() as f64;
        PqScores {
            pq: view_scores.iter().map(|s| s.pq).sum::<f64>() / n,
            sq: view_scores.iter().map(|s| s.sq).sum::<f64>() / n,
            rq: view_scores.iter().map(|s| s.rq).sum::<f64>() / n,
        }
    };
    let mut per_class = BTreeMap::new();
    for (class, iou) in overall.per_class.iter().enumerate() {
        let counts = pooled.get(&(class as u16)).copied().unwrap_or_default();
        if iou.is_none() && counts.is_empty() {
            continue;
        }
        let s = counts.scores();
        per_class.insert(
            class.to_string(),
            ClassReport {
                iou: *iou,
                pq: s.pq,
                sq: s.sq,
                rq: s.rq,
                tp: counts.tp,
                fp: counts.fp,
                fn_: counts.fn_,
            },
        );
    }
    Ok(MetricReport {
        miou: overall.miou,
        pq: averaged.pq,
        sq: averaged.sq,
        rq: averaged.rq,
        per_class,
        per_view,
        pooled: mean_scores(&pooled),
    })
}
