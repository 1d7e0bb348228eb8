use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{erode, LabelImage};
use crate::io::ClassMap;
use crate::matching::PanopticView;

/// Degradations applied to ground-truth label maps to imitate an imperfect
/// 2D segmenter. Applied in field order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    /// Probability that an instance's mask is missing from a view.
    pub drop_probability: f64,
    /// Instance masks shrink by this many pixels.
    pub erosion_radius: usize,
    /// Fraction of pixels replaced by a random id of the same view.
    pub label_noise: f64,
    /// Give every view its own random id numbering.
    pub permute_ids: bool,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            drop_probability: 0.0,
            erosion_radius: 0,
            label_noise: 0.0,
            permute_ids: true,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("drop_probability", self.drop_probability),
            ("label_noise", self.label_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Largest view-local id handed out by the permutation.
const MAX_LOCAL_ID: u16 = 999;

/// Turns a ground-truth label map into a panoptic prediction. `classes`
/// maps ground-truth instance ids to classes; background maps to class 0.
pub fn corrupt_view(
    gt: &LabelImage,
    classes: &ClassMap,
    spec: &CorruptionSpec,
    rng: &mut impl Rng,
) -> Result<PanopticView> {
    let ids: Vec<u16> = gt
        .distinct_ids()
        .into_iter()
        .filter(|&id| id != LabelImage::UNLABELED)
        .collect();
    let mut out = gt.clone();
    for &id in ids.iter().filter(|&&id| id != LabelImage::BACKGROUND) {
        if rng.gen::<f64>() < spec.drop_probability {
            for v in out.ids.iter_mut().filter(|v| **v == id) {
                *v = LabelImage::BACKGROUND;
            }
        }
    }
    if spec.erosion_radius > 0 {
        for &id in ids.iter().filter(|&&id| id != LabelImage::BACKGROUND) {
            let kept = erode(&out.mask_of(id), spec.erosion_radius, true);
            for (v, keep) in out.ids.iter_mut().zip(&kept.bits) {
                if *v == id && !keep {
                    *v = LabelImage::BACKGROUND;
                }
            }
        }
    }
    if spec.label_noise > 0.0 {
        for v in out.ids.iter_mut() {
            if *v != LabelImage::UNLABELED && rng.gen::<f64>() < spec.label_noise {
                *v = ids[rng.gen_range(0..ids.len())];
            }
        }
    }
    let local: Vec<u16> = if spec.permute_ids {
        let mut pool: Vec<u16> = (1..=MAX_LOCAL_ID).collect();
        pool.shuffle(rng);
        pool.truncate(ids.len());
        pool
    } else {
        ids.clone()
    };
    let mut remap = vec![LabelImage::UNLABELED; 65536];
    let mut sidecar = ClassMap::new();
    for (&id, &l) in ids.iter().zip(&local) {
        remap[id as usize] = l;
        let class = if id == LabelImage::BACKGROUND {
            0
        } else {
            *classes
                .get(&id)
                .ok_or_else(|| Error::invalid(format!("instance {id} has no class")))?
        };
        sidecar.insert(l, class);
    }
    for v in out.ids.iter_mut() {
        *v = remap[*v as usize];
    }
    Ok(PanopticView {
        labels: out,
        classes: sidecar,
    })
}
