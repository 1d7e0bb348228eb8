use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::detect::Aabb;
use crate::error::{Error, Result};
use crate::image::LabelImage;
use crate::io::ClassMap;
use crate::matching::{match_view, project_instance_masks, MatchConfig, PanopticView};
use crate::scene::{Camera, VoxelGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct RegistryInstance {
    pub global_id: u16,
    pub class: u16,
    /// 1-channel occupancy over the scene bounds.
    pub mask_grid: VoxelGrid,
    pub bbox: Aabb,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InstanceRegistry {
    pub instances: Vec<RegistryInstance>,
    pub semantic_map: ClassMap,
}

/// Matches every view against the projected detections and assigns each
/// instance the majority class of the 2D masks matched to it (ties to the
/// lower class). Instances never matched keep their detection class.
///
/// Returns the registry and one consistent label image per view.
pub fn build_registry(
    detections: Vec<RegistryInstance>,
    density: &VoxelGrid,
    views: &[(Camera, PanopticView)],
    config: &MatchConfig,
) -> Result<(InstanceRegistry, Vec<LabelImage>)> {
    config.validate()?;
    if views.is_empty() {
        return Err(Error::invalid("matching needs at least one view"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for d in &detections {
        if d.global_id == LabelImage::BACKGROUND || d.global_id == LabelImage::UNLABELED {
            return Err(Error::invalid(format!(
                "reserved instance id {}",
                d.global_id
            )));
        }
        if !seen.insert(d.global_id) {
            return Err(Error::invalid(format!(
                "duplicate instance id {}",
                d.global_id
            )));
        }
    }
    let grids: Vec<&VoxelGrid> = detections.iter().map(|d| &d.mask_grid).collect();
    let matches = views
        .par_iter()
        .map(|(camera, view)| {
            if (view.labels.width, view.labels.height) != (camera.width, camera.height) {
                return Err(Error::mismatch(
                    "panoptic image size differs from its camera",
                ));
            }
            let projected = project_instance_masks(
                density,
                &grids,
                camera,
                config.samples_per_ray,
                config.tau,
            )?;
            let pairs: Vec<(u16, _)> = detections
                .iter()
                .map(|d| d.global_id)
                .zip(projected)
                .collect();
            match_view(&pairs, view, config)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut tallies: BTreeMap<u16, BTreeMap<u16, usize>> = BTreeMap::new();
    for m in &matches {
        for &(gid, class) in &m.votes {
            *tallies.entry(gid).or_default().entry(class).or_default() += 1;
        }
    }
    let mut registry = InstanceRegistry::default();
    for mut d in detections {
        if let Some(t) = tallies.get(&d.global_id) {
            // BTreeMap iterates classes ascending, so strict > keeps the lower on ties.
            let mut best = (0u16, 0usize);
            for (&class, &count) in t {
                if count > best.1 {
                    best = (class, count);
                }
            }
            d.class = best.0;
        }
        registry.semantic_map.insert(d.global_id, d.class);
        registry.instances.push(d);
    }
    Ok((registry, matches.into_iter().map(|m| m.labels).collect()))
}
