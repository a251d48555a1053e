//! Exact point-to-point correspondences between two vessel models.
//!
//! Per portion, centerline samples are matched by arclength fraction and
//! contour samples by the angle in the transported frame, so corresponding
//! points sit at topologically equivalent locations. Samples of a child
//! portion that fall inside (or too close to) the parent vessel are pruned
//! jointly from both sides.

use nalgebra::Point3;

use super::frames::bishop_frames;
use super::hull::convex_hull;
use crate::error::{Error, Result};
use crate::geometry::{VesselModel, VesselPortion};

/// Matched sample pairs with their portion labels.
#[derive(Debug, Clone)]
pub struct CorrespondenceSet {
    pub source: Vec<Point3<f64>>,
    pub target: Vec<Point3<f64>>,
    pub portions: Vec<String>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Pairs restricted to the given portions.
    pub fn filter_portions(&self, names: &[String]) -> CorrespondenceSet {
        let mut out = CorrespondenceSet {
            source: Vec::new(),
            target: Vec::new(),
            portions: Vec::new(),
        };
        for i in 0..self.len() {
            if names.contains(&self.portions[i]) {
                out.source.push(self.source[i]);
                out.target.push(self.target[i]);
                out.portions.push(self.portions[i].clone());
            }
        }
        out
    }
}

/// Neighbor budget for the parent-hull pruning test.
pub const HULL_NEIGHBORS: usize = 1000;

/// Sample matched correspondences on two models with the same portion
/// topology: `m_p / (m_c + 1)` centerline points per portion plus `m_c`
/// contour points per ring, pruned against the parent vessel with threshold
/// `tau` times the child extent.
pub fn sample_correspondences(
    model_a: &VesselModel,
    model_b: &VesselModel,
    m_p: usize,
    m_c: usize,
    tau: f64,
) -> Result<CorrespondenceSet> {
    if model_a.portions.len() != model_b.portions.len()
        || model_a
            .portions
            .iter()
            .zip(&model_b.portions)
            .any(|(a, b)| a.name != b.name || a.parent != b.parent)
    {
        return Err(Error::invalid(
            "models must share the same portion topology",
        ));
    }
    let n_center = m_p / (m_c + 1);
    if n_center < 2 {
        return Err(Error::invalid(format!(
            "m_p = {m_p} with m_c = {m_c} leaves fewer than 2 centerline samples"
        )));
    }

    let mut out = CorrespondenceSet {
        source: Vec::new(),
        target: Vec::new(),
        portions: Vec::new(),
    };
    for (pa, pb) in model_a.portions.iter().zip(&model_b.portions) {
        let sa = portion_samples(pa, n_center, m_c)?;
        let sb = portion_samples(pb, n_center, m_c)?;
        debug_assert_eq!(sa.len(), sb.len());

        // prune jointly: a pair is dropped when either side fails its own
        // parent test
        let keep = match &pa.parent {
            None => vec![true; sa.len()],
            Some(parent_name) => {
                let parent_a = model_a
                    .portion(parent_name)
                    .ok_or_else(|| Error::invalid(format!("unknown parent portion '{parent_name}'")))?;
                let parent_b = model_b.portion(parent_name).unwrap();
                let keep_a = parent_pruning_mask(&sa, parent_a, tau)?;
                let keep_b = parent_pruning_mask(&sb, parent_b, tau)?;
                keep_a
                    .into_iter()
                    .zip(keep_b)
                    .map(|(a, b)| a && b)
                    .collect()
            }
        };
        for (i, keep) in keep.iter().enumerate() {
            if *keep {
                out.source.push(sa[i]);
                out.target.push(sb[i]);
                out.portions.push(pa.name.clone());
            }
        }
    }
    Ok(out)
}

/// Centerline samples followed by ring contours at matched frame angles.
fn portion_samples(portion: &VesselPortion, n_center: usize, m_c: usize) -> Result<Vec<Point3<f64>>> {
    let centers = portion.sample_centerline(n_center)?;
    let frames = bishop_frames(&centers, &nalgebra::Vector3::from(portion.reference))?;
    let mut out = centers.clone();
    for (j, (c, f)) in centers.iter().zip(&frames).enumerate() {
        let r = portion.radius_at(j as f64 / (n_center - 1) as f64);
        for a in 0..m_c {
            let ang = 2.0 * std::f64::consts::PI * a as f64 / m_c.max(1) as f64;
            out.push(c + f.normal * (r * ang.cos()) + f.binormal * (r * ang.sin()));
        }
    }
    Ok(out)
}

/// Keep mask against the parent vessel: a sample is dropped when it lies
/// inside the convex hull of its nearest parent-surface points or outside by
/// less than `tau` times the child extent (hull violation as the distance
/// proxy).
fn parent_pruning_mask(
    samples: &[Point3<f64>],
    parent: &VesselPortion,
    tau: f64,
) -> Result<Vec<bool>> {
    // dense parent surface sampling for the neighbor hulls
    let parent_points = portion_samples(parent, 40, 12)?;
    let child_extent = max_pairwise_distance(samples);
    let threshold = tau * child_extent;

    let k = HULL_NEIGHBORS.min(parent_points.len());
    let shared_hull = if k == parent_points.len() {
        Some(convex_hull(&parent_points)?)
    } else {
        None
    };

    let mut keep = Vec::with_capacity(samples.len());
    for p in samples {
        let hull = match &shared_hull {
            Some(h) => h.clone(),
            None => {
                let mut by_dist: Vec<(f64, usize)> = parent_points
                    .iter()
                    .enumerate()
                    .map(|(i, q)| ((p - q).norm_squared(), i))
                    .collect();
                by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let neighbors: Vec<Point3<f64>> =
                    by_dist[..k].iter().map(|&(_, i)| parent_points[i]).collect();
                convex_hull(&neighbors)?
            }
        };
        keep.push(hull.signed_distance(p) > threshold);
    }
    Ok(keep)
}

fn max_pairwise_distance(points: &[Point3<f64>]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            best = best.max((points[i] - points[j]).norm());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{synth_vessel_model, SynthShape};
    use approx::assert_relative_eq;

    fn tube_model(radius: f64) -> VesselModel {
        synth_vessel_model(&SynthShape::Tube {
            radius_start: radius,
            radius_end: radius,
            length: 1.0,
            bend_angle: 0.3,
        })
        .unwrap()
    }

    #[test]
    fn paper_counts_per_portion() {
        let a = tube_model(0.1);
        let b = tube_model(0.15);
        let corr = sample_correspondences(&a, &b, 250, 4, 0.0).unwrap();
        // 50 centerline + 200 contour samples, nothing pruned (no parent)
        assert_eq!(corr.len(), 250);
        assert_eq!(corr.source.len(), corr.target.len());
    }

    #[test]
    fn identical_models_give_coincident_pairs() {
        let a = tube_model(0.1);
        let corr = sample_correspondences(&a, &a, 100, 4, 0.0).unwrap();
        for (s, t) in corr.source.iter().zip(&corr.target) {
            assert_relative_eq!(s, t, epsilon = 1e-12);
        }
    }

    #[test]
    fn topology_mismatch_rejected() {
        let a = tube_model(0.1);
        let y = synth_vessel_model(&SynthShape::YBranch {
            trunk_radius: 0.1,
            trunk_length: 0.8,
            branch_radius: 0.06,
            branch_length: 0.5,
            spread_angle: 0.5,
        })
        .unwrap();
        assert!(sample_correspondences(&a, &y, 100, 4, 0.0).is_err());
    }

    #[test]
    fn branch_points_inside_trunk_are_pruned_jointly() {
        let y = synth_vessel_model(&SynthShape::YBranch {
            trunk_radius: 0.12,
            trunk_length: 0.8,
            branch_radius: 0.06,
            branch_length: 0.5,
            spread_angle: 0.6,
        })
        .unwrap();
        let corr = sample_correspondences(&y, &y, 150, 4, 5e-3).unwrap();
        assert_eq!(corr.source.len(), corr.target.len());
        // branch roots start inside the trunk, so some pairs must be pruned
        let per_portion = 150 / 5 * 5; // 30 centerline + 120 ring samples
        let branch_pairs = corr
            .portions
            .iter()
            .filter(|p| p.as_str() != "trunk")
            .count();
        assert!(
            branch_pairs < 2 * per_portion,
            "expected pruning, kept {branch_pairs}"
        );
        assert!(branch_pairs > 0, "pruning removed everything");
    }

    #[test]
    fn child_fully_outside_with_zero_tau_keeps_everything() {
        // child far away from its parent: predicate never fires
        let mut y = synth_vessel_model(&SynthShape::YBranch {
            trunk_radius: 0.1,
            trunk_length: 0.8,
            branch_radius: 0.05,
            branch_length: 0.4,
            spread_angle: 0.5,
        })
        .unwrap();
        for portion in y.portions.iter_mut().skip(1) {
            for cp in portion.control_points.iter_mut() {
                cp[0] += 5.0; // move branches far from the trunk
            }
        }
        let corr = sample_correspondences(&y, &y, 100, 4, 0.0).unwrap();
        let n_center = 100 / 5;
        let per_portion = n_center + n_center * 4;
        assert_eq!(corr.len(), 3 * per_portion);
    }
}
