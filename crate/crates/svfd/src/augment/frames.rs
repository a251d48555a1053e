//! Rotation-minimizing frames along sampled curves.
//!
//! Transports an initial frame with the double-reflection method, which keeps
//! the twist around the tangent at zero. Used to define matched angular
//! coordinates on vessel contours.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// Orthonormal frame at a curve sample.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub tangent: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub binormal: Vector3<f64>,
}

/// Transport the frame anchored by `reference` along the sampled centerline.
///
/// The initial normal is the projection of `reference` orthogonal to the
/// first tangent; each subsequent frame is the double reflection of the
/// previous one, so the twist along the curve is zero.
pub fn bishop_frames(samples: &[Point3<f64>], reference: &Vector3<f64>) -> Result<Vec<Frame>> {
    if samples.len() < 2 {
        return Err(Error::invalid("need at least 2 centerline samples"));
    }
    let tangents = chord_tangents(samples)?;

    let t0 = tangents[0];
    let proj = reference - t0 * reference.dot(&t0);
    let norm = proj.norm();
    if norm < 1e-12 * reference.norm().max(1e-300) {
        return Err(Error::invalid(
            "reference vector is parallel to the initial tangent",
        ));
    }
    let n0 = proj / norm;
    let mut frames = Vec::with_capacity(samples.len());
    frames.push(Frame {
        tangent: t0,
        normal: n0,
        binormal: t0.cross(&n0),
    });

    for i in 0..samples.len() - 1 {
        let prev = frames[i];
        let v1 = samples[i + 1] - samples[i];
        let c1 = v1.dot(&v1);
        if c1 <= 0.0 {
            return Err(Error::invalid(format!("zero-length segment at sample {i}")));
        }
        // first reflection: across the plane orthogonal to the segment
        let t_l = prev.tangent - v1 * (2.0 / c1 * v1.dot(&prev.tangent));
        let n_l = prev.normal - v1 * (2.0 / c1 * v1.dot(&prev.normal));
        // second reflection: maps the reflected tangent onto the next one
        let t_next = tangents[i + 1];
        let v2 = t_next - t_l;
        let c2 = v2.dot(&v2);
        let n_next = if c2 > 1e-30 {
            n_l - v2 * (2.0 / c2 * v2.dot(&n_l))
        } else {
            n_l
        };
        frames.push(Frame {
            tangent: t_next,
            normal: n_next,
            binormal: t_next.cross(&n_next),
        });
    }
    Ok(frames)
}

/// Unit tangents from chords: central differences inside, one-sided at the
/// ends.
fn chord_tangents(samples: &[Point3<f64>]) -> Result<Vec<Vector3<f64>>> {
    let n = samples.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let d = if i == 0 {
            samples[1] - samples[0]
        } else if i == n - 1 {
            samples[n - 1] - samples[n - 2]
        } else {
            samples[i + 1] - samples[i - 1]
        };
        let len = d.norm();
        if len <= 0.0 {
            return Err(Error::invalid(format!("zero-length segment at sample {i}")));
        }
        out.push(d / len);
    }
    Ok(out)
}
