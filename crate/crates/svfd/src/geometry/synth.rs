//! Synthetic test shapes: ellipsoids and swept tubes.
//!
//! Tube-like shapes are built by sweeping circular contours along
//! [`VesselModel`] centerlines with rotation-minimizing frames, so they double
//! as fixtures for the correspondence and augmentation pipeline. A Y-branch is
//! the union of a trunk tube and two child tubes whose closed surfaces overlap
//! at the junction; the child portions carry the trunk as `parent` so that
//! correspondence pruning can discard samples inside it.

use nalgebra::{Point3, Vector3};

use super::mesh::TriangleMesh;
use super::vessel::{VesselModel, VesselPortion};
use crate::augment::frames::bishop_frames;
use crate::error::{Error, Result};

/// Contour vertices per ring in tube sweeps. 16 is the smallest ring count
/// giving sub-percent area error at the radii used in the tests.
pub const RING_VERTICES: usize = 16;

/// Shape kinds with their parameters.
#[derive(Debug, Clone)]
pub enum SynthShape {
    Ellipsoid {
        semi_axes: [f64; 3],
    },
    Tube {
        radius_start: f64,
        radius_end: f64,
        length: f64,
        /// Total bend of the centerline arc, in radians; 0 gives a straight
        /// tube along +z.
        bend_angle: f64,
    },
    YBranch {
        trunk_radius: f64,
        trunk_length: f64,
        branch_radius: f64,
        branch_length: f64,
        /// Angle between each branch and the trunk axis, in radians.
        spread_angle: f64,
    },
}

/// Build a closed, consistently wound triangulation with roughly `resolution`
/// faces.
pub fn synth_shape(kind: &SynthShape, resolution: usize) -> Result<TriangleMesh> {
    if resolution < 24 {
        return Err(Error::invalid("resolution must be at least 24 faces"));
    }
    match kind {
        SynthShape::Ellipsoid { semi_axes } => {
            if semi_axes.iter().any(|a| *a <= 0.0) {
                return Err(Error::invalid("ellipsoid semi-axes must be positive"));
            }
            icosphere(semi_axes, resolution)
        }
        SynthShape::Tube { .. } | SynthShape::YBranch { .. } => {
            let model = synth_vessel_model(kind)?;
            let per_portion = (resolution / model.portions.len()).max(24);
            sweep_vessel(&model, per_portion)
        }
    }
}

/// The vessel model underlying a tube-like shape (errors for ellipsoids,
/// which have no centerline).
pub fn synth_vessel_model(kind: &SynthShape) -> Result<VesselModel> {
    match *kind {
        SynthShape::Ellipsoid { .. } => {
            Err(Error::invalid("ellipsoid has no vessel model"))
        }
        SynthShape::Tube {
            radius_start,
            radius_end,
            length,
            bend_angle,
        } => {
            if radius_start <= 0.0 || radius_end <= 0.0 || length <= 0.0 {
                return Err(Error::invalid("tube dimensions must be positive"));
            }
            if bend_angle < 0.0 || bend_angle > std::f64::consts::PI {
                return Err(Error::invalid("bend angle must lie in [0, pi]"));
            }
            let control_points = arc_control_points(length, bend_angle, 6);
            VesselModel::new(vec![VesselPortion {
                name: "tube".into(),
                control_points,
                radii: vec![radius_start, radius_end],
                reference: [0.0, 1.0, 0.0],
                parent: None,
            }])
        }
        SynthShape::YBranch {
            trunk_radius,
            trunk_length,
            branch_radius,
            branch_length,
            spread_angle,
        } => {
            if trunk_radius <= 0.0
                || trunk_length <= 0.0
                || branch_radius <= 0.0
                || branch_length <= 0.0
            {
                return Err(Error::invalid("branch dimensions must be positive"));
            }
            if spread_angle <= 0.0 || spread_angle >= std::f64::consts::FRAC_PI_2 {
                return Err(Error::invalid("spread angle must lie in (0, pi/2)"));
            }
            let trunk = VesselPortion {
                name: "trunk".into(),
                control_points: line_control_points(
                    Point3::origin(),
                    Vector3::z(),
                    trunk_length,
                ),
                radii: vec![trunk_radius, trunk_radius],
                reference: [1.0, 0.0, 0.0],
                parent: None,
            };
            // branches start slightly inside the trunk so the union is watertight
            let root = Point3::new(0.0, 0.0, trunk_length - 0.75 * trunk_radius);
            let mut portions = vec![trunk];
            for (name, sign) in [("branch_left", -1.0), ("branch_right", 1.0)] {
                let dir = Vector3::new(
                    sign * spread_angle.sin(),
                    0.0,
                    spread_angle.cos(),
                );
                portions.push(VesselPortion {
                    name: name.into(),
                    control_points: line_control_points(root, dir, branch_length),
                    radii: vec![branch_radius, branch_radius],
                    reference: [0.0, 1.0, 0.0],
                    parent: Some("trunk".into()),
                });
            }
            VesselModel::new(portions)
        }
    }
}

fn line_control_points(start: Point3<f64>, dir: Vector3<f64>, length: f64) -> Vec<[f64; 3]> {
    (0..4)
        .map(|i| {
            let p = start + dir * (length * i as f64 / 3.0);
            [p.x, p.y, p.z]
        })
        .collect()
}

/// Control points of a circular arc of the given length bending by
/// `bend_angle` in the x-z plane; straight along +z when the angle is zero.
fn arc_control_points(length: f64, bend_angle: f64, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            if bend_angle < 1e-12 {
                [0.0, 0.0, s * length]
            } else {
                let r = length / bend_angle;
                let phi = s * bend_angle;
                [r * (1.0 - phi.cos()), 0.0, r * phi.sin()]
            }
        })
        .collect()
}

/// Sweep every portion of `model` into a closed tube with end caps,
/// `faces_per_portion` triangles each, and merge the results into one mesh.
pub fn sweep_vessel(model: &VesselModel, faces_per_portion: usize) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for portion in &model.portions {
        let rings = (faces_per_portion / (2 * RING_VERTICES)).max(2);
        sweep_portion(portion, rings, &mut vertices, &mut faces)?;
    }
    TriangleMesh::new(vertices, faces)
}

fn sweep_portion(
    portion: &VesselPortion,
    rings: usize,
    vertices: &mut Vec<Point3<f64>>,
    faces: &mut Vec<[usize; 3]>,
) -> Result<()> {
    let centers = portion.sample_centerline(rings)?;
    let frames = bishop_frames(&centers, &Vector3::from(portion.reference))?;
    let base = vertices.len();
    let rn = RING_VERTICES;

    for (i, (c, f)) in centers.iter().zip(frames.iter()).enumerate() {
        let r = portion.radius_at(i as f64 / (rings - 1) as f64);
        for a in 0..rn {
            let ang = 2.0 * std::f64::consts::PI * a as f64 / rn as f64;
            vertices.push(c + f.normal * (r * ang.cos()) + f.binormal * (r * ang.sin()));
        }
    }
    // lateral quads, wound so normals point outward
    for i in 0..rings - 1 {
        for a in 0..rn {
            let a1 = (a + 1) % rn;
            let v00 = base + i * rn + a;
            let v01 = base + i * rn + a1;
            let v10 = base + (i + 1) * rn + a;
            let v11 = base + (i + 1) * rn + a1;
            faces.push([v00, v01, v10]);
            faces.push([v01, v11, v10]);
        }
    }
    // end caps: fans around the centerline endpoints
    let c_start = vertices.len();
    vertices.push(centers[0]);
    let c_end = vertices.len();
    vertices.push(centers[rings - 1]);
    for a in 0..rn {
        let a1 = (a + 1) % rn;
        faces.push([c_start, base + a1, base + a]);
        let last = base + (rings - 1) * rn;
        faces.push([c_end, last + a, last + a1]);
    }
    Ok(())
}

/// Icosahedron subdivided until it reaches `resolution` faces, projected onto
/// the unit sphere and scaled by the semi-axes.
fn icosphere(semi_axes: &[f64; 3], resolution: usize) -> Result<TriangleMesh> {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::new(v[0], v[1], v[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    while faces.len() < resolution {
        let mut midpoints = std::collections::HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = (vertices[a] + vertices[b]).normalize();
                vertices.push(m);
                vertices.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            new_faces.push([a, ab, ca]);
            new_faces.push([b, bc, ab]);
            new_faces.push([c, ca, bc]);
            new_faces.push([ab, bc, ca]);
        }
        faces = new_faces;
    }

    let points = vertices
        .iter()
        .map(|v| Point3::new(v.x * semi_axes[0], v.y * semi_axes[1], v.z * semi_axes[2]))
        .collect();
    TriangleMesh::new(points, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::bounding_box;

    #[test]
    fn sphere_area_close_to_analytic() {
        let m = synth_shape(&SynthShape::Ellipsoid { semi_axes: [1.0; 3] }, 960).unwrap();
        let area = m.total_area();
        let exact = 4.0 * std::f64::consts::PI;
        assert!(
            (area - exact).abs() / exact < 0.02,
            "sphere area {area} vs {exact}"
        );
    }

    #[test]
    fn ellipsoid_bounding_box() {
        let m = synth_shape(
            &SynthShape::Ellipsoid {
                semi_axes: [1.2, 1.0, 0.8],
            },
            960,
        )
        .unwrap();
        let (lo, hi) = bounding_box(m.vertices.iter().copied()).unwrap();
        let ext = hi - lo;
        assert!((ext.x - 2.4).abs() < 1e-9);
        assert!((ext.y - 2.0).abs() < 1e-9);
        assert!((ext.z - 1.6).abs() < 1e-9);
    }

    #[test]
    fn straight_tube_area_close_to_analytic() {
        let m = synth_shape(
            &SynthShape::Tube {
                radius_start: 0.1,
                radius_end: 0.1,
                length: 1.0,
                bend_angle: 0.0,
            },
            640,
        )
        .unwrap();
        let area = m.total_area();
        let exact = 2.0 * std::f64::consts::PI * 0.1 + 2.0 * std::f64::consts::PI * 0.01;
        assert!(
            (area - exact).abs() / exact < 0.02,
            "tube area {area} vs {exact}"
        );
    }

    #[test]
    fn tube_is_closed() {
        // every edge shared by exactly two faces with opposite orientation
        let m = synth_shape(
            &SynthShape::Tube {
                radius_start: 0.08,
                radius_end: 0.12,
                length: 1.0,
                bend_angle: 0.6,
            },
            320,
        )
        .unwrap();
        let mut edges = std::collections::HashMap::new();
        for f in &m.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                *edges.entry((a.min(b), a.max(b))).or_insert((0, 0)) = {
                    let e = edges.get(&(a.min(b), a.max(b))).copied().unwrap_or((0, 0));
                    if a < b {
                        (e.0 + 1, e.1)
                    } else {
                        (e.0, e.1 + 1)
                    }
                };
            }
        }
        for ((_, _), (fwd, rev)) in edges {
            assert_eq!(fwd, 1, "edge must appear once in each direction");
            assert_eq!(rev, 1, "edge must appear once in each direction");
        }
    }

    #[test]
    fn y_branch_has_three_portions() {
        let model = synth_vessel_model(&SynthShape::YBranch {
            trunk_radius: 0.1,
            trunk_length: 0.8,
            branch_radius: 0.07,
            branch_length: 0.5,
            spread_angle: 0.5,
        })
        .unwrap();
        assert_eq!(model.portions.len(), 3);
        assert_eq!(model.portions[1].parent.as_deref(), Some("trunk"));
        let mesh = synth_shape(
            &SynthShape::YBranch {
                trunk_radius: 0.1,
                trunk_length: 0.8,
                branch_radius: 0.07,
                branch_length: 0.5,
                spread_angle: 0.5,
            },
            960,
        )
        .unwrap();
        assert!(mesh.face_count() >= 500);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(synth_shape(&SynthShape::Ellipsoid { semi_axes: [1.0, 0.0, 1.0] }, 100).is_err());
        assert!(synth_shape(&SynthShape::Ellipsoid { semi_axes: [1.0; 3] }, 10).is_err());
    }
}
