//! 3D convex hulls for correspondence pruning.
//!
//! Quickhull over the neighbor set, exposing the facet halfspaces: the
//! inside test and the outside-distance approximation are the maximum signed
//! distance over facets (a lower bound on the true distance to the hull).

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// One hull facet as an outward halfspace `normal . x <= offset`.
#[derive(Debug, Clone, Copy)]
pub struct Facet {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

/// Convex hull of a point set, stored as its facet halfspaces.
#[derive(Debug, Clone)]
pub struct ConvexHull {
    pub facets: Vec<Facet>,
}

impl ConvexHull {
    /// Largest signed facet distance: `<= 0` inside (up to construction
    /// epsilon), positive values lower-bound the Euclidean distance to the
    /// hull.
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.facets
            .iter()
            .map(|f| f.normal.dot(&p.coords) - f.offset)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, p: &Point3<f64>, tolerance: f64) -> bool {
        self.signed_distance(p) <= tolerance
    }
}

struct Face {
    vertices: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

/// Build the convex hull of `points` with quickhull. Near-coplanar points are
/// absorbed into facets via a spread-relative epsilon, which slightly
/// thickens the hull but keeps the construction robust; errors when the
/// points are degenerate (fewer than 4 affinely independent ones).
pub fn convex_hull(points: &[Point3<f64>]) -> Result<ConvexHull> {
    if points.len() < 4 {
        return Err(Error::invalid("convex hull needs at least 4 points"));
    }
    let spread = bounding_spread(points);
    if spread <= 0.0 {
        return Err(Error::invalid("convex hull of coincident points"));
    }
    let eps = 1e-10 * spread;

    let (a, b, c, d) = initial_tetrahedron(points, eps)
        .ok_or_else(|| Error::invalid("points are degenerate (coplanar or collinear)"))?;

    let mut faces: Vec<Face> = Vec::new();
    let centroid = Point3::from(
        (points[a].coords + points[b].coords + points[c].coords + points[d].coords) / 4.0,
    );
    for tri in [[a, b, c], [a, b, d], [a, c, d], [b, c, d]] {
        faces.push(make_face(points, tri, &centroid));
    }
    // conflict lists
    for (i, p) in points.iter().enumerate() {
        if i == a || i == b || i == c || i == d {
            continue;
        }
        if let Some(face) = best_visible_face(&faces, p, eps) {
            faces[face].outside.push(i);
        }
    }

    loop {
        let Some(fi) = faces
            .iter()
            .position(|f| f.alive && !f.outside.is_empty())
        else {
            break;
        };
        // farthest conflict point of this face
        let apex = *faces[fi]
            .outside
            .iter()
            .max_by(|&&x, &&y| {
                let dx = face_distance(&faces[fi], &points[x]);
                let dy = face_distance(&faces[fi], &points[y]);
                dx.partial_cmp(&dy).unwrap()
            })
            .unwrap();
        let apex_point = points[apex];

        // visible faces and the horizon
        let visible: Vec<usize> = faces
            .iter()
            .enumerate()
            .filter(|(_, f)| f.alive && face_distance(f, &apex_point) > eps)
            .map(|(i, _)| i)
            .collect();
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        let mut edge_count = std::collections::HashMap::new();
        for &vi in &visible {
            let v = faces[vi].vertices;
            for k in 0..3 {
                let e = (v[k], v[(k + 1) % 3]);
                *edge_count.entry((e.0.min(e.1), e.0.max(e.1))).or_insert(0) += 1;
            }
        }
        for &vi in &visible {
            let v = faces[vi].vertices;
            for k in 0..3 {
                let e = (v[k], v[(k + 1) % 3]);
                if edge_count[&(e.0.min(e.1), e.0.max(e.1))] == 1 {
                    horizon.push(e);
                }
            }
        }

        // orphaned conflict points get redistributed to the new faces
        let mut orphans = Vec::new();
        for &vi in &visible {
            orphans.append(&mut faces[vi].outside);
            faces[vi].alive = false;
        }
        orphans.retain(|&i| i != apex);

        let interior = hull_centroid(&faces, points);
        let mut new_faces = Vec::new();
        for (ea, eb) in horizon {
            new_faces.push(make_face(points, [ea, eb, apex], &interior));
        }
        for orphan in orphans {
            if let Some(local) = best_visible_face(&new_faces, &points[orphan], eps) {
                new_faces[local].outside.push(orphan);
            }
        }
        faces.extend(new_faces);
    }

    let facets = faces
        .iter()
        .filter(|f| f.alive)
        .map(|f| Facet {
            normal: f.normal,
            offset: f.offset,
        })
        .collect();
    Ok(ConvexHull { facets })
}

fn bounding_spread(points: &[Point3<f64>]) -> f64 {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (hi - lo).norm()
}

fn face_distance(f: &Face, p: &Point3<f64>) -> f64 {
    f.normal.dot(&p.coords) - f.offset
}

fn best_visible_face(faces: &[Face], p: &Point3<f64>, eps: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in faces.iter().enumerate() {
        if !f.alive {
            continue;
        }
        let d = face_distance(f, p);
        if d > eps && best.map_or(true, |(_, bd)| d > bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

fn make_face(points: &[Point3<f64>], tri: [usize; 3], interior: &Point3<f64>) -> Face {
    let [a, b, c] = tri;
    let mut normal = (points[b] - points[a]).cross(&(points[c] - points[a]));
    let norm = normal.norm();
    if norm > 0.0 {
        normal /= norm;
    }
    let mut offset = normal.dot(&points[a].coords);
    // orient outward relative to an interior point
    if normal.dot(&interior.coords) > offset {
        normal = -normal;
        offset = -offset;
    }
    Face {
        vertices: tri,
        normal,
        offset,
        outside: Vec::new(),
        alive: true,
    }
}

fn hull_centroid(faces: &[Face], points: &[Point3<f64>]) -> Point3<f64> {
    let mut acc = Vector3::zeros();
    let mut n = 0usize;
    for f in faces.iter().filter(|f| f.alive) {
        for &v in &f.vertices {
            acc += points[v].coords;
            n += 1;
        }
    }
    Point3::from(acc / n.max(1) as f64)
}

fn initial_tetrahedron(points: &[Point3<f64>], eps: f64) -> Option<(usize, usize, usize, usize)> {
    // two extreme points along the largest-spread axis
    let mut a = 0;
    let mut b = 0;
    let mut best = -1.0;
    for axis in 0..3 {
        let lo = (0..points.len())
            .min_by(|&x, &y| points[x][axis].partial_cmp(&points[y][axis]).unwrap())?;
        let hi = (0..points.len())
            .max_by(|&x, &y| points[x][axis].partial_cmp(&points[y][axis]).unwrap())?;
        let d = points[hi][axis] - points[lo][axis];
        if d > best {
            best = d;
            a = lo;
            b = hi;
        }
    }
    if best <= eps {
        return None;
    }
    // farthest from the a-b line
    let ab = points[b] - points[a];
    let c = (0..points.len()).max_by(|&x, &y| {
        let dx = (points[x] - points[a]).cross(&ab).norm();
        let dy = (points[y] - points[a]).cross(&ab).norm();
        dx.partial_cmp(&dy).unwrap()
    })?;
    if (points[c] - points[a]).cross(&ab).norm() / ab.norm().max(1e-300) <= eps {
        return None;
    }
    // farthest from the a-b-c plane
    let normal = ab.cross(&(points[c] - points[a])).normalize();
    let d = (0..points.len()).max_by(|&x, &y| {
        let dx = normal.dot(&(points[x] - points[a])).abs();
        let dy = normal.dot(&(points[y] - points[a])).abs();
        dx.partial_cmp(&dy).unwrap()
    })?;
    if normal.dot(&(points[d] - points[a])).abs() <= eps {
        return None;
    }
    Some((a, b, c, d))
}
