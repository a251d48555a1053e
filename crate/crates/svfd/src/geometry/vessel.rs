//! Parametric vessel models: centerline splines with radius profiles.
//!
//! A vessel portion is a named tube chunk described by cubic-spline centerline
//! knots, radius samples at uniform arclength fractions, and a zero-angle
//! reference vector that anchors the angular coordinate of its contours.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VesselPortion {
    pub name: String,
    /// Cubic-spline knots of the centerline (at least 4).
    pub control_points: Vec<[f64; 3]>,
    /// Radius samples at uniform arclength fractions along the portion.
    pub radii: Vec<f64>,
    /// Zero-angle reference vector for the contour frames.
    pub reference: [f64; 3],
    /// Name of the enclosing vessel portion, when this portion branches off
    /// another one; used for correspondence pruning.
    #[serde(default)]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VesselModel {
    pub portions: Vec<VesselPortion>,
}

impl VesselModel {
    pub fn new(portions: Vec<VesselPortion>) -> Result<Self> {
        let model = Self { portions };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.portions.is_empty() {
            return Err(Error::invalid("vessel model has no portions"));
        }
        for p in &self.portions {
            if p.control_points.len() < 4 {
                return Err(Error::invalid(format!(
                    "portion '{}' has {} centerline control points, need at least 4",
                    p.name,
                    p.control_points.len()
                )));
            }
            if p.radii.is_empty() || p.radii.iter().any(|r| *r <= 0.0 || !r.is_finite()) {
                return Err(Error::invalid(format!(
                    "portion '{}' has non-positive or missing radii",
                    p.name
                )));
            }
        }
        Ok(())
    }

    pub fn portion(&self, name: &str) -> Option<&VesselPortion> {
        self.portions.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }
}

impl VesselPortion {
    /// Sample `n` centerline points at uniform arclength fractions (endpoints
    /// included), via a natural cubic spline through the control points.
    pub fn sample_centerline(&self, n: usize) -> Result<Vec<Point3<f64>>> {
        if n < 2 {
            return Err(Error::invalid("need at least 2 centerline samples"));
        }
        let spline = CubicSpline3::natural(&self.control_points)?;
        Ok(spline.sample_by_arclength(n))
    }

    /// Radius at arclength fraction `s` in [0, 1], linear interpolation of
    /// the radius samples.
    pub fn radius_at(&self, s: f64) -> f64 {
        let r = &self.radii;
        if r.len() == 1 {
            return r[0];
        }
        let s = s.clamp(0.0, 1.0);
        let x = s * (r.len() - 1) as f64;
        let i = (x.floor() as usize).min(r.len() - 2);
        let t = x - i as f64;
        r[i] * (1.0 - t) + r[i + 1] * t
    }
}

/// Natural cubic spline through 3D knots, chord-length parameterized.
pub struct CubicSpline3 {
    t: Vec<f64>,
    y: Vec<[f64; 3]>,
    m: Vec<[f64; 3]>, // second derivatives at the knots
}

impl CubicSpline3 {
    pub fn natural(knots: &[[f64; 3]]) -> Result<Self> {
        let n = knots.len();
        if n < 2 {
            return Err(Error::invalid("spline needs at least 2 knots"));
        }
        // chord-length parameter
        let mut t = vec![0.0; n];
        for i in 1..n {
            let d = Vector3::from(knots[i]) - Vector3::from(knots[i - 1]);
            let len = d.norm();
            if len <= 0.0 {
                return Err(Error::invalid("coincident consecutive spline knots"));
            }
            t[i] = t[i - 1] + len;
        }
        let total = t[n - 1];
        for v in &mut t {
            *v /= total;
        }

        let mut m = vec![[0.0; 3]; n];
        if n > 2 {
            // tridiagonal solve for second derivatives, natural boundary
            for axis in 0..3 {
                let mut a = vec![0.0; n];
                let mut b = vec![0.0; n];
                let mut c = vec![0.0; n];
                let mut d = vec![0.0; n];
                b[0] = 1.0;
                b[n - 1] = 1.0;
                for i in 1..n - 1 {
                    let h0 = t[i] - t[i - 1];
                    let h1 = t[i + 1] - t[i];
                    a[i] = h0;
                    b[i] = 2.0 * (h0 + h1);
                    c[i] = h1;
                    d[i] = 6.0
                        * ((knots[i + 1][axis] - knots[i][axis]) / h1
                            - (knots[i][axis] - knots[i - 1][axis]) / h0);
                }
                // Thomas algorithm
                for i in 1..n {
                    let w = a[i] / b[i - 1];
                    b[i] -= w * c[i - 1];
                    d[i] -= w * d[i - 1];
                }
                m[n - 1][axis] = d[n - 1] / b[n - 1];
                for i in (0..n - 1).rev() {
                    m[i][axis] = (d[i] - c[i] * m[i + 1][axis]) / b[i];
                }
            }
        }
        Ok(Self {
            t,
            y: knots.to_vec(),
            m,
        })
    }

    /// Evaluate at parameter `u` in [0, 1].
    pub fn eval(&self, u: f64) -> Point3<f64> {
        let u = u.clamp(0.0, 1.0);
        let n = self.t.len();
        let mut i = match self.t.binary_search_by(|v| v.partial_cmp(&u).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        i = i.min(n - 2);
        let h = self.t[i + 1] - self.t[i];
        let x = (u - self.t[i]) / h;
        let mut out = [0.0; 3];
        for axis in 0..3 {
            let y0 = self.y[i][axis];
            let y1 = self.y[i + 1][axis];
            let m0 = self.m[i][axis];
            let m1 = self.m[i + 1][axis];
            // classic cubic-spline segment form
            out[axis] = (1.0 - x) * y0 + x * y1
                + h * h / 6.0
                    * (((1.0 - x).powi(3) - (1.0 - x)) * m0 + (x.powi(3) - x) * m1);
        }
        Point3::from(out)
    }

    /// `n` samples at uniform arclength fractions, endpoints included.
    pub fn sample_by_arclength(&self, n: usize) -> Vec<Point3<f64>> {
        // dense polyline to build an arclength table
        let dense_n = (self.t.len() * 64).max(256);
        let mut dense = Vec::with_capacity(dense_n + 1);
        let mut cum = Vec::with_capacity(dense_n + 1);
        let mut acc = 0.0;
        let mut prev = self.eval(0.0);
        dense.push(prev);
        cum.push(0.0);
        for k in 1..=dense_n {
            let p = self.eval(k as f64 / dense_n as f64);
            acc += (p - prev).norm();
            dense.push(p);
            cum.push(acc);
            prev = p;
        }
        let total = acc;
        (0..n)
            .map(|j| {
                let target = total * j as f64 / (n - 1) as f64;
                let i = match cum.binary_search_by(|v| v.partial_cmp(&target).unwrap()) {
                    Ok(i) => return dense[i],
                    Err(i) => i.clamp(1, dense_n),
                };
                let seg = cum[i] - cum[i - 1];
                let t = if seg > 0.0 { (target - cum[i - 1]) / seg } else { 0.0 };
                Point3::from(dense[i - 1].coords * (1.0 - t) + dense[i].coords * t)
            })
            .collect()
    }
}
