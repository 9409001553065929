//! The four-dimensional profile space spanned by `1, x1/|x|, x2/|x|, x3/|x|`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::sphgrid::{norm, ScalarField, SphereGrid, Vec3};

/// `P(x) = b0 + b1 x1/|x| + b2 x2/|x| + b3 x3/|x|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiProfile {
    pub b: [f64; 4],
}

impl PiProfile {
    pub fn new(b: [f64; 4]) -> Result<Self> {
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("profile coefficients must be finite".into()));
        }
        Ok(PiProfile { b })
    }

    pub fn basis(e: usize) -> Self {
        let mut b = [0.0; 4];
        b[e] = 1.0;
        PiProfile { b }
    }

    pub fn norm(&self) -> f64 {
        self.b.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::Domain("zero profile has no direction".into()));
        }
        Ok(PiProfile { b: self.b.map(|v| v / n) })
    }

    /// Value on the unit sphere.
    pub fn eval_dir(&self, w: Vec3) -> f64 {
        self.b[0] + self.b[1] * w[0] + self.b[2] * w[1] + self.b[3] * w[2]
    }

    pub fn eval(&self, x: Vec3) -> Result<f64> {
        let r = norm(x);
        if r == 0.0 {
            return Err(Error::Domain("profiles are undefined at the origin".into()));
        }
        Ok(self.eval_dir([x[0] / r, x[1] / r, x[2] / r]))
    }

    /// `|x| P(x)`, continuous through the origin.
    pub fn eval_lifted(&self, x: Vec3) -> f64 {
        self.b[0] * norm(x) + self.b[1] * x[0] + self.b[2] * x[1] + self.b[3] * x[2]
    }

    /// Image under the Laplace-Beltrami operator; first harmonics have eigenvalue -2.
    pub fn laplace_beltrami_action(&self) -> PiProfile {
        PiProfile { b: [0.0, -2.0 * self.b[1], -2.0 * self.b[2], -2.0 * self.b[3]] }
    }

    /// Integral of `P^2` over the unit sphere.
    pub fn sphere_l2_sq(&self) -> f64 {
        let b = &self.b;
        4.0 * PI * b[0] * b[0] + 4.0 * PI / 3.0 * (b[1] * b[1] + b[2] * b[2] + b[3] * b[3])
    }

    pub fn sphere_l2_sq_quadrature(&self, s: &SphereGrid) -> f64 {
        let f = s.sample(|w| self.eval_dir(w).powi(2));
        s.integrate(&f)
    }
}

/// Projection of a shell field onto the profile space: degree zero and one
/// spherical-harmonic coefficients, averaged uniformly in the radius.
pub fn project_to_pi(v: &ScalarField) -> Result<PiProfile> {
    let g = v.annulus()?;
    let s = &g.sphere;
    let m = g.slice_len();
    let basis: Vec<Vec<f64>> = vec![
        s.sample(|_| 1.0 / (4.0 * PI)),
        s.sample(|w| 3.0 * w[0] / (4.0 * PI)),
        s.sample(|w| 3.0 * w[1] / (4.0 * PI)),
        s.sample(|w| 3.0 * w[2] / (4.0 * PI)),
    ];
    let mut acc = [0.0; 4];
    let mut wsum = 0.0;
    let mut buf = vec![0.0; m];
    for i in 0..g.n_t {
        // dr = e^{-t} dt
        let w = g.t_weight(i) * (-g.t(i)).exp();
        wsum += w;
        let slice = &v.values[i * m..(i + 1) * m];
        for (e, bf) in basis.iter().enumerate() {
            for q in 0..m {
                buf[q] = slice[q] * bf[q];
            }
            acc[e] += w * s.integrate(&buf);
        }
    }
    PiProfile::new(acc.map(|a| a / wsum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphgrid::AnnulusGrid;

    #[test]
    fn eval_examples() {
        assert_eq!(PiProfile::basis(0).eval([3.0, 4.0, 0.0]).unwrap(), 1.0);
        assert_eq!(PiProfile::basis(3).eval([0.0, 0.0, 2.0]).unwrap(), 1.0);
        let v = PiProfile::basis(1).eval([1.0, 1.0, 0.0]).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(PiProfile::basis(1).eval([0.0; 3]).is_err());
    }

    #[test]
    fn lifted_examples() {
        assert_eq!(PiProfile::basis(0).eval_lifted([0.0, 0.0, 2.0]), 2.0);
        assert_eq!(PiProfile::basis(1).eval_lifted([0.7, -2.0, 5.0]), 0.7);
        assert_eq!(PiProfile::new([0.3, 1.0, 2.0, 3.0]).unwrap().eval_lifted([0.0; 3]), 0.0);
    }

    #[test]
    fn lb_action_examples() {
        assert_eq!(PiProfile::basis(0).laplace_beltrami_action().b, [0.0; 4]);
        assert_eq!(PiProfile::basis(1).laplace_beltrami_action().b, [0.0, -2.0, 0.0, 0.0]);
        let p = PiProfile::new([0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(p.laplace_beltrami_action().b, [0.0, -2.0, -2.0, -2.0]);
    }

    #[test]
    fn sphere_norm_examples() {
        assert!((PiProfile::basis(0).sphere_l2_sq() - 12.56637).abs() < 1e-5);
        assert!((PiProfile::basis(1).sphere_l2_sq() - 4.18879).abs() < 1e-5);
        let h = 0.5f64.sqrt();
        let p = PiProfile::new([h, h, 0.0, 0.0]).unwrap();
        assert!((p.sphere_l2_sq() - 8.0 * PI / 3.0).abs() < 1e-12);
        let s = SphereGrid::new(8, 16).unwrap();
        for prof in [PiProfile::basis(0), PiProfile::basis(2), p, PiProfile::new([0.3, -0.2, 0.5, 0.9]).unwrap()] {
            assert!((prof.sphere_l2_sq_quadrature(&s) - prof.sphere_l2_sq()).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_fixed_point_and_filtering() {
        let g = AnnulusGrid::uniform(1.0, 2.0, 12).unwrap();
        let p = PiProfile::basis(3);
        let f = ScalarField::on_annulus(&g, |x| p.eval(x).unwrap());
        let q = project_to_pi(&f).unwrap();
        for e in 0..4 {
            assert!((q.b[e] - p.b[e]).abs() < 1e-8);
        }
        let p = PiProfile::new([0.2, -0.4, 0.1, 0.7]).unwrap();
        // add a degree-two harmonic, x1 x2 / r^2
        let f = ScalarField::on_annulus(&g, |x| {
            let r = norm(x);
            p.eval(x).unwrap() + 3.0 * x[0] * x[1] / (r * r) * r
        });
        let q = project_to_pi(&f).unwrap();
        for e in 0..4 {
            assert!((q.b[e] - p.b[e]).abs() < 1e-8, "{:?}", q.b);
        }
    }

    #[test]
    fn projection_of_radial_field() {
        let g = AnnulusGrid::uniform(1.0, 3.0, 40).unwrap();
        let f = ScalarField::on_annulus(&g, |x| norm(x) * norm(x));
        let q = project_to_pi(&f).unwrap();
        // oracle: uniform radial mean of r^2 over [1, 3] is (27 - 1) / 3 / 2
        assert!((q.b[0] - 26.0 / 6.0).abs() < 1e-2);
        assert!(q.b[1..].iter().all(|v| v.abs() < 1e-12));
    }
}
