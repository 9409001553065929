//! Quadratic and bilinear forms over `R x S^2` and the checks built on them.

use serde::Serialize;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernel;
use crate::sphgrid::{laplacian, AnnulusGrid, Grid, ScalarField, SphereGrid};

type WeightFn = Arc<dyn Fn(f64) -> [f64; 5] + Send + Sync>;

#[derive(Clone)]
enum WeightShape {
    Kernel,
    Smooth(WeightFn),
}

/// Weight `G(t) = base(t - tau)` with its first four derivatives.
#[derive(Clone)]
pub struct WeightProfile {
    pub tau: f64,
    shape: WeightShape,
}

impl fmt::Debug for WeightProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.shape {
            WeightShape::Kernel => "kernel",
            WeightShape::Smooth(_) => "smooth",
        };
        f.debug_struct("WeightProfile").field("tau", &self.tau).field("kind", &kind).finish()
    }
}

impl WeightProfile {
    /// The kernel `g(t - tau)`.
    pub fn kernel(tau: f64) -> Self {
        WeightProfile { tau, shape: WeightShape::Kernel }
    }

    /// Any smooth base function given with derivatives up to order four.
    pub fn smooth<F>(tau: f64, f: F) -> Self
    where
        F: Fn(f64) -> [f64; 5] + Send + Sync + 'static,
    {
        WeightProfile { tau, shape: WeightShape::Smooth(Arc::new(f)) }
    }

    /// Gaussian `exp(-t^2 / (2 sigma^2))`.
    pub fn gaussian(tau: f64, sigma: f64) -> Self {
        Self::smooth(tau, move |t| {
            let s2 = sigma * sigma;
            let g = (-t * t / (2.0 * s2)).exp();
            [
                g,
                -t / s2 * g,
                (t * t / (s2 * s2) - 1.0 / s2) * g,
                (-t.powi(3) / s2.powi(3) + 3.0 * t / (s2 * s2)) * g,
                (t.powi(4) / s2.powi(4) - 6.0 * t * t / s2.powi(3) + 3.0 / (s2 * s2)) * g,
            ]
        })
    }

    pub fn is_kernel(&self) -> bool {
        matches!(self.shape, WeightShape::Kernel)
    }

    /// `[G, G', G'', G''', G'''']` at `t`; for the kernel the right limits.
    pub fn at(&self, t: f64) -> [f64; 5] {
        let s = t - self.tau;
        match &self.shape {
            WeightShape::Kernel => {
                let k = kernel::sample(s);
                [k.g, k.d1, k.d2, k.d3_right, k.d4_right]
            }
            WeightShape::Smooth(f) => f(s),
        }
    }
}

/// The six integrand groups of the weighted identity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Groups {
    pub laplace_beltrami: f64,
    pub mixed: f64,
    pub second_t: f64,
    pub gradient: f64,
    pub first_t: f64,
    pub trace: f64,
}

impl Groups {
    pub fn sum(&self) -> f64 {
        self.laplace_beltrami + self.mixed + self.second_t + self.gradient + self.first_t + self.trace
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FormValue {
    pub value: f64,
    pub groups: Groups,
}

impl FormValue {
    fn from_groups(groups: Groups) -> Self {
        FormValue { value: groups.sum(), groups }
    }
}

/// Named terms of the spherical-coordinate form for `int (Lap u)^2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PsiTerms {
    pub radial_second: f64,
    pub radial_first: f64,
    pub mixed: f64,
    pub angular: f64,
    pub cross: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiValue {
    pub value: f64,
    pub terms: PsiTerms,
}

/// Shell `r_inner <= |x| <= r_outer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Region {
    pub r_inner: f64,
    pub r_outer: f64,
}

/// `v = e^t u`, the field in log coordinates.
pub fn log_field(u: &ScalarField) -> Result<ScalarField> {
    let g = u.annulus()?;
    let m = g.slice_len();
    let mut values = u.values.clone();
    for i in 0..g.n_t {
        let e = g.t(i).exp();
        values[i * m..(i + 1) * m].iter_mut().for_each(|v| *v *= e);
    }
    Ok(ScalarField { grid: u.grid.clone(), values })
}

struct Derivs {
    v: Vec<f64>,
    vt: Vec<f64>,
    vtt: Vec<f64>,
    gt: Vec<f64>,
    gp: Vec<f64>,
    lb: Vec<f64>,
    gtt: Vec<f64>,
    gpt: Vec<f64>,
}

fn angular(s: &SphereGrid, f: &[f64], m: usize, n_t: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gt = vec![0.0; f.len()];
    let mut gp = vec![0.0; f.len()];
    let mut lb = vec![0.0; f.len()];
    for i in 0..n_t {
        let sl = &f[i * m..(i + 1) * m];
        if sl.iter().all(|&x| x == 0.0) {
            continue;
        }
        let (a, b, c) = s.grad_lb_spectral(sl);
        gt[i * m..(i + 1) * m].copy_from_slice(&a);
        gp[i * m..(i + 1) * m].copy_from_slice(&b);
        lb[i * m..(i + 1) * m].copy_from_slice(&c);
    }
    (gt, gp, lb)
}

fn derivs(g: &AnnulusGrid, v: &[f64]) -> Derivs {
    let m = g.slice_len();
    let (vt, vtt) = g.t_derivs(v);
    let (gt, gp, lb) = angular(&g.sphere, v, m, g.n_t);
    let (gtt, gpt, _) = angular(&g.sphere, &vt, m, g.n_t);
    Derivs { v: v.to_vec(), vt, vtt, gt, gp, lb, gtt, gpt }
}

fn same_grid<'a>(v: &'a ScalarField, w: &ScalarField) -> Result<&'a AnnulusGrid> {
    let g = v.annulus()?;
    if v.grid != w.grid {
        return Err(Error::GridMismatch("forms need both fields on one shell grid".into()));
    }
    Ok(g)
}

fn union_support(g: &AnnulusGrid, v: &[f64], w: &[f64]) -> Option<(usize, usize)> {
    match (g.support_range(v, 2), g.support_range(w, 2)) {
        (Some(a), Some(b)) => Some((a.0.min(b.0), a.1.max(b.1))),
        (a, b) => a.or(b),
    }
}

/// Five-group integral over the radial index range `[lo, hi]` with trapezoid weights.
fn five_groups(g: &AnnulusGrid, a: &Derivs, b: &Derivs, wt: &WeightProfile, lo: usize, hi: usize) -> Groups {
    let m = g.slice_len();
    let s = &g.sphere;
    let dt = g.dt();
    let mut out = Groups::default();
    let mut buf = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    for i in lo..=hi {
        let wq = if (i == lo || i == hi) && lo != hi { 0.5 * dt } else { dt };
        let [gg, g1, g2, _, _] = wt.at(g.t(i));
        let c_grad = -(g2 + g1 + 2.0 * gg);
        let c_t = -(2.0 * g2 + 3.0 * g1 - gg);
        for q in 0..m {
            let k = i * m + q;
            buf[0][q] = a.lb[k] * b.lb[k] * gg;
            buf[1][q] = 2.0 * (a.gtt[k] * b.gtt[k] + a.gpt[k] * b.gpt[k]) * gg;
            buf[2][q] = a.vtt[k] * b.vtt[k] * gg;
            buf[3][q] = (a.gt[k] * b.gt[k] + a.gp[k] * b.gp[k]) * c_grad;
            buf[4][q] = a.vt[k] * b.vt[k] * c_t;
        }
        out.laplace_beltrami += wq * s.integrate(&buf[0]);
        out.mixed += wq * s.integrate(&buf[1]);
        out.second_t += wq * s.integrate(&buf[2]);
        out.gradient += wq * s.integrate(&buf[3]);
        out.first_t += wq * s.integrate(&buf[4]);
    }
    out
}

fn sixth_group(g: &AnnulusGrid, a: &Derivs, b: &Derivs, wt: &WeightProfile, lo: usize, hi: usize) -> Result<f64> {
    if wt.is_kernel() {
        return Ok(0.5 * sphere_product(g, &a.v, &b.v, wt.tau)?);
    }
    let m = g.slice_len();
    let mut acc = 0.0;
    let mut buf = vec![0.0; m];
    for i in lo..=hi {
        let wq = if (i == lo || i == hi) && lo != hi { 0.5 * g.dt() } else { g.dt() };
        let [_, g1, g2, g3, g4] = wt.at(g.t(i));
        let c = 0.5 * (g4 + 2.0 * g3 - g2 - 2.0 * g1);
        for q in 0..m {
            buf[q] = a.v[i * m + q] * b.v[i * m + q] * c;
        }
        acc += wq * g.sphere.integrate(&buf);
    }
    Ok(acc)
}

/// Five-group form without the trace term.
pub fn b_tilde_form(v: &ScalarField, w: &ScalarField, wt: &WeightProfile) -> Result<FormValue> {
    let g = same_grid(v, w)?;
    let Some((lo, hi)) = union_support(g, &v.values, &w.values) else {
        return Ok(FormValue::from_groups(Groups::default()));
    };
    let a = derivs(g, &v.values);
    let b = if std::ptr::eq(v, w) { None } else { Some(derivs(g, &w.values)) };
    let b = b.as_ref().unwrap_or(&a);
    Ok(FormValue::from_groups(five_groups(g, &a, b, wt, lo, hi)))
}

/// Full six-group bilinear form. For the kernel weight the last group is half
/// the sphere product at `t = tau`.
pub fn b_form(v: &ScalarField, w: &ScalarField, wt: &WeightProfile) -> Result<FormValue> {
    let g = same_grid(v, w)?;
    let Some((lo, hi)) = union_support(g, &v.values, &w.values) else {
        return Ok(FormValue::from_groups(Groups::default()));
    };
    let a = derivs(g, &v.values);
    let b = if std::ptr::eq(v, w) { None } else { Some(derivs(g, &w.values)) };
    let b = b.as_ref().unwrap_or(&a);
    let mut groups = five_groups(g, &a, b, wt, lo, hi);
    groups.trace = sixth_group(g, &a, b, wt, lo, hi)?;
    Ok(FormValue::from_groups(groups))
}

/// Five-group quadratic form of `v = e^t u` restricted to the shell `region`.
pub fn q_form(u: &ScalarField, region: Region, tau: f64) -> Result<FormValue> {
    let g = u.annulus()?;
    let t_lo = -region.r_outer.ln();
    let t_hi = -region.r_inner.ln();
    let idx: Vec<usize> = (0..g.n_t).filter(|&i| g.t(i) >= t_lo - 1e-12 && g.t(i) <= t_hi + 1e-12).collect();
    let (Some(&lo), Some(&hi)) = (idx.first(), idx.last()) else {
        return Err(Error::Domain("region misses the grid".into()));
    };
    let v = log_field(u)?;
    let a = derivs(g, &v.values);
    Ok(FormValue::from_groups(five_groups(g, &a, &a, &WeightProfile::kernel(tau), lo, hi)))
}

fn slice_at(g: &AnnulusGrid, v: &[f64], tau: f64) -> Result<Vec<f64>> {
    let eps = 1e-12 * (1.0 + tau.abs());
    if tau < g.t_min() - eps || tau > g.t_max() + eps {
        return Err(Error::Domain(format!("tau = {tau} outside [{}, {}]", g.t_min(), g.t_max())));
    }
    let m = g.slice_len();
    let x = ((tau - g.t_min()) / g.dt()).clamp(0.0, (g.n_t - 1) as f64);
    let i0 = (x.floor() as usize).min(g.n_t - 2);
    let f = x - i0 as f64;
    Ok((0..m).map(|q| (1.0 - f) * v[i0 * m + q] + f * v[(i0 + 1) * m + q]).collect())
}

fn sphere_product(g: &AnnulusGrid, v: &[f64], w: &[f64], tau: f64) -> Result<f64> {
    let a = slice_at(g, v, tau)?;
    let b = slice_at(g, w, tau)?;
    let p: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    Ok(g.sphere.integrate(&p))
}

/// `int_{S^2} v(tau, w)^2 dw`, linear in `t` between radial nodes.
pub fn sphere_trace(v: &ScalarField, tau: f64) -> Result<f64> {
    let g = v.annulus()?;
    sphere_product(g, &v.values, &v.values, tau)
}

/// `int (Lap u)^2` over the grid or a sub-shell.
pub fn delta_energy(u: &ScalarField, region: Option<Region>) -> Result<f64> {
    let l = laplacian(u)?;
    match &u.grid {
        Grid::Voxel(g) => {
            let h3 = g.h.powi(3);
            Ok(l.values.iter().map(|v| v * v).sum::<f64>() * h3)
        }
        Grid::Annulus(g) => {
            let sq: Vec<f64> = l.values.iter().map(|v| v * v).collect();
            match region {
                None => Ok(g.integrate_volume(&sq)),
                Some(r) => {
                    let m = g.slice_len();
                    let t_lo = -r.r_outer.ln();
                    let t_hi = -r.r_inner.ln();
                    let idx: Vec<usize> = (0..g.n_t).filter(|&i| g.t(i) >= t_lo - 1e-12 && g.t(i) <= t_hi + 1e-12).collect();
                    let (lo, hi) = (idx[0], idx[idx.len() - 1]);
                    Ok(idx
                        .iter()
                        .map(|&i| {
                            let w = if (i == lo || i == hi) && lo != hi { 0.5 * g.dt() } else { g.dt() };
                            w * (-3.0 * g.t(i)).exp() * g.sphere.integrate(&sq[i * m..(i + 1) * m])
                        })
                        .sum())
                }
            }
        }
    }
}

/// Spherical-coordinate form equal to `int (Lap u)^2` on compactly supported fields.
pub fn psi_form(u: &ScalarField) -> Result<PsiValue> {
    let g = u.annulus()?;
    let m = g.slice_len();
    let d = derivs(g, &u.values);
    let mut terms = PsiTerms::default();
    let mut buf = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    for i in 0..g.n_t {
        let t = g.t(i);
        let e = t.exp();
        // r^2 dr = e^{-3t} dt, r^-2 = e^{2t}
        let jac = g.t_weight(i) * (-3.0 * t).exp();
        for q in 0..m {
            let k = i * m + q;
            let ur = -e * d.vt[k];
            let urr = e * e * (d.vtt[k] + d.vt[k]);
            let grt = -e * d.gtt[k];
            let grp = -e * d.gpt[k];
            buf[0][q] = urr * urr;
            buf[1][q] = 2.0 * e * e * ur * ur;
            buf[2][q] = 2.0 * e * e * (grt * grt + grp * grp);
            buf[3][q] = e.powi(4) * d.lb[k] * d.lb[k];
            buf[4][q] = 2.0 * e.powi(4) * d.v[k] * d.lb[k];
        }
        terms.radial_second += jac * g.sphere.integrate(&buf[0]);
        terms.radial_first += jac * g.sphere.integrate(&buf[1]);
        terms.mixed += jac * g.sphere.integrate(&buf[2]);
        terms.angular += jac * g.sphere.integrate(&buf[3]);
        terms.cross += jac * g.sphere.integrate(&buf[4]);
    }
    let value = terms.radial_second + terms.radial_first + terms.mixed + terms.angular + terms.cross;
    Ok(PsiValue { value, terms })
}

fn check_compact(g: &AnnulusGrid, v: &[f64]) -> Result<()> {
    let m = g.slice_len();
    let edge = |i: usize| v[i * m..(i + 1) * m].iter().any(|&x| x != 0.0);
    if edge(0) || edge(1) || edge(g.n_t - 1) || edge(g.n_t - 2) {
        return Err(Error::Invalid("field must vanish on the two outermost shells at each end".into()));
    }
    Ok(())
}

/// Both sides of the weighted identity: the Cartesian pairing
/// `int Lap u Lap(u |x|^-1 G(log 1/|x|))` and the six-group log-coordinate form.
pub fn main_identity_check(u: &ScalarField, wt: &WeightProfile) -> Result<(f64, f64)> {
    let g = u.annulus()?;
    check_compact(g, &u.values)?;
    let m = g.slice_len();
    let mut w = u.values.clone();
    for i in 0..g.n_t {
        let t = g.t(i);
        let f = t.exp() * wt.at(t)[0];
        w[i * m..(i + 1) * m].iter_mut().for_each(|x| *x *= f);
    }
    let lu = laplacian(u)?;
    let lw = laplacian(&ScalarField { grid: u.grid.clone(), values: w })?;
    let prod: Vec<f64> = lu.values.iter().zip(&lw.values).map(|(a, b)| a * b).collect();
    let lhs = g.integrate_volume(&prod);
    let v = log_field(u)?;
    let rhs = b_form(&v, &v, wt)?.value;
    Ok((lhs, rhs))
}

/// `int (LB f)^2 / int |grad f|^2` on the sphere with spectral derivatives.
pub fn spectral_gap_ratio(s: &SphereGrid, f: &[f64]) -> Result<f64> {
    let (gt, gp, lb) = s.grad_lb_spectral(f);
    let num: Vec<f64> = lb.iter().map(|x| x * x).collect();
    let den: Vec<f64> = gt.iter().zip(&gp).map(|(a, b)| a * a + b * b).collect();
    let d = s.integrate(&den);
    if d <= 0.0 {
        return Err(Error::Domain("field has no angular gradient".into()));
    }
    Ok(s.integrate(&num) / d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pispace::PiProfile;
    use crate::sphgrid::norm;
    use std::f64::consts::PI;

    fn bump(x: [f64; 3], r0: f64, w: f64) -> f64 {
        let r = norm(x);
        let s = (r - r0) / w;
        if s.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - s * s).powi(4)
        }
    }

    #[test]
    fn zero_fields_give_zero() {
        let g = AnnulusGrid::uniform(0.5, 2.0, 10).unwrap();
        let z = ScalarField::zeros(Grid::Annulus(g));
        let wt = WeightProfile::kernel(0.0);
        assert_eq!(b_form(&z, &z, &wt).unwrap().value, 0.0);
        assert_eq!(b_tilde_form(&z, &z, &wt).unwrap().value, 0.0);
        assert_eq!(psi_form(&z).unwrap().value, 0.0);
        assert_eq!(delta_energy(&z, None).unwrap(), 0.0);
        assert_eq!(sphere_trace(&z, 0.0).unwrap(), 0.0);
        assert_eq!(main_identity_check(&z, &wt).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn trace_examples() {
        let g = AnnulusGrid::uniform(0.5, 2.0, 10).unwrap();
        let one = ScalarField::on_annulus(&g, |_| 1.0);
        assert!((sphere_trace(&one, 0.1).unwrap() - 4.0 * PI).abs() < 1e-10);
        let p = ScalarField::on_annulus(&g, |x| PiProfile::basis(3).eval(x).unwrap());
        assert!((sphere_trace(&p, 0.0).unwrap() - 4.0 * PI / 3.0).abs() < 1e-10);
        assert!(sphere_trace(&one, 5.0).is_err());
    }

    #[test]
    fn radial_energy_of_lifted_constant() {
        // Lap |x| = 2/|x|, so the energy over C_{1,2} is int 4/r^2 r^2 dr dw = 16 pi
        let g = AnnulusGrid::uniform(1.0, 2.0, 40).unwrap();
        let u = ScalarField::on_annulus(&g, norm);
        let e = delta_energy(&u, None).unwrap();
        assert!((e - 16.0 * PI).abs() / (16.0 * PI) < 1e-3, "{e}");
    }

    #[test]
    fn symmetric_and_trace_relation() {
        let g = AnnulusGrid::uniform(0.3, 3.0, 24).unwrap();
        let u1 = ScalarField::on_annulus(&g, |x| bump(x, 1.0, 0.5) * (1.0 + x[0] / norm(x)));
        let u2 = ScalarField::on_annulus(&g, |x| bump(x, 1.2, 0.6) * (x[2] * x[1] / (norm(x) * norm(x)) + 0.3));
        let v = log_field(&u1).unwrap();
        let w = log_field(&u2).unwrap();
        let wt = WeightProfile::kernel(-0.05);
        let a = b_form(&v, &w, &wt).unwrap();
        let b = b_form(&w, &v, &wt).unwrap();
        assert!((a.value - b.value).abs() <= 1e-12 * a.value.abs().max(1.0));
        let bt = b_tilde_form(&v, &w, &wt).unwrap();
        let half = 0.5 * sphere_product(&g, &v.values, &w.values, -0.05).unwrap();
        assert!((a.value - bt.value - half).abs() < 1e-10);
        assert!((a.value - a.groups.sum()).abs() <= 1e-12 * a.value.abs().max(1.0));
    }

    #[test]
    fn radial_fields_only_feel_t_groups() {
        let g = AnnulusGrid::uniform(0.3, 3.0, 20).unwrap();
        let u = ScalarField::on_annulus(&g, |x| bump(x, 1.0, 0.5));
        let v = log_field(&u).unwrap();
        let f = b_tilde_form(&v, &v, &WeightProfile::kernel(0.0)).unwrap();
        assert!(f.groups.laplace_beltrami.abs() < 1e-10);
        assert!(f.groups.mixed.abs() < 1e-10);
        assert!(f.groups.gradient.abs() < 1e-10);
        assert!(f.groups.second_t > 0.0 && f.groups.first_t > 0.0);
    }

    #[test]
    fn q_form_on_full_support_matches_b_tilde() {
        let g = AnnulusGrid::uniform(0.3, 3.0, 20).unwrap();
        let u = ScalarField::on_annulus(&g, |x| bump(x, 1.0, 0.5) * (2.0 + x[1] / norm(x)));
        let v = log_field(&u).unwrap();
        let q = q_form(&u, Region { r_inner: 0.3, r_outer: 3.0 }, 0.2).unwrap();
        let b = b_tilde_form(&v, &v, &WeightProfile::kernel(0.2)).unwrap();
        assert!((q.value - b.value).abs() < 1e-9 * b.value.abs());
    }

    #[test]
    fn spectral_gap_for_low_harmonics() {
        let s = SphereGrid::new(24, 48).unwrap();
        let y1 = s.sample(|w| w[2]);
        let y2 = s.sample(|w| w[0] * w[1]);
        let y3 = s.sample(|w| 5.0 * w[2].powi(3) - 3.0 * w[2]);
        for (f, l) in [(y1, 1.0), (y2, 2.0), (y3, 3.0)] {
            let r = spectral_gap_ratio(&s, &f).unwrap();
            assert!((r - l * (l + 1.0)).abs() < 1e-8, "{r}");
        }
    }

    #[test]
    fn psi_matches_energy_on_bump() {
        let g = AnnulusGrid::uniform(0.3, 3.0, 48).unwrap();
        let u = ScalarField::on_annulus(&g, |x| bump(x, 1.0, 0.6) * (1.0 + 0.5 * x[0] / norm(x)));
        let p = psi_form(&u).unwrap().value;
        let e = delta_energy(&u, None).unwrap();
        assert!((p - e).abs() / e < 0.05, "{p} {e}");
    }
}
