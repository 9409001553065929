//! Layer decomposition near the origin, weighted capacity series and their
//! tail trends.

use rayon::prelude::*;
use serde::Serialize;

use crate::capacity::{cap_gram, cap_inf, CapacityProblem, GramMatrix};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::sphgrid::CompactumSpec;

/// How consecutive layers are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerLayout {
    /// Outer scale: layer `j` starts at `scale * step^-j`.
    pub scale: f64,
    pub step: f64,
    /// Outer over inner radius of each layer.
    pub width: f64,
}

impl LayerLayout {
    /// Disjoint layers `[a^-j, a^-j+1]`.
    pub fn sufficiency(a: f64) -> Self {
        LayerLayout { scale: 1.0, step: a, width: a }
    }

    /// Overlapping layers `[a^-j, a^-j+2]`.
    pub fn necessity(a: f64) -> Self {
        LayerLayout { scale: 1.0, step: a, width: a * a }
    }

    /// Layers `[R a^-2j, R a^-2(j-1)]`.
    pub fn decay(a: f64, r: f64) -> Self {
        LayerLayout { scale: r, step: a * a, width: a * a }
    }

    pub fn inner(&self, j: i32) -> f64 {
        self.scale * self.step.powi(-j)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.step > 1.0 && self.width > 1.0) {
            return Err(Error::Invalid("layers need scale > 0 and ratios > 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerTerm {
    pub j: i32,
    pub s_inner: f64,
    pub s_outer: f64,
    pub gram: GramMatrix,
    pub gamma: f64,
    pub weight: f64,
    pub empty: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerSeries {
    pub layout: LayerLayout,
    pub j_start: i32,
    pub terms: Vec<LayerTerm>,
}

impl LayerSeries {
    /// Series from precomputed Gram matrices, one per layer starting at `j_start`.
    pub fn from_grams(layout: LayerLayout, j_start: i32, grams: Vec<Option<GramMatrix>>) -> Result<Self> {
        layout.validate()?;
        let terms = grams
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let j = j_start + i as i32;
                let s = layout.inner(j);
                let (gram, empty) = match g {
                    Some(g) => (g, false),
                    None => (GramMatrix::zero(), true),
                };
                let gamma = if empty { 0.0 } else { cap_inf(&gram)?.0.max(0.0) };
                Ok(LayerTerm { j, s_inner: s, s_outer: s * layout.width, gram, gamma, weight: s, empty, iterations: 0 })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerSeries { layout, j_start, terms })
    }

    /// Rows `(j, gamma, weight, partial sum)` for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,gamma,weight,partial_sum\n");
        for (t, s) in self.terms.iter().zip(sufficiency_sum(self)) {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", t.j, t.gamma, t.weight, s));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerSolver {
    pub n_cells: usize,
    pub tol: f64,
}

/// Gram matrices of each layer of a family produced by `layer_of(j, s_inner, s_outer)`.
pub fn layer_capacities_with<F>(layout: LayerLayout, j_start: i32, j_end: i32, solver: LayerSolver, layer_of: F) -> Result<LayerSeries>
where
    F: Fn(i32, f64, f64) -> Option<CompactumSpec> + Sync,
{
    layout.validate()?;
    if j_end < j_start {
        return Err(Error::Invalid("empty layer range".into()));
    }
    let results: Vec<Result<(Option<GramMatrix>, usize)>> = (j_start..=j_end)
        .into_par_iter()
        .map(|j| {
            let s = layout.inner(j);
            let Some(k) = layer_of(j, s, s * layout.width) else {
                return Ok((None, 0));
            };
            let problem = match CapacityProblem::annulus(k, s, layout.width, solver.n_cells, solver.tol) {
                Ok(p) => p,
                Err(Error::EmptyCompactum) => return Ok((None, 0)),
                Err(e) => return Err(e),
            };
            let gr = cap_gram(&problem)?;
            Ok((Some(gr.gram), gr.stats.iter().map(|s| s.iterations).sum()))
        })
        .collect();
    let mut grams = Vec::with_capacity(results.len());
    let mut iters = Vec::with_capacity(results.len());
    for r in results {
        let (g, it) = r?;
        grams.push(g);
        iters.push(it);
    }
    let mut series = LayerSeries::from_grams(layout, j_start, grams)?;
    for (t, it) in series.terms.iter_mut().zip(iters) {
        t.iterations = it;
    }
    Ok(series)
}

/// Layer capacities of the parts of `complement` inside each layer.
pub fn layer_capacities(complement: &CompactumSpec, layout: LayerLayout, j_start: i32, j_end: i32, solver: LayerSolver) -> Result<LayerSeries> {
    layer_capacities_with(layout, j_start, j_end, solver, |_, lo, hi| complement.restrict(lo, hi))
}

/// Partial sums of `weight * gamma`.
pub fn sufficiency_sum(series: &LayerSeries) -> Vec<f64> {
    let mut acc = 0.0;
    series
        .terms
        .iter()
        .map(|t| {
            acc += t.weight * t.gamma;
            acc
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NecessityTerm {
    pub value: f64,
    pub b_min: [f64; 4],
}

/// Smallest eigenvalue of the partial weighted Gram sums, with its eigenvector.
pub fn necessity_sum(series: &LayerSeries) -> Vec<NecessityTerm> {
    let mut acc = GramMatrix::zero();
    series
        .terms
        .iter()
        .map(|t| {
            acc = acc.add(&t.gram.scaled(t.weight));
            let (vals, vecs) = sym_eigen(&acc.g);
            NecessityTerm { value: vals[0], b_min: std::array::from_fn(|r| vecs[r][0]) }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictKind {
    AnalyticDivergent,
    AnalyticConvergent,
    NumericTrend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TailModel {
    Bounded,
    Logarithmic,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityVerdict {
    pub kind: VerdictKind,
    pub model: Option<TailModel>,
    /// Least-squares residuals of the bounded, logarithmic and linear fits.
    pub residuals: [f64; 3],
    /// Fitted slope of the selected model.
    pub slope: f64,
    pub partial_sums: Vec<f64>,
    pub source: String,
}

fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icpt = my - slope * mx;
    let res = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum::<f64>().sqrt();
    (slope, icpt, res)
}

/// Trend of a partial-sum sequence from fits of `A + B f(l)` over its last half,
/// with `f` one of `1/l`, `ln l`, `l`.
pub fn verdict(partial_sums: &[f64]) -> Result<RegularityVerdict> {
    if partial_sums.len() < 8 {
        return Err(Error::Invalid(format!("need at least 8 partial sums, got {}", partial_sums.len())));
    }
    let start = partial_sums.len() / 2;
    let ls: Vec<f64> = (start..partial_sums.len()).map(|l| (l + 1) as f64).collect();
    let ys = &partial_sums[start..];
    let fits = [
        line_fit(&ls.iter().map(|l| 1.0 / l).collect::<Vec<_>>(), ys),
        line_fit(&ls.iter().map(|l| l.ln()).collect::<Vec<_>>(), ys),
        line_fit(&ls, ys),
    ];
    let residuals = fits.map(|f| f.2);
    let scale = ys.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let flat = ys.iter().all(|v| (v - ys[0]).abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE));
    let best = if flat {
        0
    } else {
        let mut b = 0;
        for i in 1..3 {
            if residuals[i] < residuals[b] {
                b = i;
            }
        }
        b
    };
    let model = [TailModel::Bounded, TailModel::Logarithmic, TailModel::Linear][best];
    Ok(RegularityVerdict {
        kind: VerdictKind::NumericTrend,
        model: Some(model),
        residuals,
        slope: if flat { 0.0 } else { fits[best].0 },
        partial_sums: partial_sums.to_vec(),
        source: "numeric layers".into(),
    })
}

/// Capacity sum `sum_{j=2}^{l} s_j gamma_j` over a series laid out with
/// [`LayerLayout::decay`].
pub fn decay_factor(series: &LayerSeries, l: i32) -> Result<f64> {
    let last = series.j_start + series.terms.len() as i32 - 1;
    if l < 2 || l > last || series.j_start > 2 {
        return Err(Error::Invalid(format!("layer index {l} outside the computed range")));
    }
    Ok(series.terms.iter().filter(|t| t.j >= 2 && t.j <= l).map(|t| t.weight * t.gamma).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(d: [f64; 4]) -> GramMatrix {
        let mut g = [[0.0; 4]; 4];
        for i in 0..4 {
            g[i][i] = d[i];
        }
        GramMatrix::new(g).unwrap()
    }

    #[test]
    fn sums_of_simple_series() {
        let lay = LayerLayout::sufficiency(2.0);
        let empty = LayerSeries::from_grams(lay, 0, vec![None; 10]).unwrap();
        assert!(sufficiency_sum(&empty).iter().all(|&s| s == 0.0));
        assert!(necessity_sum(&empty).iter().all(|t| t.value == 0.0));

        let grams = (0..10).map(|j| Some(diag([1.0; 4]).scaled(2f64.powi(j)))).collect();
        let s = LayerSeries::from_grams(lay, 0, grams).unwrap();
        for (l, t) in necessity_sum(&s).iter().enumerate() {
            assert!((t.value - (l + 1) as f64).abs() < 1e-12);
        }
        for (l, v) in sufficiency_sum(&s).iter().enumerate() {
            assert!((v - (l + 1) as f64).abs() < 1e-12);
        }

        let mut grams = vec![None; 10];
        grams[4] = Some(diag([3.0, 2.0, 2.0, 5.0]));
        let s = LayerSeries::from_grams(lay, 0, grams).unwrap();
        let nonzero = s.terms.iter().filter(|t| t.weight * t.gamma != 0.0).count();
        assert_eq!(nonzero, 1);
        assert!(s.to_csv().lines().count() == 11);
    }

    #[test]
    fn shared_null_vector_gives_zero() {
        let v = [0.5, 0.5, -0.5, 0.5];
        let grams = (0..12)
            .map(|j| {
                let mut g = [[0.0; 4]; 4];
                for r in 0..4 {
                    for c in 0..4 {
                        g[r][c] = ((r == c) as u8 as f64 - v[r] * v[c]) * 2f64.powi(j);
                    }
                }
                Some(GramMatrix::new(g).unwrap())
            })
            .collect();
        let s = LayerSeries::from_grams(LayerLayout::necessity(2.0), 0, grams).unwrap();
        for t in necessity_sum(&s) {
            assert!(t.value.abs() < 1e-12);
            let d: f64 = t.b_min.iter().zip(&v).map(|(a, b)| a * b).sum();
            assert!((d.abs() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn verdict_models() {
        let bounded: Vec<f64> = (0..12).map(|l| 3.0 - 0.5f64.powi(l)).collect();
        assert_eq!(verdict(&bounded).unwrap().model, Some(TailModel::Bounded));
        let lin: Vec<f64> = (0..12).map(|l| 0.7 * l as f64).collect();
        let v = verdict(&lin).unwrap();
        assert_eq!(v.model, Some(TailModel::Linear));
        assert_eq!(v.kind, VerdictKind::NumericTrend);
        let log: Vec<f64> = (1..=16).map(|l: i32| (1..=l).map(|k| 1.0 / k as f64).sum()).collect();
        assert_eq!(verdict(&log).unwrap().model, Some(TailModel::Logarithmic));
        assert!(verdict(&lin[..7]).is_err());
    }

    #[test]
    fn decay_factor_ranges() {
        let lay = LayerLayout::decay(2.0, 1.0);
        let mut grams = vec![None; 8];
        grams[3] = Some(diag([1.0; 4]));
        let s = LayerSeries::from_grams(lay, 0, grams).unwrap();
        assert_eq!(decay_factor(&s, 2).unwrap(), 0.0);
        let w = decay_factor(&s, 3).unwrap();
        assert!(w > 0.0);
        assert_eq!(decay_factor(&s, 7).unwrap(), w);
        assert!(decay_factor(&s, 8).is_err());
    }

    #[test]
    fn full_shell_layers_are_scale_invariant() {
        let k = CompactumSpec::full_shell(1e-6, 10.0);
        let s = layer_capacities(&k, LayerLayout::sufficiency(2.0), 0, 2, LayerSolver { n_cells: 16, tol: 1e-10 }).unwrap();
        let w: Vec<f64> = s.terms.iter().map(|t| t.weight * t.gamma).collect();
        assert!(w[0] > 0.0);
        for v in &w[1..] {
            assert!((v / w[0] - 1.0).abs() < 1e-6, "{w:?}");
        }
    }
}
