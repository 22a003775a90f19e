//! Gaussian mixtures over one or two dimensions, both as numeric objects for
//! sampling and as graph expressions for training.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::tensor::{Graph, Real, Var};

/// Log-scales produced by a head are clamped into this range (in head units).
pub const LOG_SCALE_RANGE: (f64, f64) = (-3.0, 3.0);
/// Correlation is `RHO_LIMIT * tanh(raw)` so the covariance stays positive definite.
pub const RHO_LIMIT: f64 = 0.99;

/// A K-component mixture of normals in one or two dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    /// Unnormalized component log-weights.
    pub logits: Vec<f64>,
    /// Component means; the second coordinate is ignored for 1-D mixtures.
    pub means: Vec<[f64; 2]>,
    pub log_scales: Vec<[f64; 2]>,
    /// Per-component correlation; zero for 1-D mixtures.
    pub rho: Vec<f64>,
    pub dim: usize,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmParams {
    pub fn univariate(logits: Vec<f64>, means: Vec<f64>, log_scales: Vec<f64>) -> Self {
        let k = logits.len();
        assert!(k >= 1 && means.len() == k && log_scales.len() == k);
        GmmParams {
            logits,
            means: means.into_iter().map(|m| [m, 0.0]).collect(),
            log_scales: log_scales.into_iter().map(|s| [s, 0.0]).collect(),
            rho: vec![0.0; k],
            dim: 1,
        }
    }

    pub fn bivariate(logits: Vec<f64>, means: Vec<[f64; 2]>, log_scales: Vec<[f64; 2]>, rho: Vec<f64>) -> Self {
        let k = logits.len();
        assert!(k >= 1 && means.len() == k && log_scales.len() == k && rho.len() == k);
        assert!(rho.iter().all(|r| r.abs() < 1.0), "correlation must lie in (-1, 1)");
        GmmParams {
            logits,
            means,
            log_scales,
            rho,
            dim: 2,
        }
    }

    pub fn components(&self) -> usize {
        self.logits.len()
    }

    /// Mixture weights after softmax.
    pub fn weights(&self) -> Vec<f64> {
        log_softmax(&self.logits).into_iter().map(f64::exp).collect()
    }

    fn component_logpdf(&self, k: usize, x: &[f64]) -> f64 {
        let [mx, my] = self.means[k];
        let [lx, ly] = self.log_scales[k];
        let dx = (x[0] - mx) * (-lx).exp();
        if self.dim == 1 {
            return -0.5 * dx * dx - lx - 0.5 * (2.0 * PI).ln();
        }
        let dy = (x[1] - my) * (-ly).exp();
        let r = self.rho[k];
        let one_m = 1.0 - r * r;
        -(2.0 * PI).ln() - lx - ly - 0.5 * one_m.ln() - 0.5 * (dx * dx - 2.0 * r * dx * dy + dy * dy) / one_m
    }

    /// Log density at `x` (length `dim`).
    pub fn logpdf(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim, "point dimension does not match mixture");
        let lw = log_softmax(&self.logits);
        logsumexp((0..self.components()).map(|k| lw[k] + self.component_logpdf(k, x)))
    }

    /// Draws a component, then a point from it. Returns the point (padded to 2) and the component.
    pub fn sample_with_component<R: Rng + ?Sized>(&self, rng: &mut R) -> ([f64; 2], usize) {
        let w = self.weights();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = w.len() - 1;
        for (i, &p) in w.iter().enumerate() {
            acc += p;
            if u < acc {
                k = i;
                break;
            }
        }
        let n1: f64 = StandardNormal.sample(rng);
        let [mx, my] = self.means[k];
        let sx = self.log_scales[k][0].exp();
        if self.dim == 1 {
            return ([mx + sx * n1, 0.0], k);
        }
        let n2: f64 = StandardNormal.sample(rng);
        let sy = self.log_scales[k][1].exp();
        let r = self.rho[k];
        ([mx + sx * n1, my + sy * (r * n1 + (1.0 - r * r).sqrt() * n2)], k)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        self.sample_with_component(rng).0
    }

    /// Builds physical mixture parameters from one raw head output row.
    /// `scales` converts head units to physical units per dimension.
    pub fn from_head(raw: &[f64], dim: usize, scales: [f64; 2]) -> Self {
        let per = if dim == 1 { 3 } else { 6 };
        assert_eq!(raw.len() % per, 0);
        let k = raw.len() / per;
        let block = |b: usize| &raw[b * k..(b + 1) * k];
        let clamp = |x: f64| x.clamp(LOG_SCALE_RANGE.0, LOG_SCALE_RANGE.1);
        let logits = block(0).to_vec();
        if dim == 1 {
            let means = block(1).iter().map(|m| m * scales[0]).collect();
            let ls = block(2).iter().map(|&s| clamp(s) + scales[0].ln()).collect();
            return GmmParams::univariate(logits, means, ls);
        }
        let means = (0..k).map(|i| [block(1)[i] * scales[0], block(2)[i] * scales[1]]).collect();
        let ls = (0..k)
            .map(|i| [clamp(block(3)[i]) + scales[0].ln(), clamp(block(4)[i]) + scales[1].ln()])
            .collect();
        let rho = block(5).iter().map(|&r| RHO_LIMIT * r.tanh()).collect();
        GmmParams::bivariate(logits, means, ls, rho)
    }
}

/// Row-wise mixture log-likelihood of `target` (n x 1) under a univariate head output
/// `raw` (n x 3K), both in head units. Returns n x 1.
pub fn univariate_loglik<T: Real>(g: &mut Graph<T>, raw: Var, target: Var) -> Result<Var> {
    let k = g.value(raw).cols() / 3;
    let logits = g.slice_cols(raw, 0, k)?;
    let mean = g.slice_cols(raw, k, k)?;
    let ls_raw = g.slice_cols(raw, 2 * k, k)?;
    let ls = g.clamp(ls_raw, LOG_SCALE_RANGE.0, LOG_SCALE_RANGE.1);

    let neg_ls = g.scale(ls, -1.0);
    let inv = g.exp(neg_ls);
    let diff = g.sub(target, mean)?;
    let z = g.mul(diff, inv)?;
    let z2 = g.square(z);
    let quad = g.scale(z2, -0.5);
    let comp = g.sub(quad, ls)?;
    let comp = g.add_scalar(comp, -0.5 * (2.0 * PI).ln());

    let lw = g.log_softmax(logits);
    let joint = g.add(lw, comp)?;
    Ok(g.logsumexp(joint))
}

/// Row-wise mixture log-likelihood of `target` (n x 2) under a bivariate head output
/// `raw` (n x 6K), both in head units. Returns n x 1.
pub fn bivariate_loglik<T: Real>(g: &mut Graph<T>, raw: Var, target: Var) -> Result<Var> {
    let k = g.value(raw).cols() / 6;
    let logits = g.slice_cols(raw, 0, k)?;
    let mx = g.slice_cols(raw, k, k)?;
    let my = g.slice_cols(raw, 2 * k, k)?;
    let lsx_raw = g.slice_cols(raw, 3 * k, k)?;
    let lsy_raw = g.slice_cols(raw, 4 * k, k)?;
    let rho_raw = g.slice_cols(raw, 5 * k, k)?;
    let lsx = g.clamp(lsx_raw, LOG_SCALE_RANGE.0, LOG_SCALE_RANGE.1);
    let lsy = g.clamp(lsy_raw, LOG_SCALE_RANGE.0, LOG_SCALE_RANGE.1);
    let rho_t = g.tanh(rho_raw);
    let rho = g.scale(rho_t, RHO_LIMIT);

    let tx = g.slice_cols(target, 0, 1)?;
    let ty = g.slice_cols(target, 1, 1)?;
    let standardize = |g: &mut Graph<T>, t: Var, m: Var, ls: Var| -> Result<Var> {
        let neg = g.scale(ls, -1.0);
        let inv = g.exp(neg);
        let d = g.sub(t, m)?;
        g.mul(d, inv)
    };
    let dx = standardize(g, tx, mx, lsx)?;
    let dy = standardize(g, ty, my, lsy)?;

    let dx2 = g.square(dx);
    let dy2 = g.square(dy);
    let dxy = g.mul(dx, dy)?;
    let cross = g.mul(rho, dxy)?;
    let cross = g.scale(cross, -2.0);
    let q = g.add(dx2, dy2)?;
    let q = g.add(q, cross)?;

    let r2 = g.square(rho);
    let neg_r2 = g.scale(r2, -1.0);
    let one_m = g.add_scalar(neg_r2, 1.0);
    let log_one_m = g.log(one_m);
    let neg_log = g.scale(log_one_m, -1.0);
    let inv_one_m = g.exp(neg_log);
    let q = g.mul(q, inv_one_m)?;

    let quad = g.scale(q, -0.5);
    let half_log = g.scale(log_one_m, -0.5);
    let comp = g.add(quad, half_log)?;
    let comp = g.sub(comp, lsx)?;
    let comp = g.sub(comp, lsy)?;
    let comp = g.add_scalar(comp, -(2.0 * PI).ln());

    let lw = g.log_softmax(logits);
    let joint = g.add(lw, comp)?;
    Ok(g.logsumexp(joint))
}
