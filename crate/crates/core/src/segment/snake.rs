use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rustfft::{num_complex::Complex64, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::SegmentError;
use crate::model::{polygon_signed_area, Contour};
use crate::raster::{gaussian_blur, gradient};

/// Active contour parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnakeParams {
    /// Elasticity (first-derivative) weight.
    pub alpha: f64,
    /// Rigidity (second-derivative) weight.
    pub beta: f64,
    /// Implicit time step.
    pub gamma: f64,
    pub max_iters: usize,
    /// Stop once the largest point displacement of one step falls below this (px).
    pub convergence_tol: f64,
    pub n_points: usize,
    /// Per-iteration displacement cap (px), applied through `tanh`.
    pub max_px_move: f64,
    /// Weight of the edge attraction term.
    pub w_edge: f64,
}

impl Default for SnakeParams {
    fn default() -> Self {
        Self {
            alpha: 0.015,
            beta: 10.0,
            gamma: 0.001,
            max_iters: 2500,
            convergence_tol: 0.02,
            n_points: 200,
            max_px_move: 1.0,
            w_edge: 1.0,
        }
    }
}

impl SnakeParams {
    pub fn validate(&self) -> Result<(), SegmentError> {
        let bad = |m: &str| Err(SegmentError::InvalidConfig(format!("snake: {m}")));
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be >= 0");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be > 0");
        }
        if self.n_points < 4 {
            return bad("n_points must be >= 4");
        }
        if !(self.max_px_move > 0.0 && self.convergence_tol >= 0.0) {
            return bad("max_px_move must be > 0 and convergence_tol >= 0");
        }
        Ok(())
    }
}

/// External force field: the gradient of the smoothed edge magnitude, i.e.
/// minus the gradient of the image energy `−|∇(G_σ * I)|`.
#[derive(Debug, Clone)]
pub struct EdgeField {
    smoothed: Array2<f64>,
    fx: Array2<f64>,
    fy: Array2<f64>,
}

impl EdgeField {
    /// Builds the field from an 8-bit image normalized to `[0, 1]`.
    pub fn from_image(img: ArrayView2<'_, u8>, sigma: f64) -> Self {
        let norm = img.mapv(|v| v as f64 / 255.0);
        Self::from_normalized(gaussian_blur(norm.view(), sigma))
    }

    fn from_normalized(smoothed: Array2<f64>) -> Self {
        let (gx, gy) = gradient(smoothed.view());
        let mag = ndarray::Zip::from(&gx).and(&gy).map_collect(|a, b| a.hypot(*b));
        let (fx, fy) = gradient(mag.view());
        Self { smoothed, fx, fy }
    }

    /// Gaussian-smoothed image in `[0, 1]`.
    pub fn smoothed(&self) -> &Array2<f64> {
        &self.smoothed
    }

    pub fn dim(&self) -> (usize, usize) {
        self.fx.dim()
    }

    fn force(&self, x: f64, y: f64) -> (f64, f64) {
        (bilinear(&self.fx, x, y), bilinear(&self.fy, x, y))
    }
}

/// Bilinear interpolation with array index coordinates (`x` = column).
fn bilinear(a: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = a.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (tx, ty) = (x - x0 as f64, y - y0 as f64);
    let top = a[[y0, x0]] * (1.0 - tx) + a[[y0, x1]] * tx;
    let bot = a[[y1, x0]] * (1.0 - tx) + a[[y1, x1]] * tx;
    top * (1.0 - ty) + bot * ty
}

/// Resamples a closed polyline to `n` points equally spaced in arc length,
/// starting at the first vertex.
fn resample_closed(xs: &[f64], ys: &[f64], n: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let m = xs.len();
    let mut cum = Vec::with_capacity(m + 1);
    cum.push(0.0);
    for i in 0..m {
        let j = (i + 1) % m;
        let d = (xs[j] - xs[i]).hypot(ys[j] - ys[i]);
        cum.push(cum[i] + d);
    }
    let total = cum[m];
    if !(total.is_finite() && total > 1e-9) {
        return None;
    }
    let mut ox = Vec::with_capacity(n);
    let mut oy = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let s = total * k as f64 / n as f64;
        while seg + 1 < m && cum[seg + 1] <= s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        let j = (seg + 1) % m;
        ox.push(xs[seg] + t * (xs[j] - xs[seg]));
        oy.push(ys[seg] + t * (ys[j] - ys[seg]));
    }
    Some((ox, oy))
}

/// Semi-implicit snake evolution on a closed chain of `n_points` points.
///
/// The chain lives in [`Contour`] coordinates; a point `(x, y)` samples the
/// force field at array position `(x − 0.5, y − 0.5)`.
pub struct Snake<'a> {
    field: &'a EdgeField,
    params: SnakeParams,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    /// Eigenvalues of the circulant internal-energy matrix `A`.
    eig: Vec<f64>,
    /// Current implicit step parameter; starts at `params.gamma`.
    gamma: f64,
    xs: Vec<f64>,
    ys: Vec<f64>,
    iterations: usize,
}

impl<'a> Snake<'a> {
    pub fn new(field: &'a EdgeField, init: &Contour, params: &SnakeParams) -> Result<Self, SegmentError> {
        params.validate()?;
        if init.len() < 4 {
            return Err(SegmentError::TooFewPoints(init.len()));
        }
        let n = params.n_points;
        let px: Vec<f64> = init.points().iter().map(|p| p[0]).collect();
        let py: Vec<f64> = init.points().iter().map(|p| p[1]).collect();
        let (xs, ys) = if px.len() == n {
            (px, py)
        } else {
            resample_closed(&px, &py, n).ok_or(SegmentError::Collapsed)?
        };
        let mut planner = FftPlanner::new();
        let eig = (0..n)
            .map(|k| {
                let c = 2.0 - 2.0 * (std::f64::consts::TAU * k as f64 / n as f64).cos();
                params.alpha * c + params.beta * c * c
            })
            .collect();
        Ok(Self {
            field,
            params: params.clone(),
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
            eig,
            xs,
            ys,
            gamma: params.gamma,
            iterations: 0,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn set_gamma(&mut self, gamma: f64) {
        self.gamma = gamma;
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Current chain as contour-space points.
    pub fn points(&self) -> Vec<[f64; 2]> {
        self.xs.iter().zip(&self.ys).map(|(&x, &y)| [x, y]).collect()
    }

    pub fn area(&self) -> f64 {
        polygon_signed_area(&self.points()).abs()
    }

    /// Solves `(A + γI) x' = γx + f(x)` for both coordinates, moves each
    /// point by `max_px_move · tanh(x' − x)` and reparametrizes by arc length.
    /// Returns the largest displacement of the step; the chain is left
    /// unchanged when it falls below the convergence tolerance.
    pub fn step(&mut self) -> Result<f64, SegmentError> {
        let n = self.params.n_points;
        let (h, w) = self.field.dim();
        let mut bx: Vec<Complex64> = Vec::with_capacity(n);
        let mut by: Vec<Complex64> = Vec::with_capacity(n);
        for i in 0..n {
            let (fx, fy) = self.field.force(self.xs[i] - 0.5, self.ys[i] - 0.5);
            bx.push(Complex64::new(self.gamma * self.xs[i] + self.params.w_edge * fx, 0.0));
            by.push(Complex64::new(self.gamma * self.ys[i] + self.params.w_edge * fy, 0.0));
        }
        for buf in [&mut bx, &mut by] {
            self.fft.process(buf);
            for (v, &e) in buf.iter_mut().zip(&self.eig) {
                *v /= (e + self.gamma) * n as f64;
            }
            self.ifft.process(buf);
        }
        let mut nx = Vec::with_capacity(n);
        let mut ny = Vec::with_capacity(n);
        let mut max_disp: f64 = 0.0;
        for i in 0..n {
            let dx = self.params.max_px_move * (bx[i].re - self.xs[i]).tanh();
            let dy = self.params.max_px_move * (by[i].re - self.ys[i]).tanh();
            if !(dx.is_finite() && dy.is_finite()) {
                return Err(SegmentError::NonFiniteEnergy);
            }
            max_disp = max_disp.max(dx.hypot(dy));
            nx.push((self.xs[i] + dx).clamp(0.5, w as f64 - 0.5));
            ny.push((self.ys[i] + dy).clamp(0.5, h as f64 - 0.5));
        }
        if max_disp < self.params.convergence_tol {
            return Ok(max_disp);
        }
        let (rx, ry) = resample_closed(&nx, &ny, n).ok_or(SegmentError::Collapsed)?;
        self.xs = rx;
        self.ys = ry;
        self.iterations += 1;
        Ok(max_disp)
    }

    pub fn into_contour(self) -> Result<Contour, SegmentError> {
        Ok(Contour::new(self.points())?)
    }
}

/// Result of [`active_contour`].
#[derive(Debug, Clone)]
pub struct SnakeOutcome {
    pub contour: Contour,
    pub iterations: usize,
    pub converged: bool,
}

/// Number of past chain states checked for a revisit.
const HISTORY: usize = 10;

/// Revisit distance as a fraction of `max_px_move`.
const REVISIT_FRACTION: f64 = 0.25;

/// An evolved chain ending this close to its start (in multiples of the
/// convergence tolerance) means the start was already converged.
const SETTLE_FACTOR: f64 = 5.0;

fn max_point_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
        .fold(0.0, f64::max)
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Symmetric largest distance from the vertices of one closed chain to the
/// other chain; insensitive to points sliding along the curve.
fn shape_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let directed = |from: &[[f64; 2]], to: &[[f64; 2]]| {
        from.iter()
            .map(|&p| {
                (0..to.len())
                    .map(|i| point_segment_distance(p, to[i], to[(i + 1) % to.len()]))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Evolves `init` until one step moves no point by more than
/// `convergence_tol`, or `max_iters` steps have run.
///
/// With a small `gamma` the `tanh` step saturates near an edge and the chain
/// bounces around the optimum; whenever it comes back within a fraction of a
/// step of one of its last few states, `gamma` is doubled (a shorter time
/// step).
///
/// If the converged chain's shape is within a few tolerances of the
/// (resampled) initial chain, the initial chain is returned as is, so a converged
/// result fed back in on the same image comes back unchanged.
pub fn active_contour(field: &EdgeField, init: &Contour, params: &SnakeParams) -> Result<SnakeOutcome, SegmentError> {
    let mut snake = Snake::new(field, init, params)?;
    let start = snake.points();
    let mut history: VecDeque<Vec<[f64; 2]>> = VecDeque::with_capacity(HISTORY + 1);
    history.push_back(start.clone());
    let mut converged = false;
    for _ in 0..params.max_iters {
        if snake.step()? < params.convergence_tol {
            converged = true;
            break;
        }
        if snake.area() < 1.0 {
            return Err(SegmentError::Collapsed);
        }
        let current = snake.points();
        if history
            .iter()
            .any(|past| max_point_distance(past, &current) < REVISIT_FRACTION * params.max_px_move)
        {
            snake.set_gamma(2.0 * snake.gamma());
            history.clear();
        }
        if history.len() == HISTORY {
            history.pop_front();
        }
        history.push_back(current);
    }
    let iterations = snake.iterations();
    let end = snake.points();
    let points = if converged && shape_distance(&start, &end) < SETTLE_FACTOR * params.convergence_tol {
        start
    } else {
        end
    };
    Ok(SnakeOutcome {
        contour: Contour::new(points)?,
        iterations,
        converged,
    })
}
