//! Spreading window for the nonuniform transforms.
//!
//! The window is the exponential of a semicircle,
//! `phi(z) = exp(beta (sqrt(1 - z^2) - 1))` on `[-1, 1]`, zero outside.
//! Its Fourier transform is flat out to `|xi| ~ beta` and then drops to a
//! floor of roughly `e^{-beta}`, which is what makes a width-`w` window
//! with `beta ~ 2.3 w` deliver about one decimal digit per unit of width
//! at oversampling factor 2.

use super::TransformError;

/// Oversampling factor used by every plan.
pub(crate) const OVERSAMPLING: usize = 2;

const QUADRATURE_NODES: usize = 80;

/// Window of `width` grid points with shape parameter `beta`, plus a fixed
/// quadrature rule for its Fourier transform.
pub struct SpreadKernel {
    width: usize,
    beta: f64,
    /// Quadrature nodes on [0, 1] ...
    nodes: Vec<f64>,
    /// ... with weights premultiplied by the window values there, so that
    /// `sum_i vals[i] * cos(xi * nodes[i])` is the Fourier transform.
    vals: Vec<f64>,
}

impl SpreadKernel {
    /// Picks the window width for a requested relative accuracy. One grid
    /// point of width buys roughly one decimal digit; two extra points are
    /// margin so downstream stages can consume the stated tolerance whole.
    pub fn for_tolerance(tol: f64) -> Result<Self, TransformError> {
        if !(1e-15..=1e-1).contains(&tol) {
            return Err(TransformError::InvalidTolerance(tol));
        }
        let digits = (1.0 / tol).log10().ceil() as usize;
        let width = (digits + 3).clamp(4, 16);
        Ok(Self::with_width(width))
    }

    pub(crate) fn with_width(width: usize) -> Self {
        let beta = 2.30 * width as f64;
        let (xs, ws) = gauss_legendre(QUADRATURE_NODES);
        // Map [-1, 1] to [0, 1]; the Jacobian 1/2 cancels the factor 2
        // from folding the even integrand onto the half interval.
        let mut nodes = Vec::with_capacity(QUADRATURE_NODES);
        let mut vals = Vec::with_capacity(QUADRATURE_NODES);
        for (x, w) in xs.iter().zip(&ws) {
            let z = 0.5 * (x + 1.0);
            nodes.push(z);
            vals.push(w * eval_window(beta, z));
        }
        SpreadKernel { width, beta, nodes, vals }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Window value at offset `delta` in grid units, `|delta| <= width/2`.
    #[inline]
    pub fn eval(&self, delta: f64) -> f64 {
        eval_window(self.beta, 2.0 * delta / self.width as f64)
    }

    /// Fills `out` (length `width`) with window values at offsets
    /// `start - p, start - p + 1, ...` for the spreading point `p`, where
    /// `start = ceil(p - width/2)` is returned.
    #[inline]
    pub fn taps(&self, p: f64, out: &mut [f64]) -> i64 {
        let half = self.width as f64 / 2.0;
        let start = (p - half).ceil();
        for (t, o) in out.iter_mut().enumerate() {
            *o = self.eval(start + t as f64 - p);
        }
        start as i64
    }

    /// Fourier transform `int_{-1}^{1} phi(z) e^{-i xi z} dz` (real and
    /// even in `xi`).
    pub fn fourier(&self, xi: f64) -> f64 {
        let mut acc = 0.0;
        for (z, v) in self.nodes.iter().zip(&self.vals) {
            acc += v * (xi * z).cos();
        }
        acc
    }

    /// Fourier transform at the uniform arguments `xi = m * step` for
    /// `m = 0..count`. Evaluated term by term: a cosine recurrence over `m`
    /// drifts by `m * eps`, which the small band-edge values of the
    /// transform amplify past 1e-13 relative — too coarse for the
    /// tightest transform tolerances.
    pub fn fourier_grid(&self, step: f64, count: usize) -> Vec<f64> {
        (0..count).map(|m| self.fourier(m as f64 * step)).collect()
    }
}

#[inline]
fn eval_window(beta: f64, z: f64) -> f64 {
    let t = 1.0 - z * z;
    if t <= 0.0 {
        if t < -1e-9 {
            return 0.0;
        }
        // Grazing the support edge from rounding: the window is e^{-beta}.
        return (-beta).exp();
    }
    (beta * (t.sqrt() - 1.0)).exp()
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        ws[i] = w;
        xs[n - 1 - i] = x;
        ws[n - 1 - i] = w;
    }
    (xs, ws)
}
