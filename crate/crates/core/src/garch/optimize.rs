//! Unconstrained quasi-Newton minimization with numeric gradients.

/// Stopping rules for [`bfgs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once every gradient component is below this in magnitude.
    pub gtol: f64,
    /// Stop once three successive iterations each improve the objective by
    /// less than this.
    pub ftol: f64,
    /// Relative finite-difference step.
    pub step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, gtol: 1e-4, ftol: 1e-8, step: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    /// True when the gradient test, not the iteration cap, ended the run.
    pub gradient_converged: bool,
}

/// Central-difference gradient with step `step * max(1, |x_i|)`.
/// Non-finite objective values on either side fall back to a one-sided
/// difference, and to zero if both sides fail.
pub fn numeric_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64, step: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * x[i].abs().max(1.0);
            work[i] = x[i] + h;
            let up = f(&work);
            work[i] = x[i] - h;
            let down = f(&work);
            work[i] = x[i];
            match (up.is_finite(), down.is_finite()) {
                (true, true) => (up - down) / (2.0 * h),
                (true, false) => (up - fx) / h,
                (false, true) => (fx - down) / h,
                (false, false) => 0.0,
            }
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Minimizes `f` from `x0` with BFGS and an Armijo backtracking line search.
/// `f` may return a non-finite value to signal an infeasible point.
/// Returns `None` when `f(x0)` is not finite.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: &BfgsOptions) -> Option<BfgsResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return None;
    }
    let mut g = numeric_gradient(&f, &x, fx, opts.step);
    let mut hinv = identity(n);
    let mut small_steps = 0;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if max_abs(&g) < opts.gtol {
            return Some(BfgsResult { x, f: fx, grad: g, iterations, gradient_converged: true });
        }
        iterations += 1;
        let mut d: Vec<f64> = hinv.iter().map(|row| -dot(row, &g)).collect();
        let mut slope = dot(&d, &g);
        if slope.is_nan() || slope >= 0.0 {
            hinv = identity(n);
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        // keep the first trial step bounded on the transformed scale
        let dmax = max_abs(&d);
        let mut t = if dmax > 5.0 { 5.0 / dmax } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if hinv == identity(n) {
                break;
            }
            hinv = identity(n);
            continue;
        };
        let gn = numeric_gradient(&f, &xn, fnew, opts.step);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            let hy: Vec<f64> = hinv.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
        let improvement = fx - fnew;
        x = xn;
        g = gn;
        fx = fnew;
        if improvement < opts.ftol {
            small_steps += 1;
            if small_steps >= 3 {
                break;
            }
        } else {
            small_steps = 0;
        }
    }
    let gradient_converged = max_abs(&g) < opts.gtol;
    Some(BfgsResult { x, f: fx, grad: g, iterations, gradient_converged })
}
