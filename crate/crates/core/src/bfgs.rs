//! Small dense BFGS minimiser with a backtracking Armijo line search.

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Relative change in the objective treated as stalled.
    pub ftol: f64,
    /// Gradient infinity-norm, relative to `max(1, |f|)`, treated as stationary.
    pub gtol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 1000,
            ftol: 1e-8,
            gtol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimise `f`, which returns the objective and its gradient. Non-finite
/// objective values are treated as infeasible and rejected by the line search.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    // inverse Hessian approximation, row-major
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    let mut first = true;
    let mut stalled = 0;
    let mut iterations = 0;
    let stationary = |fx: f64, g: &[f64]| inf_norm(g) <= opts.gtol * fx.abs().max(1.0);

    if !fx.is_finite() {
        return BfgsResult {
            x,
            f: fx,
            grad: g,
            iterations,
            converged: false,
        };
    }

    while iterations < opts.max_iter {
        if stationary(fx, &g) {
            return BfgsResult {
                x,
                f: fx,
                grad: g,
                iterations,
                converged: true,
            };
        }
        iterations += 1;

        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&d, &g);
        if slope >= 0.0 {
            // lost positive definiteness; restart from steepest descent
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            first = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let mut step = 1.0;
        if first {
            let norm = inf_norm(&d);
            if norm > 0.1 {
                step = 0.1 / norm;
            }
        }

        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            // line search exhausted: as good as we can get from here
            let converged = inf_norm(&g) <= 1e3 * opts.gtol * fx.abs().max(1.0);
            return BfgsResult {
                x,
                f: fx,
                grad: g,
                iterations,
                converged,
            };
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first {
                let scale = sy / dot(&y, &y);
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] = if i == j { scale } else { 0.0 };
                    }
                }
                first = false;
            }
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }

        let rel = (fx - f_new).abs() / fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if rel < opts.ftol {
            stalled += 1;
            if stalled >= 3 && inf_norm(&g) <= 1e3 * opts.gtol * fx.abs().max(1.0) {
                return BfgsResult {
                    x,
                    f: fx,
                    grad: g,
                    iterations,
                    converged: true,
                };
            }
        } else {
            stalled = 0;
        }
    }
    let converged = stationary(fx, &g);
    BfgsResult {
        x,
        f: fx,
        grad: g,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            (v, g)
        };
        let r = minimize(f, &[-1.2, 1.0], &BfgsOptions { gtol: 1e-10, ..Default::default() });
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_with_infeasible_region() {
        // minimum at 2 with f = inf for x > 3
        let f = |x: &[f64]| {
            if x[0] > 3.0 {
                (f64::INFINITY, vec![0.0])
            } else {
                ((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)])
            }
        };
        let r = minimize(f, &[-50.0], &BfgsOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 2.0).abs() < 1e-5);
    }
}
