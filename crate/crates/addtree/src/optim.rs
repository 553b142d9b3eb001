//! Box-constrained quasi-Newton minimization.
//!
//! A limited-memory BFGS iteration with gradient projection onto the box:
//! search directions come from the standard two-loop recursion, components
//! that would push an active bound outward are zeroed, and an Armijo
//! backtracking line search walks along the projected path. Iterates never
//! leave the box. Falls back to projected steepest descent whenever the
//! quasi-Newton direction stops being a descent direction.
//!
//! Everything here is deterministic: the same inputs produce the same
//! iterates, which the fitting and acquisition code rely on for
//! reproducible runs.

/// Inclusive lower/upper bounds per coordinate.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(
            lower.iter().zip(&upper).all(|(l, u)| l <= u),
            "lower bounds must not exceed upper bounds"
        );
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }
}

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iters: usize,
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Convergence threshold on the infinity norm of the projected gradient.
    pub grad_tol: f64,
    /// Relative objective-decrease threshold.
    pub f_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub max_backtracks: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iters: 120,
            memory: 8,
            grad_tol: 1e-8,
            f_tol: 1e-12,
            c1: 1e-4,
            max_backtracks: 40,
        }
    }
}

/// Result of a minimization run. `line_search_failed` marks runs whose very
/// first line search could not find any decrease; callers treat those as
/// failed restarts.
#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
}

/// Minimize `f` (value and gradient) over the box starting from `x0`.
pub fn minimize<F>(mut f: F, x0: &[f64], bounds: &Bounds, opts: &OptimOptions) -> OptimOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    assert_eq!(x0.len(), bounds.dim());
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.clamp(&mut x);
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    let mut s_mem: Vec<Vec<f64>> = Vec::new();
    let mut y_mem: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;
    let mut line_search_failed = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iters {
        if projected_gradient_norm(&x, &g, bounds) < opts.grad_tol {
            converged = true;
            break;
        }

        let mut d = lbfgs_direction(&g, &s_mem, &y_mem);
        // Zero components that push an active bound outward.
        for i in 0..n {
            if (x[i] <= bounds.lower[i] && d[i] < 0.0) || (x[i] >= bounds.upper[i] && d[i] > 0.0) {
                d[i] = 0.0;
            }
        }
        if dot(&d, &g) >= 0.0 {
            // Not a descent direction; restart from projected steepest descent.
            s_mem.clear();
            y_mem.clear();
            for i in 0..n {
                d[i] = -g[i];
                if (x[i] <= bounds.lower[i] && d[i] < 0.0)
                    || (x[i] >= bounds.upper[i] && d[i] > 0.0)
                {
                    d[i] = 0.0;
                }
            }
            if dot(&d, &g) >= 0.0 {
                converged = true; // no feasible descent direction left
                break;
            }
        }

        // Armijo backtracking along the projected path.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let mut xt = vec![0.0; n];
            for i in 0..n {
                xt[i] = (x[i] + alpha * d[i]).clamp(bounds.lower[i], bounds.upper[i]);
            }
            let step: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
            if step.iter().all(|&s| s == 0.0) {
                break;
            }
            let (ft, gt) = f(&xt);
            evaluations += 1;
            if ft <= fx + opts.c1 * dot(&g, &step) {
                accepted = Some((xt, ft, gt, step));
                break;
            }
            alpha *= 0.5;
        }

        let Some((xt, ft, gt, step)) = accepted else {
            if iterations == 0 {
                line_search_failed = true;
            }
            break;
        };

        let yv: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
        let sy = dot(&step, &yv);
        if sy > 1e-12 * norm(&step) * norm(&yv) {
            s_mem.push(step);
            y_mem.push(yv);
            if s_mem.len() > opts.memory {
                s_mem.remove(0);
                y_mem.remove(0);
            }
        }

        let df = fx - ft;
        x = xt;
        fx = ft;
        g = gt;
        iterations += 1;
        if df.abs() <= opts.f_tol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    OptimOutcome {
        x,
        f: fx,
        iterations,
        evaluations,
        converged,
        line_search_failed,
    }
}

/// Minimize a gradient-free objective using central finite differences for
/// the gradient. Probe points are clamped into the box, so the objective is
/// never evaluated outside it.
pub fn minimize_fd<F>(mut f: F, x0: &[f64], bounds: &Bounds, opts: &OptimOptions) -> OptimOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let b = bounds.clone();
    let wrapped = move |x: &[f64]| {
        let fx = f(x);
        let mut grad = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let h = 1e-6 * x[i].abs().max(1.0);
            let hi = (x[i] + h).min(b.upper[i]);
            let lo = (x[i] - h).max(b.lower[i]);
            if hi <= lo {
                grad[i] = 0.0;
                continue;
            }
            xp[i] = hi;
            let fp = f(&xp);
            xp[i] = lo;
            let fm = f(&xp);
            xp[i] = x[i];
            grad[i] = (fp - fm) / (hi - lo);
        }
        (fx, grad)
    };
    minimize(wrapped, x0, bounds, opts)
}

/// Polish a near-optimal iterate with a few damped Newton steps on the free
/// subspace (coordinates not pinned at a bound by the gradient), using a
/// central finite-difference Hessian of the supplied gradient. Quadratic
/// local convergence pushes the projected gradient to `grad_tol`, which makes
/// termination points reproducible to machine level across reruns whose
/// objectives differ only by rounding noise.
pub fn newton_polish<F>(
    mut f: F,
    x0: &[f64],
    bounds: &Bounds,
    grad_tol: f64,
    max_steps: usize,
) -> OptimOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    use nalgebra::{Cholesky, DMatrix, DVector};

    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.clamp(&mut x);
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    let mut iterations = 0;
    let mut converged = projected_gradient_norm(&x, &g, bounds) < grad_tol;

    for _ in 0..max_steps {
        if converged {
            break;
        }
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                !((x[i] <= bounds.lower[i] && g[i] > 0.0)
                    || (x[i] >= bounds.upper[i] && g[i] < 0.0))
            })
            .collect();
        if free.is_empty() {
            converged = true;
            break;
        }
        let m = free.len();
        let mut hess = DMatrix::zeros(m, m);
        for (col, &j) in free.iter().enumerate() {
            let h = 1e-5 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let (_, gp) = f(&xp);
            xp[j] = x[j] - h;
            let (_, gm) = f(&xp);
            evaluations += 2;
            for (row, &i) in free.iter().enumerate() {
                hess[(row, col)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        hess = (hess.clone() + hess.transpose()) * 0.5;
        let g_free = DVector::from_iterator(m, free.iter().map(|&i| g[i]));

        // Damp until the (FD) Hessian factorizes.
        let mut damping = 0.0;
        let delta = loop {
            let mut damped = hess.clone();
            for i in 0..m {
                damped[(i, i)] += damping;
            }
            if let Some(chol) = Cholesky::new(damped) {
                break chol.solve(&(-&g_free));
            }
            damping = if damping == 0.0 { 1e-8 } else { damping * 100.0 };
            if damping > 1e6 {
                break DVector::zeros(m);
            }
        };
        if delta.iter().all(|&d| d == 0.0) {
            break;
        }

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let mut xt = x.clone();
            for (k, &i) in free.iter().enumerate() {
                xt[i] = (x[i] + scale * delta[k]).clamp(bounds.lower[i], bounds.upper[i]);
            }
            let (ft, gt) = f(&xt);
            evaluations += 1;
            if ft <= fx {
                x = xt;
                fx = ft;
                g = gt;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        iterations += 1;
        converged = projected_gradient_norm(&x, &g, bounds) < grad_tol;
    }

    OptimOutcome {
        x,
        f: fx,
        iterations,
        evaluations,
        converged,
        line_search_failed: false,
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &Bounds) -> f64 {
    let mut norm: f64 = 0.0;
    for i in 0..x.len() {
        let target = (x[i] - g[i]).clamp(bounds.lower[i], bounds.upper[i]);
        norm = norm.max((x[i] - target).abs());
    }
    norm
}

fn lbfgs_direction(g: &[f64], s_mem: &[Vec<f64>], y_mem: &[Vec<f64>]) -> Vec<f64> {
    let m = s_mem.len();
    let mut q = g.to_vec();
    if m == 0 {
        for v in q.iter_mut() {
            *v = -*v;
        }
        return q;
    }
    let mut alphas = vec![0.0; m];
    let mut rhos = vec![0.0; m];
    for k in (0..m).rev() {
        rhos[k] = 1.0 / dot(&s_mem[k], &y_mem[k]);
        alphas[k] = rhos[k] * dot(&s_mem[k], &q);
        for i in 0..q.len() {
            q[i] -= alphas[k] * y_mem[k][i];
        }
    }
    let last = m - 1;
    let gamma = dot(&s_mem[last], &y_mem[last]) / dot(&y_mem[last], &y_mem[last]);
    for v in q.iter_mut() {
        *v *= gamma;
    }
    for k in 0..m {
        let beta = rhos[k] * dot(&y_mem[k], &q);
        for i in 0..q.len() {
            q[i] += s_mem[k][i] * (alphas[k] - beta);
        }
    }
    for v in q.iter_mut() {
        *v = -*v;
    }
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quadratic(center: Vec<f64>) -> impl FnMut(&[f64]) -> (f64, Vec<f64>) {
        move |x: &[f64]| {
            let f = x
                .iter()
                .zip(&center)
                .map(|(xi, ci)| (xi - ci) * (xi - ci))
                .sum();
            let g = x.iter().zip(&center).map(|(xi, ci)| 2.0 * (xi - ci)).collect();
            (f, g)
        }
    }

    #[test]
    fn finds_interior_minimum() {
        let bounds = Bounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
        let out = minimize(
            quadratic(vec![1.0, -2.0]),
            &[4.0, 4.0],
            &bounds,
            &OptimOptions::default(),
        );
        assert!(out.converged);
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(out.x[1], -2.0, epsilon = 1e-6);
    }

    #[test]
    fn minimum_outside_box_lands_on_bound() {
        let bounds = Bounds::new(vec![0.0], vec![1.0]);
        let out = minimize(quadratic(vec![3.0]), &[0.5], &bounds, &OptimOptions::default());
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rosenbrock_in_box() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let fx = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            (fx, g)
        };
        let bounds = Bounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]);
        let opts = OptimOptions {
            max_iters: 500,
            ..OptimOptions::default()
        };
        for start in [[-1.5, 1.5], [0.0, 0.0], [2.0, -2.0]] {
            let out = minimize(f, &start, &bounds, &opts);
            assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-4);
            assert_relative_eq!(out.x[1], 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn never_evaluates_outside_box() {
        let bounds = Bounds::new(vec![-1.0, 0.0], vec![1.0, 0.5]);
        let inner = bounds.clone();
        let mut q = quadratic(vec![10.0, -10.0]);
        let f = move |x: &[f64]| {
            assert!(inner.contains(x), "evaluated at {x:?}");
            q(x)
        };
        let out = minimize(f, &[0.9, 0.4], &bounds, &OptimOptions::default());
        assert!(bounds.contains(&out.x));
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(out.x[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fd_wrapper_matches_analytic() {
        let bounds = Bounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
        let mut q = quadratic(vec![1.0, -2.0]);
        let fd = minimize_fd(move |x| q(x).0, &[4.0, 4.0], &bounds, &OptimOptions::default());
        assert_relative_eq!(fd.x[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(fd.x[1], -2.0, epsilon = 1e-5);
    }

    #[test]
    fn deterministic_iterates() {
        let bounds = Bounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]);
        let run = || {
            minimize(
                |x| {
                    let f = (x[0] - 0.3).powi(4) + (x[1] + 0.7).powi(2) + x[0] * x[1] * 0.1;
                    let g = vec![
                        4.0 * (x[0] - 0.3).powi(3) + 0.1 * x[1],
                        2.0 * (x[1] + 0.7) + 0.1 * x[0],
                    ];
                    (f, g)
                },
                &[1.0, 1.0],
                &bounds,
                &OptimOptions::default(),
            )
        };
        let a = run();
        let b = run();
        assert_eq!(a.x, b.x);
        assert_eq!(a.f, b.f);
    }
}
