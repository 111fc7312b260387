//! Augmented Lagrangian solver over box-constrained variables.
//!
//! Equality constraints carry classic multipliers; inequalities use the
//! positive-part (PHR) form, so the merit stays once differentiable. The
//! inner minimizer is a limited-memory BFGS with gradient projection onto
//! the box and an Armijo backtracking search along the projected path.

/// Per-variable box; infinite entries mean unbounded.
#[derive(Clone, Debug)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBounds {
    pub fn unbounded(n: usize) -> BoxBounds {
        BoxBounds { lo: vec![f64::NEG_INFINITY; n], hi: vec![f64::INFINITY; n] }
    }
    pub fn project(&self, z: &mut [f64]) {
        for (i, v) in z.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }
}

/// Problem interface: smooth objective, equality and inequality residual
/// vectors (feasible when zero / nonpositive), and weighted constraint
/// gradient accumulation.
pub trait AlProblem {
    fn dim(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn bounds(&self) -> &BoxBounds;
    fn objective(&self, z: &[f64]) -> f64;
    /// Overwrites `g` with the objective gradient.
    fn objective_grad(&self, z: &[f64], g: &mut [f64]);
    fn eval_eq(&self, z: &[f64], out: &mut [f64]);
    fn eval_ineq(&self, z: &[f64], out: &mut [f64]);
    /// Adds `sum_i coeff[i] * grad c_eq_i(z)` into `g`.
    fn accumulate_eq_grad(&self, z: &[f64], coeff: &[f64], g: &mut [f64]);
    /// Adds `sum_i coeff[i] * grad c_ineq_i(z)` into `g`.
    fn accumulate_ineq_grad(&self, z: &[f64], coeff: &[f64], g: &mut [f64]);
}

#[derive(Clone, Copy, Debug)]
pub struct SolveConfig {
    /// Total inner-iteration budget.
    pub max_iter: usize,
    /// Constraint violation target (infinity norm).
    pub feas_tol: f64,
    /// Projected-gradient target for the final stationarity test.
    pub opt_tol: f64,
}

impl Default for SolveConfig {
    fn default() -> SolveConfig {
        SolveConfig { max_iter: 20000, feas_tol: 1e-6, opt_tol: 1e-3 }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub z: Vec<f64>,
    /// Inner iterations spent in total.
    pub iterations: usize,
    /// Projected-gradient infinity norm of the final merit.
    pub first_order: f64,
    /// Both tolerances met within the budget.
    pub converged: bool,
    /// Budget ran out first.
    pub out_of_iterations: bool,
}

struct Merit<'a, P: AlProblem> {
    p: &'a P,
    lambda: Vec<f64>,
    sigma: Vec<f64>,
    mu: f64,
    c_eq: Vec<f64>,
    c_in: Vec<f64>,
}

impl<'a, P: AlProblem> Merit<'a, P> {
    fn value(&mut self, z: &[f64]) -> f64 {
        let mut v = self.p.objective(z);
        self.p.eval_eq(z, &mut self.c_eq);
        self.p.eval_ineq(z, &mut self.c_in);
        for (c, l) in self.c_eq.iter().zip(&self.lambda) {
            v += l * c + 0.5 * self.mu * c * c;
        }
        for (c, s) in self.c_in.iter().zip(&self.sigma) {
            let t = (s + self.mu * c).max(0.0);
            v += (t * t - s * s) / (2.0 * self.mu);
        }
        v
    }

    /// Gradient at `z`; reuses the residuals computed by `value`
    /// only if called right after it on the same point, so recompute.
    fn grad(&mut self, z: &[f64], g: &mut [f64]) {
        self.p.objective_grad(z, g);
        self.p.eval_eq(z, &mut self.c_eq);
        self.p.eval_ineq(z, &mut self.c_in);
        let coeff_eq: Vec<f64> = self
            .c_eq
            .iter()
            .zip(&self.lambda)
            .map(|(c, l)| l + self.mu * c)
            .collect();
        let coeff_in: Vec<f64> = self
            .c_in
            .iter()
            .zip(&self.sigma)
            .map(|(c, s)| (s + self.mu * c).max(0.0))
            .collect();
        self.p.accumulate_eq_grad(z, &coeff_eq, g);
        self.p.accumulate_ineq_grad(z, &coeff_in, g);
    }
}

fn violation(c_eq: &[f64], c_in: &[f64]) -> f64 {
    let e = c_eq.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let i = c_in.iter().fold(0.0f64, |a, c| a.max(c.max(0.0)));
    e.max(i)
}

fn projected_gradient_norm(z: &[f64], g: &[f64], b: &BoxBounds) -> f64 {
    let mut n = 0.0f64;
    for i in 0..z.len() {
        let step = (z[i] - g[i]).clamp(b.lo[i], b.hi[i]) - z[i];
        n = n.max(step.abs());
    }
    n
}

/// Inner loop: minimize the merit over the box from `z`, stopping at
/// projected-gradient tolerance `tol` or after `budget` iterations.
/// Returns iterations spent.
fn lbfgs_inner<P: AlProblem>(
    merit: &mut Merit<P>,
    z: &mut Vec<f64>,
    tol: f64,
    budget: usize,
) -> usize {
    let n = z.len();
    let bounds = merit.p.bounds();
    let m = 20usize;
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut g = vec![0.0; n];
    let mut fz = merit.value(z);
    merit.grad(z, &mut g);
    let mut iters = 0;
    while iters < budget {
        if projected_gradient_norm(z, &g, bounds) <= tol {
            break;
        }
        iters += 1;
        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alpha = vec![0.0; hist.len()];
        for (i, (s, y, rho)) in hist.iter().enumerate().rev() {
            let a = rho * s.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
            alpha[i] = a;
            for (dj, yj) in d.iter_mut().zip(y) {
                *dj -= a * yj;
            }
        }
        if let Some((s, y, _)) = hist.last() {
            let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
            let yy: f64 = y.iter().map(|v| v * v).sum();
            if yy > 0.0 {
                let gamma = sy / yy;
                for dj in d.iter_mut() {
                    *dj *= gamma;
                }
            }
        }
        for (i, (s, y, rho)) in hist.iter().enumerate() {
            let b = rho * y.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
            for (dj, sj) in d.iter_mut().zip(s) {
                *dj += (alpha[i] - b) * sj;
            }
        }
        // Descent safeguard.
        let dg: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(dg < 0.0) {
            d = g.iter().map(|v| -v).collect();
            hist.clear();
        }
        // Backtracking along the projected path.
        let mut step = 1.0f64;
        let mut accepted = false;
        let mut z_new = vec![0.0; n];
        let mut f_new = fz;
        for _ in 0..50 {
            for i in 0..n {
                z_new[i] = (z[i] + step * d[i]).clamp(bounds.lo[i], bounds.hi[i]);
            }
            let pred: f64 = g.iter().zip(&z_new).zip(z.iter()).map(|((gi, zn), zo)| gi * (zn - zo)).sum();
            if pred >= 0.0 {
                // Projection killed the direction at this scale.
                step *= 0.5;
                continue;
            }
            f_new = merit.value(&z_new);
            if f_new <= fz + 1e-4 * pred {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // A stale quasi-Newton direction can defeat the line search
            // outright; retry the iteration as plain steepest descent.
            if !hist.is_empty() {
                hist.clear();
                continue;
            }
            break;
        }
        let mut g_new = vec![0.0; n];
        merit.grad(&z_new, &mut g_new);
        let s: Vec<f64> = z_new.iter().zip(z.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sn: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let yn: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * sn * yn {
            if hist.len() == m {
                hist.remove(0);
            }
            hist.push((s, y, 1.0 / sy));
        }
        *z = z_new;
        fz = f_new;
        g = g_new;
    }
    iters
}

pub fn solve<P: AlProblem>(p: &P, z0: Vec<f64>, cfg: &SolveConfig) -> SolveResult {
    let mut z = z0;
    debug_assert_eq!(z.len(), p.dim());
    p.bounds().project(&mut z);
    let mut merit = Merit {
        p,
        lambda: vec![0.0; p.n_eq()],
        sigma: vec![0.0; p.n_ineq()],
        mu: 10.0,
        c_eq: vec![0.0; p.n_eq()],
        c_in: vec![0.0; p.n_ineq()],
    };
    let mut iterations = 0usize;
    let mut viol_prev = f64::INFINITY;
    let mut first_order = f64::INFINITY;
    let mut converged = false;
    // Inner stationarity target, tightened as the multipliers settle.
    let mut omega = 1e-2f64.max(cfg.opt_tol);
    for _ in 0..100 {
        let remaining = cfg.max_iter.saturating_sub(iterations);
        if remaining == 0 {
            break;
        }
        let spent = lbfgs_inner(&mut merit, &mut z, omega, remaining.min(2000));
        iterations += spent;

        merit.p.eval_eq(&z, &mut merit.c_eq);
        merit.p.eval_ineq(&z, &mut merit.c_in);
        let viol = violation(&merit.c_eq, &merit.c_in);
        let mut g = vec![0.0; z.len()];
        merit.grad(&z, &mut g);
        first_order = projected_gradient_norm(&z, &g, merit.p.bounds());
        if viol <= cfg.feas_tol && first_order <= cfg.opt_tol {
            converged = true;
            break;
        }
        if viol <= 0.25 * viol_prev || viol <= cfg.feas_tol {
            for (l, c) in merit.lambda.iter_mut().zip(&merit.c_eq) {
                *l += merit.mu * c;
            }
            for (s, c) in merit.sigma.iter_mut().zip(&merit.c_in) {
                *s = (*s + merit.mu * c).max(0.0);
            }
            viol_prev = viol.max(cfg.feas_tol);
            omega = (omega * 0.1).max(cfg.opt_tol);
        } else {
            merit.mu = (merit.mu * 10.0).min(1e10);
            omega = (omega * 0.5).max(cfg.opt_tol);
        }
    }
    SolveResult {
        z,
        iterations,
        first_order,
        converged,
        out_of_iterations: !converged && iterations >= cfg.max_iter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        bounds: BoxBounds,
    }

    impl AlProblem for Quadratic {
        fn dim(&self) -> usize {
            2
        }
        fn n_eq(&self) -> usize {
            1
        }
        fn n_ineq(&self) -> usize {
            1
        }
        fn bounds(&self) -> &BoxBounds {
            &self.bounds
        }
        fn objective(&self, z: &[f64]) -> f64 {
            z[0] * z[0] + 2.0 * z[1] * z[1]
        }
        fn objective_grad(&self, z: &[f64], g: &mut [f64]) {
            g[0] = 2.0 * z[0];
            g[1] = 4.0 * z[1];
        }
        fn eval_eq(&self, z: &[f64], out: &mut [f64]) {
            out[0] = z[0] + z[1] - 1.0;
        }
        fn eval_ineq(&self, z: &[f64], out: &mut [f64]) {
            out[0] = -z[0]; // x >= 0
        }
        fn accumulate_eq_grad(&self, _z: &[f64], coeff: &[f64], g: &mut [f64]) {
            g[0] += coeff[0];
            g[1] += coeff[0];
        }
        fn accumulate_ineq_grad(&self, _z: &[f64], coeff: &[f64], g: &mut [f64]) {
            g[0] -= coeff[0];
        }
    }

    #[test]
    fn equality_constrained_quadratic() {
        // min x^2 + 2 y^2 s.t. x + y = 1: solution (2/3, 1/3).
        let p = Quadratic { bounds: BoxBounds::unbounded(2) };
        let cfg = SolveConfig { feas_tol: 1e-9, opt_tol: 1e-8, ..Default::default() };
        let r = solve(&p, vec![5.0, -3.0], &cfg);
        assert!(r.converged, "{r:?}");
        assert!((r.z[0] - 2.0 / 3.0).abs() < 1e-6, "{:?}", r.z);
        assert!((r.z[1] - 1.0 / 3.0).abs() < 1e-6);
        assert!((r.z[0] + r.z[1] - 1.0).abs() <= 1e-9);
    }

    struct Rosenbrock {
        bounds: BoxBounds,
    }

    impl AlProblem for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn n_eq(&self) -> usize {
            0
        }
        fn n_ineq(&self) -> usize {
            0
        }
        fn bounds(&self) -> &BoxBounds {
            &self.bounds
        }
        fn objective(&self, z: &[f64]) -> f64 {
            (1.0 - z[0]).powi(2) + 100.0 * (z[1] - z[0] * z[0]).powi(2)
        }
        fn objective_grad(&self, z: &[f64], g: &mut [f64]) {
            g[0] = -2.0 * (1.0 - z[0]) - 400.0 * z[0] * (z[1] - z[0] * z[0]);
            g[1] = 200.0 * (z[1] - z[0] * z[0]);
        }
        fn eval_eq(&self, _z: &[f64], _out: &mut [f64]) {}
        fn eval_ineq(&self, _z: &[f64], _out: &mut [f64]) {}
        fn accumulate_eq_grad(&self, _z: &[f64], _c: &[f64], _g: &mut [f64]) {}
        fn accumulate_ineq_grad(&self, _z: &[f64], _c: &[f64], _g: &mut [f64]) {}
    }

    #[test]
    fn rosenbrock_reaches_minimum() {
        let p = Rosenbrock { bounds: BoxBounds::unbounded(2) };
        let r = solve(&p, vec![-1.2, 1.0], &SolveConfig { opt_tol: 1e-7, ..Default::default() });
        assert!((r.z[0] - 1.0).abs() < 1e-4, "{:?}", r.z);
        assert!((r.z[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn active_box_bound_holds() {
        // Same quadratic but x is capped below the unconstrained optimum;
        // the equality then pins y.
        let p = Quadratic {
            bounds: BoxBounds { lo: vec![0.0, f64::NEG_INFINITY], hi: vec![0.25, f64::INFINITY] },
        };
        let r = solve(&p, vec![0.0, 0.0], &SolveConfig { feas_tol: 1e-9, ..Default::default() });
        assert!(r.converged, "{r:?}");
        assert!((r.z[0] - 0.25).abs() < 1e-7, "{:?}", r.z);
        assert!((r.z[1] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn reports_iteration_exhaustion() {
        let p = Rosenbrock { bounds: BoxBounds::unbounded(2) };
        let r = solve(&p, vec![-1.2, 1.0], &SolveConfig { max_iter: 3, opt_tol: 1e-12, feas_tol: 1e-9 });
        assert!(!r.converged);
        assert!(r.out_of_iterations);
        assert_eq!(r.iterations, 3);
    }
}
