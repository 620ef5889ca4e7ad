//! Cross-checks the box-constrained solver against an independent projected
//! gradient descent reference on random strongly convex quadratics.

use advlab::solver::{minimize, projected_gradient, BoxBounds, SolverConfig, SolverStatus};
use advlab::RandomStream;

/// f(x) = 0.5 x'Ax + b'x with A symmetric positive definite.
struct Quadratic {
    n: usize,
    a: Vec<f64>, // row-major n x n
    b: Vec<f64>,
}

impl Quadratic {
    /// A = M'M / n + I keeps the spectrum in roughly [1, 4n/n]: strongly
    /// convex and well conditioned, so PGD converges linearly.
    fn random(stream: &mut RandomStream, n: usize) -> Self {
        let m: Vec<f64> = stream.draw_gaussian(0.0, 1.0, n * n);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += m[k * n + i] * m[k * n + j];
                }
                a[i * n + j] = s / n as f64 + if i == j { 1.0 } else { 0.0 };
            }
        }
        let b: Vec<f64> = stream.draw_gaussian(0.0, 4.0, n);
        Quadratic { n, a, b }
    }

    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = self.b.clone();
        let mut f = 0.0;
        for i in 0..self.n {
            let mut ax = 0.0;
            for j in 0..self.n {
                ax += self.a[i * self.n + j] * x[j];
            }
            g[i] += ax;
            f += 0.5 * x[i] * ax + self.b[i] * x[i];
        }
        (f, g)
    }

    /// Gershgorin bound on the largest eigenvalue.
    fn lipschitz(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.a[i * self.n..(i + 1) * self.n]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

fn random_bounds(stream: &mut RandomStream, n: usize) -> BoxBounds<f64> {
    let c: Vec<f64> = stream.draw_gaussian(0.0, 1.0, n);
    let w: Vec<f64> = stream.draw_gaussian(0.0, 1.0, n);
    let lower: Vec<f64> = c.iter().zip(&w).map(|(&c, &w)| c - w.abs() - 0.05).collect();
    let upper: Vec<f64> = c.iter().zip(&w).map(|(&c, &w)| c + w.abs() + 0.05).collect();
    BoxBounds::new(lower, upper)
}

/// Fixed-step projected gradient descent run to numerical stagnation.
fn pgd_reference(q: &Quadratic, bounds: &BoxBounds<f64>, x0: &[f64]) -> Vec<f64> {
    let step = 1.0 / q.lipschitz();
    let mut x = x0.to_vec();
    for _ in 0..400_000 {
        let (_, g) = q.eval(&x);
        let mut next: Vec<f64> = x
            .iter()
            .zip(&g)
            .map(|(&xi, &gi)| xi - step * gi)
            .collect();
        bounds.project(&mut next);
        let delta = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if delta < 1e-14 {
            break;
        }
    }
    x
}

#[test]
fn matches_projected_gradient_reference_on_random_quadratics() {
    let mut stream = RandomStream::new(271_828, 0);
    let cfg = SolverConfig::default();
    // with unit strong convexity a projected-gradient norm of t leaves up
    // to ~t of solution error, so drive the solver well below the 1e-6
    // comparison tolerance
    let tight = SolverConfig {
        pg_tolerance: 1e-9,
        max_iterations: 500,
        ..SolverConfig::default()
    };
    for trial in 0..50 {
        let n = 2 + stream.gen_range_usize(19); // 2..=20
        let q = Quadratic::random(&mut stream, n);
        let bounds = random_bounds(&mut stream, n);
        let mut x0: Vec<f64> = stream.draw_gaussian(0.0, 4.0, n);
        bounds.project(&mut x0);

        let result = minimize(|x| q.eval(x), &x0, &bounds, &tight);
        let reference = pgd_reference(&q, &bounds, &x0);

        let gap = result
            .x_star
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(
            gap <= 1e-6,
            "trial {trial} (n={n}): solution gap {gap:e} exceeds 1e-6"
        );

        let default_run = minimize(|x| q.eval(x), &x0, &bounds, &cfg);
        if default_run.status == SolverStatus::Converged {
            let (_, g) = q.eval(&default_run.x_star);
            let pg = projected_gradient(&default_run.x_star, &g, &bounds)
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max);
            assert!(
                pg <= cfg.pg_tolerance,
                "trial {trial}: converged with projected gradient {pg:e}"
            );
        }
    }
}
