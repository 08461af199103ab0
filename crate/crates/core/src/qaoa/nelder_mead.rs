//! Derivative-free simplex minimisation.

#[derive(Clone, Debug)]
pub struct NelderMeadConfig {
    pub max_evals: usize,
    /// Stop once `max f - min f` over the simplex falls below this.
    pub f_tol: f64,
    /// Edge length of the initial simplex along each axis.
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            f_tol: 1e-6,
            initial_step: 0.25,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

/// Minimise `f` from `x0` with the standard reflection / expansion /
/// contraction / shrink coefficients (1, 2, 1/2, 1/2).
pub fn minimize(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], cfg: &NelderMeadConfig) -> Minimum {
    let dim = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for d in 0..dim {
        let mut x = x0.to_vec();
        x[d] += cfg.initial_step;
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    let point = |c: &[f64], toward: &[f64], t: f64| -> Vec<f64> {
        c.iter().zip(toward).map(|(a, b)| a + t * (b - a)).collect()
    };

    while evals < cfg.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[dim].1 - simplex[0].1;
        if spread < cfg.f_tol {
            break;
        }
        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let worst = simplex[dim].0.clone();
        let f_worst = simplex[dim].1;
        let f_second = simplex[dim - 1].1;
        let f_best = simplex[0].1;

        let reflected = point(&centroid, &worst, -1.0);
        let f_r = eval(&reflected, &mut evals);
        if f_r < f_best {
            let expanded = point(&centroid, &worst, -2.0);
            let f_e = eval(&expanded, &mut evals);
            simplex[dim] = if f_e < f_r { (expanded, f_e) } else { (reflected, f_r) };
            continue;
        }
        if f_r < f_second {
            simplex[dim] = (reflected, f_r);
            continue;
        }
        let (contracted, f_c) = if f_r < f_worst {
            let c = point(&centroid, &reflected, 0.5);
            let fc = eval(&c, &mut evals);
            (c, fc)
        } else {
            let c = point(&centroid, &worst, 0.5);
            let fc = eval(&c, &mut evals);
            (c, fc)
        };
        if f_c < f_worst.min(f_r) {
            simplex[dim] = (contracted, f_c);
            continue;
        }
        let best = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            let x = point(&best, &entry.0, 0.5);
            let fx = eval(&x, &mut evals);
            *entry = (x, fx);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum { x, f, evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let m = minimize(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 0.5).powi(2),
            &[0.0, 0.0],
            &NelderMeadConfig {
                f_tol: 1e-14,
                ..Default::default()
            },
        );
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] + 0.5).abs() < 1e-5);
    }

    #[test]
    fn rosenbrock() {
        let m = minimize(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &NelderMeadConfig {
                max_evals: 5000,
                f_tol: 1e-16,
                initial_step: 0.5,
            },
        );
        assert!(m.f < 1e-8, "f = {}", m.f);
    }

    #[test]
    fn respects_budget() {
        let mut calls = 0;
        let m = minimize(
            |x| {
                calls += 1;
                x.iter().map(|v| v.sin()).sum()
            },
            &[0.3; 6],
            &NelderMeadConfig {
                max_evals: 50,
                f_tol: 0.0,
                initial_step: 0.1,
            },
        );
        // one iteration may overshoot by at most dim + 1 evaluations (shrink)
        assert!(m.evals <= 50 + 7);
        assert_eq!(calls, m.evals);
    }
}
