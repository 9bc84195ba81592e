//! Deterministic full-batch solvers.
//!
//! Smooth losses (logistic, squared epsilon-insensitive) use a line-searched
//! Newton method whose steps come from conjugate gradients on
//! Hessian-vector products. The hinge losses use dual coordinate descent,
//! which handles the kink exactly and decreases the dual objective
//! monotonically.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::problem::{dot, norm, Problem, RowLoss};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptResult {
    pub theta: Vec<f64>,
    /// Final primal objective.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The monotone quantity per iteration: the primal objective for the
    /// Newton solver, the dual objective (as a minimization) for coordinate
    /// descent.
    pub history: Vec<f64>,
}

fn check_finite(objective: f64) -> Result<()> {
    if objective.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("objective became {objective}")))
    }
}

/// Conjugate gradients for `H s = -g`, stopped at `|r| <= 0.1 |g|`.
fn cg_step(p: &Problem, curvature: &[f64], g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let mut s = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|x| -x).collect();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    let stop = 0.1 * norm(g);
    for _ in 0..(2 * n).max(10) {
        if rr.sqrt() <= stop {
            break;
        }
        let hd = p.hessian_vec(curvature, &d);
        let alpha = rr / dot(&d, &hd);
        for k in 0..n {
            s[k] += alpha * d[k];
            r[k] -= alpha * hd[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            d[k] = r[k] + beta * d[k];
        }
    }
    s
}

/// Newton-CG with Armijo backtracking. Stops when an accepted step changes
/// the objective by less than `tol` relative, or after `max_iter` steps.
pub fn newton_cg(p: &Problem, init: Vec<f64>, tol: f64, max_iter: usize) -> Result<OptResult> {
    if matches!(p.loss, RowLoss::Hinge) {
        return Err(Error::Numeric("Newton steps need a smooth loss".into()));
    }
    let mut theta = init;
    let mut f = p.objective(&theta);
    check_finite(f)?;
    let mut history = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let g = p.gradient(&theta);
        if norm(&g) <= 1e-12 * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        let curvature = p.curvature(&theta);
        let s = cg_step(p, &curvature, &g);
        let slope = dot(&g, &s);
        if slope >= 0.0 {
            return Err(Error::Numeric("Newton direction is not a descent direction".into()));
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&s).map(|(a, b)| a + t * b).collect();
            let fc = p.objective(&cand);
            if fc <= f + 1e-4 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some((cand, fc)) = accepted else {
            // no representable decrease left
            converged = true;
            break;
        };
        check_finite(fc)?;
        let change = f - fc;
        theta = cand;
        f = fc;
        history.push(f);
        if change <= tol * f.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(OptResult {
        theta,
        objective: f,
        iterations,
        converged,
        history,
    })
}

/// Dual coordinate descent for the hinge loss with targets in {-1, +1}.
///
/// Minimizes `1/2 a^T Q a - sum a` over `0 <= a_i <= C`, keeping
/// `theta = sum a_i t_i z_i`. Rows are visited in a fresh seeded permutation
/// each epoch. Stops when the duality gap falls below `tol` relative to the
/// primal objective.
pub fn dual_cd(
    p: &Problem,
    alpha0: Option<Vec<f64>>,
    tol: f64,
    max_epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<OptResult> {
    if !matches!(p.loss, RowLoss::Hinge) {
        return Err(Error::Numeric("dual coordinate descent needs the hinge loss".into()));
    }
    let n = p.len();
    let dim = p.dim();
    let c = p.c;
    let mut alpha = alpha0.unwrap_or_else(|| vec![0.0; n]);
    if alpha.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: alpha.len(),
        });
    }
    for a in alpha.iter_mut() {
        *a = a.clamp(0.0, c);
    }
    let mut theta = vec![0.0; dim];
    for ((z, &t), &a) in p.rows.iter().zip(&p.targets).zip(&alpha) {
        if a != 0.0 {
            for (w, zk) in theta.iter_mut().zip(z) {
                *w += a * t * zk;
            }
        }
    }
    let qd: Vec<f64> = p.rows.iter().map(|z| dot(z, z)).collect();
    let dual = |theta: &[f64], alpha: &[f64]| 0.5 * dot(theta, theta) - alpha.iter().sum::<f64>();

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = vec![dual(&theta, &alpha)];
    let mut converged = false;
    let mut epochs = 0;
    let mut primal = p.objective(&theta);
    while epochs < max_epochs {
        order.shuffle(rng);
        for &i in &order {
            if qd[i] == 0.0 {
                continue;
            }
            let z = &p.rows[i];
            let t = p.targets[i];
            let grad = t * dot(&theta, z) - 1.0;
            let new = (alpha[i] - grad / qd[i]).clamp(0.0, c);
            let delta = new - alpha[i];
            if delta != 0.0 {
                alpha[i] = new;
                for (w, zk) in theta.iter_mut().zip(z) {
                    *w += delta * t * zk;
                }
            }
        }
        epochs += 1;
        let d = dual(&theta, &alpha);
        check_finite(d)?;
        history.push(d);
        primal = p.objective(&theta);
        let gap = primal + d;
        if gap <= tol * primal.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    check_finite(primal)?;
    Ok(OptResult {
        theta,
        objective: primal,
        iterations: epochs,
        converged,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn separable(loss: RowLoss) -> Problem {
        Problem {
            rows: vec![
                vec![2.0, 1.0, 1.0],
                vec![1.5, 2.0, 1.0],
                vec![-1.0, -2.0, 1.0],
                vec![-2.0, -0.5, 1.0],
            ],
            targets: vec![1.0, 1.0, -1.0, -1.0],
            loss,
            c: 1.0,
        }
    }

    #[test]
    fn newton_is_monotone_and_reaches_a_stationary_point() {
        let p = separable(RowLoss::Logistic);
        let r = newton_cg(&p, vec![0.0; 3], 1e-12, 100).unwrap();
        assert!(r.converged);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(norm(&p.gradient(&r.theta)) < 1e-5);
    }

    #[test]
    fn dual_cd_closes_the_gap() {
        let p = separable(RowLoss::Hinge);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = dual_cd(&p, None, 1e-9, 1000, &mut rng).unwrap();
        assert!(r.converged);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        for (z, t) in p.rows.iter().zip(&p.targets) {
            assert!(t * dot(&r.theta, z) > 0.0);
        }
    }

    #[test]
    fn wrong_solver_for_loss_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(newton_cg(&separable(RowLoss::Hinge), vec![0.0; 3], 1e-6, 10).is_err());
        assert!(dual_cd(&separable(RowLoss::Logistic), None, 1e-6, 10, &mut rng).is_err());
    }
}
