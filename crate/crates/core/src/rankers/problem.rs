//! Regularized empirical-risk objectives in a fixed design space.
//!
//! Every problem has the form `1/2 |theta|^2 + C * sum_i loss(theta . z_i, t_i)`
//! where the rows `z_i` are already standardized, augmented with a constant
//! (pointwise losses) or differenced (pairwise).

/// Per-row loss on the margin `m = theta . z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowLoss {
    /// `max(0, 1 - t m)` with `t` in {-1, +1}.
    Hinge,
    /// `log(1 + exp(-t m))` with `t` in {-1, +1}.
    Logistic,
    /// `max(0, |m - t| - eps)^2` with real target `t`.
    SqEpsInsensitive { eps: f64 },
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub loss: RowLoss,
    pub c: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn margins(&self, theta: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|z| dot(theta, z)).collect()
    }

    fn row_loss(&self, m: f64, t: f64) -> f64 {
        match self.loss {
            RowLoss::Hinge => (1.0 - t * m).max(0.0),
            RowLoss::Logistic => softplus(-t * m),
            RowLoss::SqEpsInsensitive { eps } => {
                let e = ((m - t).abs() - eps).max(0.0);
                e * e
            }
        }
    }

    /// d loss / d m.
    fn row_slope(&self, m: f64, t: f64) -> f64 {
        match self.loss {
            RowLoss::Hinge => {
                if t * m < 1.0 {
                    -t
                } else {
                    0.0
                }
            }
            RowLoss::Logistic => -t * sigmoid(-t * m),
            RowLoss::SqEpsInsensitive { eps } => {
                let r = m - t;
                let e = r.abs() - eps;
                if e > 0.0 {
                    2.0 * e * r.signum()
                } else {
                    0.0
                }
            }
        }
    }

    /// Generalized second derivative of the loss in `m`.
    fn row_curvature(&self, m: f64, t: f64) -> f64 {
        match self.loss {
            RowLoss::Hinge => 0.0,
            RowLoss::Logistic => {
                let s = sigmoid(t * m);
                s * (1.0 - s)
            }
            RowLoss::SqEpsInsensitive { eps } => {
                if (m - t).abs() > eps {
                    2.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Data term only: `sum_i loss(theta . z_i, t_i)`.
    pub fn data_loss(&self, theta: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.targets)
            .map(|(z, &t)| self.row_loss(dot(theta, z), t))
            .sum()
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        0.5 * dot(theta, theta) + self.c * self.data_loss(theta)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = theta.to_vec();
        for (z, &t) in self.rows.iter().zip(&self.targets) {
            let s = self.c * self.row_slope(dot(theta, z), t);
            if s != 0.0 {
                for (gk, zk) in g.iter_mut().zip(z) {
                    *gk += s * zk;
                }
            }
        }
        g
    }

    /// Per-row curvature weights at `theta`, for Hessian-vector products.
    pub fn curvature(&self, theta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.targets)
            .map(|(z, &t)| self.row_curvature(dot(theta, z), t))
            .collect()
    }

    /// `(I + C Z^T D Z) v`.
    pub fn hessian_vec(&self, curvature: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for (z, &d) in self.rows.iter().zip(curvature) {
            if d == 0.0 {
                continue;
            }
            let s = self.c * d * dot(z, v);
            for (o, zk) in out.iter_mut().zip(z) {
                *o += s * zk;
            }
        }
        out
    }
}

/// Relative difference between the analytic gradient and central finite
/// differences with step `h`: `|g_a - g_fd| / max(|g_a|, |g_fd|)`.
pub fn finite_difference_error(problem: &Problem, theta: &[f64], h: f64) -> f64 {
    let analytic = problem.gradient(theta);
    let mut probe = theta.to_vec();
    let numeric: Vec<f64> = (0..theta.len())
        .map(|k| {
            probe[k] = theta[k] + h;
            let up = problem.objective(&probe);
            probe[k] = theta[k] - h;
            let down = problem.objective(&probe);
            probe[k] = theta[k];
            (up - down) / (2.0 * h)
        })
        .collect();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(loss: RowLoss) -> Problem {
        Problem {
            rows: vec![vec![1.0, 0.5, 1.0], vec![-0.3, 2.0, 1.0], vec![0.7, -1.2, 1.0]],
            targets: match loss {
                RowLoss::SqEpsInsensitive { .. } => vec![0.9, 0.1, 0.4],
                _ => vec![1.0, -1.0, 1.0],
            },
            loss,
            c: 0.7,
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let p = toy(RowLoss::Logistic);
        assert!(finite_difference_error(&p, &[0.3, -0.2, 0.1], 1e-5) < 1e-7);
    }

    #[test]
    fn sq_eps_gradient_matches_finite_differences() {
        let p = toy(RowLoss::SqEpsInsensitive { eps: 0.1 });
        assert!(finite_difference_error(&p, &[0.8, 0.4, -0.3], 1e-5) < 1e-7);
    }

    #[test]
    fn inactive_hinge_leaves_only_the_regularizer() {
        let p = Problem {
            rows: vec![vec![2.0, 0.0]],
            targets: vec![1.0],
            loss: RowLoss::Hinge,
            c: 1.0,
        };
        // margin 2
        let theta = [1.0, 0.5];
        assert_eq!(p.gradient(&theta), theta.to_vec());
    }

    #[test]
    fn tube_interior_has_zero_data_gradient() {
        let p = Problem {
            rows: vec![vec![1.0, 0.0]],
            targets: vec![0.5],
            loss: RowLoss::SqEpsInsensitive { eps: 0.1 },
            c: 3.0,
        };
        let theta = [0.55, 0.0];
        assert_eq!(p.gradient(&theta), theta.to_vec());
        assert_eq!(p.data_loss(&theta), 0.0);
    }

    #[test]
    fn hessian_vector_product_matches_gradient_differences() {
        let p = toy(RowLoss::Logistic);
        let theta = [0.2, 0.1, -0.4];
        let v = [0.3, -0.7, 0.2];
        let hv = p.hessian_vec(&p.curvature(&theta), &v);
        let h = 1e-6;
        let plus: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t + h * d).collect();
        let minus: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t - h * d).collect();
        let gp = p.gradient(&plus);
        let gm = p.gradient(&minus);
        for k in 0..3 {
            assert!((hv[k] - (gp[k] - gm[k]) / (2.0 * h)).abs() < 1e-6);
        }
    }
}
