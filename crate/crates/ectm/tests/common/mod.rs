//! Shared test oracles, independent of the library's solver paths.
//!
//! The extended-precision normal-equations solver works in double-double
//! arithmetic (~32 significant digits) so it can serve as the reference for
//! the closed-form least-squares solution. The grid oracle minimizes a
//! box-constrained quadratic by brute force over a refined lattice.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

// ---------------------------------------------------------------------------
// Double-double arithmetic (Dekker/Knuth error-free transformations).

#[derive(Debug, Clone, Copy)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// Requires |a| >= |b|.
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let err = b - (s - a);
    (s, err)
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn add(self, other: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, other.hi);
        let e = e + self.lo + other.lo;
        let (hi, lo) = quick_two_sum(s, e);
        Dd { hi, lo }
    }

    pub fn sub(self, other: Dd) -> Dd {
        self.add(other.neg())
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn mul(self, other: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, other.hi);
        let e = e + self.hi * other.lo + self.lo * other.hi;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn div(self, other: Dd) -> Dd {
        let q1 = self.hi / other.hi;
        let r1 = self.sub(other.mul(Dd::new(q1)));
        let q2 = r1.hi / other.hi;
        let r2 = r1.sub(other.mul(Dd::new(q2)));
        let q3 = r2.hi / other.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }.add(Dd::new(q3))
    }

    pub fn abs_hi(self) -> f64 {
        self.hi.abs()
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Solve `(A^T A) x = A^T b` entirely in double-double arithmetic
/// (Gaussian elimination with partial pivoting). This is the literal
/// closed-form normal-equations route, kept numerically honest by the
/// extended precision.
pub fn normal_equations_dd(a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<f64> {
    let m = a.ncols();
    let rows = a.nrows();
    let mut gram = vec![vec![Dd::ZERO; m]; m];
    let mut rhs = vec![Dd::ZERO; m];
    for i in 0..m {
        for j in 0..m {
            let mut acc = Dd::ZERO;
            for r in 0..rows {
                acc = acc.add(Dd::new(a[(r, i)]).mul(Dd::new(a[(r, j)])));
            }
            gram[i][j] = acc;
        }
        let mut acc = Dd::ZERO;
        for r in 0..rows {
            acc = acc.add(Dd::new(a[(r, i)]).mul(Dd::new(b[r])));
        }
        rhs[i] = acc;
    }

    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&x, &y| {
                gram[x][col]
                    .abs_hi()
                    .partial_cmp(&gram[y][col].abs_hi())
                    .unwrap()
            })
            .unwrap();
        gram.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..m {
            let factor = gram[row][col].div(gram[col][col]);
            for j in col..m {
                gram[row][j] = gram[row][j].sub(factor.mul(gram[col][j]));
            }
            rhs[row] = rhs[row].sub(factor.mul(rhs[col]));
        }
    }

    let mut x = vec![Dd::ZERO; m];
    for row in (0..m).rev() {
        let mut acc = rhs[row];
        for j in row + 1..m {
            acc = acc.sub(gram[row][j].mul(x[j]));
        }
        x[row] = acc.div(gram[row][row]);
    }
    x.into_iter().map(Dd::to_f64).collect()
}

// ---------------------------------------------------------------------------
// Brute-force box oracle.

pub fn objective(a: &DMatrix<f64>, theta: &[f64], b: &DVector<f64>) -> f64 {
    let mut total = 0.0;
    for r in 0..a.nrows() {
        let mut pred = 0.0;
        for c in 0..a.ncols() {
            pred += a[(r, c)] * theta[c];
        }
        let e = pred - b[r];
        total += e * e;
    }
    total
}

/// Minimize `||A theta - b||^2` over a finite box by an exhaustive lattice
/// search refined over several zoom stages. Each stage keeps the incumbent
/// point, so the reported objective never increases; the final lattice pitch
/// is below 1e-4 of the box width for the stage counts used in the
/// acceptance tests.
pub fn grid_search_box(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lower: &[f64],
    upper: &[f64],
    points: usize,
    stages: usize,
) -> (Vec<f64>, f64) {
    let m = lower.len();
    assert!(points >= 3);
    let mut lo = lower.to_vec();
    let mut hi = upper.to_vec();
    let mut best = lo.clone();
    let mut best_obj = f64::INFINITY;
    for _ in 0..stages {
        let mut idx = vec![0usize; m];
        loop {
            let theta: Vec<f64> = (0..m)
                .map(|j| lo[j] + (hi[j] - lo[j]) * idx[j] as f64 / (points - 1) as f64)
                .collect();
            let obj = objective(a, &theta, b);
            if obj < best_obj {
                best_obj = obj;
                best = theta;
            }
            let mut d = 0;
            loop {
                idx[d] += 1;
                if idx[d] < points {
                    break;
                }
                idx[d] = 0;
                d += 1;
                if d == m {
                    break;
                }
            }
            if d == m {
                break;
            }
        }
        // Zoom around the incumbent, two cells of slack per side against
        // anisotropic level sets, clipped to the original box.
        for j in 0..m {
            let cell = (hi[j] - lo[j]) / (points - 1) as f64;
            lo[j] = (best[j] - 2.0 * cell).max(lower[j]);
            hi[j] = (best[j] + 2.0 * cell).min(upper[j]);
        }
    }
    (best, best_obj)
}

/// KKT residual of `min ||A theta - b||^2` subject to box bounds, using the
/// true objective gradient `2 A^T (A theta - b)`. Coordinates within
/// `activity_tol` of a bound count as active.
pub fn kkt_residual_box(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    theta: &[f64],
    lower: &[f64],
    upper: &[f64],
    activity_tol: f64,
) -> f64 {
    let theta_v = DVector::from_column_slice(theta);
    let grad = 2.0 * a.transpose() * (a * &theta_v - b);
    let mut worst = 0.0f64;
    for j in 0..theta.len() {
        let at_lower = (theta[j] - lower[j]).abs() <= activity_tol;
        let at_upper = (upper[j] - theta[j]).abs() <= activity_tol;
        let violation = if at_lower && at_upper {
            0.0
        } else if at_lower {
            (-grad[j]).max(0.0)
        } else if at_upper {
            grad[j].max(0.0)
        } else {
            grad[j].abs()
        };
        worst = worst.max(violation);
    }
    worst
}

pub fn rel_l2_error(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = want.iter().map(|v| v * v).sum::<f64>().sqrt();
    num / den
}
