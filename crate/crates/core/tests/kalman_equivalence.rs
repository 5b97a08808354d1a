//! Steady-state equivalence: the converged-gain decoder must match a full
//! time-varying Kalman filter once that filter's gain has converged.

use bcisim_core::kalman::{kalman_step, steady_state_gain, KalmanModel, KalmanState};
use bcisim_core::linalg::{Mat, Mat2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Reference implementation: the textbook time-varying recursion with an
/// explicit features x features innovation-covariance inverse. Test-only; it
/// shares no code with the square-root steady-state path it checks.
struct FullKalman {
    h: Mat,
    q: Vec<f64>,
    w: Mat2,
    alpha: f64,
    p: Mat2,
    v: [f64; 2],
}

impl FullKalman {
    fn new(h: Mat, q: Vec<f64>, w: Mat2, alpha: f64) -> Self {
        FullKalman { h, q, w, alpha, p: Mat2::IDENTITY, v: [0.0, 0.0] }
    }

    fn gain(&mut self) -> Mat {
        let f = self.h.rows;
        let p_minus = self.p.mul_scalar(self.alpha * self.alpha).add(&self.w);
        // S = H P- H^T + Q  (f x f)
        let mut s = vec![vec![0.0f64; f]; f];
        for i in 0..f {
            let hi = [self.h.get(i, 0), self.h.get(i, 1)];
            let phi = p_minus.apply(hi);
            for j in 0..f {
                let hj = [self.h.get(j, 0), self.h.get(j, 1)];
                s[i][j] = phi[0] * hj[0] + phi[1] * hj[1];
            }
            s[i][i] += self.q[i];
        }
        let s_inv = invert(s);
        // K = P- H^T S^-1  (2 x f)
        let mut pht = vec![[0.0f64; 2]; f]; // column j of P- H^T
        for (j, slot) in pht.iter_mut().enumerate() {
            let hj = [self.h.get(j, 0), self.h.get(j, 1)];
            *slot = p_minus.apply(hj);
        }
        let mut k = Mat::zeros(2, f);
        for r in 0..2 {
            for c in 0..f {
                let mut acc = 0.0;
                for j in 0..f {
                    acc += pht[j][r] * s_inv[j][c];
                }
                k.set(r, c, acc);
            }
        }
        // P = (I - K H) P-
        let mut kh = Mat2::ZERO;
        for c in 0..f {
            let hc = [self.h.get(c, 0), self.h.get(c, 1)];
            kh = kh.add(&Mat2::new(
                k.get(0, c) * hc[0],
                k.get(0, c) * hc[1],
                k.get(1, c) * hc[0],
                k.get(1, c) * hc[1],
            ));
        }
        self.p = Mat2::IDENTITY.sub(&kh).mul(&p_minus);
        k
    }

    fn step(&mut self, x: &[f64]) -> [f64; 2] {
        let k = self.gain();
        let av = [self.alpha * self.v[0], self.alpha * self.v[1]];
        let mut r = [0.0f64; 2];
        for (c, &xc) in x.iter().enumerate() {
            let innov = xc - (self.h.get(c, 0) * av[0] + self.h.get(c, 1) * av[1]);
            r[0] += k.get(0, c) * innov;
            r[1] += k.get(1, c) * innov;
        }
        self.v = [av[0] + r[0], av[1] + r[1]];
        self.v
    }
}

fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 1e-300, "singular innovation covariance");
        for k in 0..n {
            a[col][k] /= p;
            inv[col][k] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for k in 0..n {
                        a[r][k] -= f * a[col][k];
                        inv[r][k] -= f * inv[col][k];
                    }
                }
            }
        }
    }
    inv
}

#[test]
fn steady_state_matches_converged_full_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let features = 6;
    let h = Mat::from_rows(
        (0..features)
            .map(|_| vec![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0])
            .collect(),
    );
    let q: Vec<f64> = (0..features).map(|_| 0.3 + rng.random::<f64>()).collect();
    let w = Mat2::new(0.05, 0.01, 0.01, 0.04);
    let alpha = 0.94;

    let k = steady_state_gain(&h, &q, w, alpha).unwrap();
    let model = KalmanModel {
        h: h.clone(),
        k,
        alpha,
        gain: 1.0,
        w,
        q_diag: q.clone(),
        ridge_lambda: 1e-4,
    };

    // converge the full filter's covariance before comparing decodes
    let mut full = FullKalman::new(h, q, w, alpha);
    for _ in 0..20_000 {
        full.gain();
    }
    full.v = [0.0, 0.0];

    let mut state = KalmanState::default();
    for t in 0..200 {
        let x: Vec<f64> = (0..features)
            .map(|c| ((t * 7 + c) as f64 * 0.13).sin() * 0.8)
            .collect();
        let expect = full.step(&x);
        let (got, next) = kalman_step(&model, &state, &x).unwrap();
        state = next;
        assert!(
            (got[0] - expect[0]).abs() < 1e-8 && (got[1] - expect[1]).abs() < 1e-8,
            "step {t}: steady {got:?} vs full {expect:?}"
        );
    }
}

#[test]
fn scalar_fixed_point_exact() {
    // alpha = 0, W = Q = H = 1 -> K = 0.5 to 1e-9
    let h = Mat::from_rows(vec![vec![1.0, 0.0]]);
    let w = Mat2::new(1.0, 0.0, 0.0, 0.0);
    let k = steady_state_gain(&h, &[1.0], w, 0.0).unwrap();
    assert!((k.get(0, 0) - 0.5).abs() < 1e-9);
}
