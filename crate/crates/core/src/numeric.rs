//! Small dense-vector helpers shared by the learner and the approximation code.

/// Neumaier compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four independent lanes so the compiler can vectorize.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Result of a truncated conjugate-gradient solve.
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub step: Vec<f64>,
    pub iterations: usize,
    pub hit_boundary: bool,
}

/// Steihaug–Toint truncated CG for `min gᵀs + ½ sᵀHs` subject to `‖s‖ ≤ radius`.
///
/// `hess` computes `H v` into the output buffer. Stops when the residual norm
/// drops below `rel_tol · ‖g‖`, on negative curvature, or at the boundary.
pub fn steihaug_cg<F>(
    grad: &[f64],
    radius: f64,
    rel_tol: f64,
    max_iter: usize,
    mut hess: F,
) -> CgOutcome
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = grad.len();
    let mut s = vec![0.0; n];
    let mut r: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut d = r.clone();
    let mut hd = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let stop = rel_tol * rr.sqrt();
    let mut iterations = 0;

    if rr.sqrt() <= stop || rr == 0.0 {
        return CgOutcome {
            step: s,
            iterations,
            hit_boundary: false,
        };
    }

    while iterations < max_iter {
        iterations += 1;
        hess(&d, &mut hd);
        let dhd = dot(&d, &hd);
        if dhd <= 0.0 {
            let tau = boundary_tau(&s, &d, radius);
            axpy(tau, &d, &mut s);
            return CgOutcome {
                step: s,
                iterations,
                hit_boundary: true,
            };
        }
        let alpha = rr / dhd;
        let mut trial = s.clone();
        axpy(alpha, &d, &mut trial);
        if norm(&trial) >= radius {
            let tau = boundary_tau(&s, &d, radius);
            axpy(tau, &d, &mut s);
            return CgOutcome {
                step: s,
                iterations,
                hit_boundary: true,
            };
        }
        s = trial;
        axpy(-alpha, &hd, &mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= stop {
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for (di, ri) in d.iter_mut().zip(&r) {
            *di = ri + beta * *di;
        }
    }
    CgOutcome {
        step: s,
        iterations,
        hit_boundary: false,
    }
}

/// Positive root of `‖s + τ d‖ = radius`.
fn boundary_tau(s: &[f64], d: &[f64], radius: f64) -> f64 {
    let dd = dot(d, d);
    let sd = dot(s, d);
    let ss = dot(s, s);
    if dd == 0.0 {
        return 0.0;
    }
    let disc = (sd * sd + dd * (radius * radius - ss)).max(0.0);
    (-sd + disc.sqrt()) / dd
}

/// Plain CG for a symmetric positive definite system `A x = b`.
pub fn conjugate_gradient<F>(b: &[f64], rel_tol: f64, max_iter: usize, mut apply: F) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let out = steihaug_cg(
        &b.iter().map(|v| -v).collect::<Vec<_>>(),
        f64::INFINITY,
        rel_tol,
        max_iter,
        &mut apply,
    );
    out.step
}
