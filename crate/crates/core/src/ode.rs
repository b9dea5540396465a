//! Classical fixed-step fourth-order Runge-Kutta for small autonomous or
//! time-dependent systems on arrays.

/// Integrate dy/dt = f(t, y) from `t0` to `t1` with `n_steps` equal steps.
/// `t1 < t0` integrates backwards.
pub fn rk4<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    y0: [f64; N],
    t0: f64,
    t1: f64,
    n_steps: usize,
) -> [f64; N] {
    let n = n_steps.max(1);
    let h = (t1 - t0) / n as f64;
    let mut y = y0;
    let mut t = t0;
    for _ in 0..n {
        let k1 = f(t, &y);
        let k2 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
        let k3 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
        let k4 = f(t + h, &axpy(&y, h, &k3));
        for i in 0..N {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;
    }
    y
}

/// Like [`rk4`] but returns the state at every node, starting with `y0`.
pub fn rk4_trajectory<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    y0: [f64; N],
    nodes: &[f64],
    substeps: usize,
) -> Vec<[f64; N]> {
    let mut out = Vec::with_capacity(nodes.len());
    let mut y = y0;
    out.push(y);
    for w in nodes.windows(2) {
        y = rk4(&f, y, w[0], w[1], substeps);
        out.push(y);
    }
    out
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut o = *y;
    for i in 0..N {
        o[i] += a * k[i];
    }
    o
}
