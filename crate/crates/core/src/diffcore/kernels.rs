// Dense kernels shared by the graph and the no-grad inference path, so both
// produce bit-identical values.

/// `a[n, k] * b[k, m]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            row.iter_mut().zip(brow).for_each(|(o, &bv)| *o += aip * bv);
        }
    }
    out
}

/// `g[n, m] * b[k, m]^T`, giving `[n, k]`.
pub(crate) fn matmul_bt(g: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[n, k]^T * g[n, m]`, giving `[k, m]`.
pub(crate) fn matmul_at(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            orow.iter_mut().zip(grow).for_each(|(o, &gv)| *o += aip * gv);
        }
    }
    out
}

pub(crate) fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
}

pub(crate) fn relu(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

pub(crate) fn tanh(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.tanh());
}

pub(crate) fn sum(x: &[f64]) -> f64 {
    x.iter().sum()
}

pub(crate) fn lp_norm(x: &[f64], p: u32) -> f64 {
    match p {
        1 => x.iter().map(|v| v.abs()).sum(),
        2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        _ => x
            .iter()
            .map(|v| v.abs().powi(p as i32))
            .sum::<f64>()
            .powf(1.0 / p as f64),
    }
}

/// Writes `upstream * d||x||_p / dx` into `out`; zero at `x = 0`.
pub(crate) fn lp_norm_grad(x: &[f64], norm: f64, p: u32, upstream: f64, out: &mut [f64]) {
    if norm == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    match p {
        1 => {
            for (o, &v) in out.iter_mut().zip(x) {
                *o = if v > 0.0 {
                    upstream
                } else if v < 0.0 {
                    -upstream
                } else {
                    0.0
                };
            }
        }
        2 => {
            let s = upstream / norm;
            out.iter_mut().zip(x).for_each(|(o, &v)| *o = v * s);
        }
        _ => {
            let denom = norm.powi(p as i32 - 1);
            for (o, &v) in out.iter_mut().zip(x) {
                *o = upstream * v.signum() * v.abs().powi(p as i32 - 1) / denom;
            }
        }
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
