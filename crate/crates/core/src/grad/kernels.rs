//! Dense float32 loops used by the graph ops.

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut total = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += f64::from(*v);
    }
    row.iter_mut().for_each(|v| *v = (f64::from(*v) / total) as f32);
}

pub fn log_softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = row
        .iter()
        .map(|&v| (f64::from(v) - f64::from(max)).exp())
        .sum::<f64>()
        .ln()
        + f64::from(max);
    row.iter_mut().for_each(|v| *v = (f64::from(*v) - lse) as f32);
}

pub fn axpy(k: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (y, x) in y.iter_mut().zip(x) {
        *y += k * x;
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += A x` for row-major `A` of shape `[m, n]`.
pub fn gemv_acc(a: &[f32], x: &[f32], y: &mut [f32], m: usize, n: usize) {
    for i in 0..m {
        y[i] += dot(&a[i * n..(i + 1) * n], x);
    }
}

/// `y += Aᵀ x` for row-major `A` of shape `[m, n]`.
pub fn gemv_t_acc(a: &[f32], x: &[f32], y: &mut [f32], m: usize, n: usize) {
    for i in 0..m {
        let xi = x[i];
        if xi != 0.0 {
            axpy(xi, &a[i * n..(i + 1) * n], y);
        }
    }
}

/// `G += u vᵀ`.
pub fn outer_acc(u: &[f32], v: &[f32], g: &mut [f32]) {
    let n = v.len();
    for (i, &ui) in u.iter().enumerate() {
        if ui != 0.0 {
            axpy(ui, v, &mut g[i * n..(i + 1) * n]);
        }
    }
}

/// `C = A B` with `A: [m,k]`, `B: [k,n]`.
pub fn gemm_nn(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    if n == 1 {
        c.fill(0.0);
        gemv_acc(a, b, c, m, k);
        return;
    }
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(aip, &b[p * n..(p + 1) * n], crow);
            }
        }
    }
}

/// `G_A += dC Bᵀ` with `dC: [m,n]`, `B: [k,n]`, `G_A: [m,k]`.
pub fn gemm_nt_acc(dc: &[f32], b: &[f32], ga: &mut [f32], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            ga[i * k + p] += dot(drow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `G_B += Aᵀ dC` with `A: [m,k]`, `dC: [m,n]`, `G_B: [k,n]`.
pub fn gemm_tn_acc(a: &[f32], dc: &[f32], gb: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(aip, drow, &mut gb[p * n..(p + 1) * n]);
            }
        }
    }
}
