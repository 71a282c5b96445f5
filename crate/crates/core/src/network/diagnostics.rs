//! Linear-algebraic probes of ReLU layers: activation-masked products, the
//! single-layer descent identity, ridge regression, and energy bounds.

use super::{Network, PlainNet, ResidualBlock};
use crate::assignment::EmpiricalMeasure;
use crate::numerics::{frobenius_norm_sq, relu_scalar, Matrix, Vector};
use crate::{Error, Result};

/// Returns `W_x = W_n D_{n-1} W_{n-1} ... D_1 W_1`, where `D_l` keeps the
/// units active at `x`, so that `net.forward(x) == W_x x`.
pub fn activated_linear_map(net: &PlainNet, x: &Vector) -> Result<Matrix> {
    if x.dim() != net.input_dim() {
        return Err(Error::dim("activated_linear_map input", net.input_dim(), x.dim()));
    }
    let last = net.layers.len() - 1;
    let mut map = Matrix::identity(x.dim());
    let mut state = x.as_slice().to_vec();
    for (l, w) in net.layers.iter().enumerate() {
        let mut pre = w.matvec_slice(&state);
        let mut next = w.matmul(&map)?;
        if l < last {
            for (i, p) in pre.iter_mut().enumerate() {
                if *p <= 0.0 {
                    *p = 0.0;
                    next.row_mut(i).fill(0.0);
                }
            }
        }
        map = next;
        state = pre;
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationCheck {
    /// `sigma(W'X) - sigma(WX)`.
    pub observed: Matrix,
    /// `-delta G[j,:] X_j^T X_j`, row by row.
    pub predicted: Matrix,
    /// The stepped weights `W'`.
    pub stepped: Matrix,
}

/// One row-wise descent step on a ReLU layer `sigma(W X)` with upstream
/// gradient `G`, comparing the actual change of the layer output with the
/// linearized prediction. `X` holds samples as columns.
///
/// Fails with [`Error::PatternFlip`] if the step changes which entries of
/// `W X` are positive; shrink `delta` in that case.
pub fn gd_variation_check(w: &Matrix, x: &Matrix, g: &Matrix, delta: f64) -> Result<VariationCheck> {
    let (out, d) = w.shape();
    let m = x.cols();
    if x.rows() != d {
        return Err(Error::dim("gd_variation_check X rows", d, x.rows()));
    }
    if g.shape() != (out, m) {
        return Err(Error::dim("gd_variation_check G shape", format!("{:?}", (out, m)), format!("{:?}", g.shape())));
    }
    if !delta.is_finite() {
        return Err(Error::NonFinite("gd_variation_check delta"));
    }
    let pre = w.matmul(x)?;
    let mut stepped = w.clone();
    let mut predicted = Matrix::zeros(out, m);
    for j in 0..out {
        // G[j,:] X_j^T, with inactive columns of X dropped.
        let mut step = vec![0.0; d];
        for i in (0..m).filter(|&i| pre[(j, i)] > 0.0) {
            for (k, s) in step.iter_mut().enumerate() {
                *s += g[(j, i)] * x[(k, i)];
            }
        }
        for (wk, s) in stepped.row_mut(j).iter_mut().zip(&step) {
            *wk -= delta * s;
        }
        for i in (0..m).filter(|&i| pre[(j, i)] > 0.0) {
            let proj: f64 = (0..d).map(|k| step[k] * x[(k, i)]).sum();
            predicted[(j, i)] = -delta * proj;
        }
    }
    let post = stepped.matmul(x)?;
    let mut observed = Matrix::zeros(out, m);
    for j in 0..out {
        for i in 0..m {
            if (pre[(j, i)] > 0.0) != (post[(j, i)] > 0.0) {
                return Err(Error::PatternFlip { row: j });
            }
            observed[(j, i)] = relu_scalar(post[(j, i)]) - relu_scalar(pre[(j, i)]);
        }
    }
    Ok(VariationCheck { observed, predicted, stepped })
}

/// Solves `min_w ||Y - w X||^2 + gamma ||w||^2` for a row `w`, i.e.
/// `(X X^T + gamma I) w^T = X Y^T`. `X` is d×m, `Y` is 1×m.
pub fn ridge_solve(x: &Matrix, y: &Matrix, gamma: f64) -> Result<Vector> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Range {
            name: "gamma",
            value: gamma,
            range: "(0, inf)",
        });
    }
    let (d, m) = x.shape();
    if y.shape() != (1, m) {
        return Err(Error::dim("ridge_solve Y shape", format!("{:?}", (1, m)), format!("{:?}", y.shape())));
    }
    let mut a = x.matmul_nt(x)?;
    for i in 0..d {
        a[(i, i)] += gamma;
    }
    let b = x.matvec_slice(y.row(0));
    let l = cholesky(&a)?;
    let mut w = cholesky_solve(&l, &b);
    // One round of refinement tightens the normal-equation residual.
    let r: Vec<f64> = a.matvec_slice(&w).iter().zip(&b).map(|(aw, bi)| bi - aw).collect();
    let dw = cholesky_solve(&l, &r);
    for (wi, di) in w.iter_mut().zip(&dw) {
        *wi += di;
    }
    Vector::new(w)
}

fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        // Also rejects NaN.
        if diag.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::NonFinite("ridge_solve: system is not positive definite"));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l[(i, k)] * z[k];
        }
        z[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= l[(k, i)] * z[k];
        }
        z[i] /= l[(i, i)];
    }
    z
}

/// Left and right sides of an energy inequality over a sample cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBound {
    pub lhs: f64,
    pub rhs: f64,
    /// The looser AM-GM form `(||W1||^2 + ||W2||^2)^2 / 4 * E||x||^2`,
    /// reported for residual blocks only.
    pub symmetric_rhs: Option<f64>,
}

impl EnergyBound {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs + slack
    }
}

/// `E||v(x)||^2` against `||W2||^2 ||W1||^2 E||x||^2` for the block field
/// `v(x) = W2 relu(W1 relu(x))`.
pub fn block_energy_bound(block: &ResidualBlock, samples: &EmpiricalMeasure) -> Result<EnergyBound> {
    if samples.dim() != block.width() {
        return Err(Error::dim("block_energy_bound samples", block.width(), samples.dim()));
    }
    let mut lhs = 0.0;
    for x in samples.points() {
        lhs += block.residue(x)?.norm_sq();
    }
    lhs /= samples.len() as f64;
    let m2 = samples.second_moment();
    let a = frobenius_norm_sq(&block.w1);
    let b = frobenius_norm_sq(&block.w2);
    Ok(EnergyBound {
        lhs,
        rhs: a * b * m2,
        symmetric_rhs: Some(0.25 * (a + b) * (a + b) * m2),
    })
}

/// `E||relu(W x) - x||^2` against `E[(||W||^2 + 1) ||x||^2]` for a square
/// plain layer. The inequality needs `<relu(Wx), x> >= 0`, so samples must
/// be entrywise nonnegative, as every post-ReLU state is.
pub fn plain_layer_energy_bound(w: &Matrix, samples: &EmpiricalMeasure) -> Result<EnergyBound> {
    if w.rows() != w.cols() {
        return Err(Error::dim("plain_layer_energy_bound layer", "square", format!("{:?}", w.shape())));
    }
    if samples.dim() != w.cols() {
        return Err(Error::dim("plain_layer_energy_bound samples", w.cols(), samples.dim()));
    }
    if let Some(v) = samples.points().iter().flat_map(|p| p.as_slice()).find(|v| **v < 0.0) {
        return Err(Error::Range {
            name: "sample entry",
            value: *v,
            range: "[0, inf)",
        });
    }
    let mut lhs = 0.0;
    for x in samples.points() {
        let y = w.matvec_slice(x.as_slice());
        lhs += y
            .iter()
            .zip(x.as_slice())
            .map(|(yi, xi)| {
                let d = relu_scalar(*yi) - xi;
                d * d
            })
            .sum::<f64>();
    }
    let n = samples.len() as f64;
    Ok(EnergyBound {
        lhs: lhs / n,
        rhs: (frobenius_norm_sq(w) + 1.0) * samples.second_moment(),
        symmetric_rhs: None,
    })
}

/// `sum ||W||_F^2` over every weight matrix of the network.
pub fn weight_decay_energy(net: &Network) -> f64 {
    net.params().into_iter().map(frobenius_norm_sq).sum()
}
