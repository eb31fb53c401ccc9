use crate::error::{Error, Result};

use super::{Parameter, Tensor};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = W x + b` with `W` stored row-major as `out.len() x x.len()`.
#[inline]
pub fn affine_raw(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let m = x.len();
    debug_assert_eq!(w.len(), out.len() * m);
    for (i, o) in out.iter_mut().enumerate() {
        *o = b[i] + dot(&w[i * m..(i + 1) * m], x);
    }
}

/// Accumulates `dW += d_out x^T`, `db += d_out` and, when given, `dx += W^T d_out`.
#[inline]
pub fn affine_backward_raw(
    x: &[f64],
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    d_out: &[f64],
    dx: Option<&mut [f64]>,
) {
    let m = x.len();
    for (i, &g) in d_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[i] += g;
        for (d, &xj) in dw[i * m..(i + 1) * m].iter_mut().zip(x) {
            *d += g * xj;
        }
    }
    if let Some(dx) = dx {
        for (i, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, &wij) in dx.iter_mut().zip(&w[i * m..(i + 1) * m]) {
                *d += g * wij;
            }
        }
    }
}

fn check_affine(x: &Tensor, w: &Parameter, b: &Parameter) -> Result<(usize, usize)> {
    let ws = w.shape();
    if ws.len() != 2 || x.shape().len() != 1 || b.shape().len() != 1 {
        return Err(Error::Shape("affine expects x[m], W[n x m], b[n]".into()));
    }
    let (n, m) = (ws[0], ws[1]);
    if x.len() != m || b.numel() != n {
        return Err(Error::Shape(format!(
            "affine: W is {n}x{m}, x has {}, b has {}",
            x.len(),
            b.numel()
        )));
    }
    Ok((n, m))
}

pub fn affine(x: &Tensor, w: &Parameter, b: &Parameter) -> Result<Tensor> {
    let (n, _) = check_affine(x, w, b)?;
    let mut out = vec![0.0; n];
    affine_raw(x.data(), w.value.data(), b.value.data(), &mut out);
    Ok(Tensor::vector(out))
}

/// Returns `dX` and adds the weight and bias gradients into `w.grad`, `b.grad`.
pub fn affine_backward(x: &Tensor, w: &mut Parameter, b: &mut Parameter, d_out: &Tensor) -> Result<Tensor> {
    let (n, m) = check_affine(x, w, b)?;
    if d_out.len() != n {
        return Err(Error::Shape(format!("affine backward: dOut has {}, expected {n}", d_out.len())));
    }
    let mut dx = vec![0.0; m];
    affine_backward_raw(
        x.data(),
        w.value.data(),
        w.grad.data_mut(),
        b.grad.data_mut(),
        d_out.data(),
        Some(&mut dx),
    );
    Ok(Tensor::vector(dx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative given the input `x` and output `y` of the activation.
    /// ReLU uses subgradient 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn forward(self, x: &Tensor) -> Tensor {
        let data = x.data().iter().map(|&v| self.apply(v)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("activation preserves shape")
    }

    pub fn backward(self, x: &Tensor, y: &Tensor, d_out: &Tensor) -> Result<Tensor> {
        if x.shape() != y.shape() || x.shape() != d_out.shape() {
            return Err(Error::Shape("activation backward: shapes differ".into()));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .zip(d_out.data())
            .map(|((&xi, &yi), &g)| g * self.derivative(xi, yi))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stabilized softmax and the negative log likelihood of `true_class`.
pub fn softmax_nll(logits: &Tensor, true_class: usize) -> Result<(f64, Tensor)> {
    let z = logits.data();
    if z.len() < 2 || true_class >= z.len() {
        return Err(Error::invalid(format!(
            "softmax_nll needs >= 2 classes and a valid class, got {} classes and class {true_class}",
            z.len()
        )));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let loss = sum.ln() - (z[true_class] - max);
    Ok((loss, Tensor::vector(probs)))
}

/// `d loss / d logits = probs - onehot(true_class)`.
pub fn softmax_nll_backward(probs: &Tensor, true_class: usize) -> Tensor {
    let mut d = probs.data().to_vec();
    d[true_class] -= 1.0;
    Tensor::vector(d)
}

/// `f = 1 - d_cos(u, v) = (1 + u.v / (|u||v|)) / 2`, in `[0, 1]`.
pub fn cosine_similarity_raw(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine: lengths {} and {}", u.len(), v.len())));
    }
    let uu = dot(u, u);
    let vv = dot(v, v);
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    // sqrt(uu * uu) == uu exactly, so identical inputs give exactly 1.
    let c = dot(u, v) / (uu * vv).sqrt();
    Ok(0.5 * (1.0 + c.clamp(-1.0, 1.0)))
}

pub fn cosine_similarity(u: &Tensor, v: &Tensor) -> Result<f64> {
    cosine_similarity_raw(u.data(), v.data())
}

/// Gradients of `d_f * f(u, v)` with respect to `u` and `v`.
pub fn cosine_similarity_backward(u: &[f64], v: &[f64], d_f: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine: lengths {} and {}", u.len(), v.len())));
    }
    let uu = dot(u, u);
    let vv = dot(v, v);
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let inv = 1.0 / (uu * vv).sqrt();
    let c = dot(u, v) * inv;
    let s = 0.5 * d_f;
    let du = u.iter().zip(v).map(|(&ui, &vi)| s * (vi * inv - c * ui / uu)).collect();
    let dv = u.iter().zip(v).map(|(&ui, &vi)| s * (ui * inv - c * vi / vv)).collect();
    Ok((du, dv))
}
