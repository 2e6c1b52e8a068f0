//! Multinomial logistic regression fit by full-batch gradient descent.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegConfig {
    pub l2: f64,
    pub epochs: usize,
    /// `None` steps by `1/L`, with `L` an upper bound on the curvature of
    /// the objective (estimated by power iteration).
    pub learning_rate: Option<f64>,
    /// Z-score features with the training rows' statistics.
    pub standardize: bool,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1e-3,
            epochs: 500,
            learning_rate: None,
            standardize: true,
        }
    }
}

/// Weights `k x d` row-major and biases; features are shifted and scaled
/// before the affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    pub k: usize,
    pub d: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

pub fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

fn logits(weights: &[f64], bias: &[f64], d: usize, x: &[f64]) -> Vec<f64> {
    bias.iter()
        .enumerate()
        .map(|(c, b)| b + crate::linalg::dot(&weights[c * d..(c + 1) * d], x))
        .collect()
}

/// Mean cross-entropy plus `l2/2 * |W|²` (biases unpenalised).
pub fn penalized_loss(weights: &[f64], bias: &[f64], xs: &[Vec<f64>], y: &[usize], l2: f64) -> f64 {
    let d = xs.first().map_or(0, Vec::len);
    let mut ce = 0.0;
    for (x, &yi) in xs.iter().zip(y) {
        let mut z = logits(weights, bias, d, x);
        softmax_in_place(&mut z);
        ce -= z[yi].max(f64::MIN_POSITIVE).ln();
    }
    ce / xs.len() as f64 + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`penalized_loss`] with respect to weights and biases.
pub fn penalized_loss_grad(
    weights: &[f64],
    bias: &[f64],
    xs: &[Vec<f64>],
    y: &[usize],
    l2: f64,
) -> (Vec<f64>, Vec<f64>) {
    let d = xs.first().map_or(0, Vec::len);
    let k = bias.len();
    let n = xs.len() as f64;
    let mut gw: Vec<f64> = weights.iter().map(|w| l2 * w).collect();
    let mut gb = vec![0.0; k];
    for (x, &yi) in xs.iter().zip(y) {
        let mut p = logits(weights, bias, d, x);
        softmax_in_place(&mut p);
        p[yi] -= 1.0;
        for c in 0..k {
            let r = p[c] / n;
            gb[c] += r;
            crate::linalg::axpy(r, x, &mut gw[c * d..(c + 1) * d]);
        }
    }
    (gw, gb)
}

/// Largest eigenvalue of `[X 1]ᵀ[X 1] / n` by power iteration.
fn gram_top_eigenvalue(xs: &[Vec<f64>]) -> f64 {
    let d = xs[0].len() + 1;
    let n = xs.len() as f64;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..50 {
        let mut w = vec![0.0; d];
        for x in xs {
            let s = crate::linalg::dot(&x[..], &v[..d - 1]) + v[d - 1];
            crate::linalg::axpy(s / n, x, &mut w[..d - 1]);
            w[d - 1] += s / n;
        }
        let norm = crate::linalg::dot(&w, &w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

impl LogisticRegression {
    pub fn zeros(k: usize, d: usize) -> Self {
        LogisticRegression {
            k,
            d,
            weights: vec![0.0; k * d],
            bias: vec![0.0; k],
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Zero-initialised, so the fit is a deterministic function of the data.
    pub fn fit(xs: &[Vec<f64>], y: &[usize], k: usize, cfg: &LogRegConfig) -> Result<Self> {
        if xs.len() != y.len() {
            return Err(Error::Shape(format!("{} rows but {} labels", xs.len(), y.len())));
        }
        if xs.len() < k {
            return Err(Error::Invalid(format!("{} rows for {k} classes", xs.len())));
        }
        let d = xs[0].len();
        if xs.iter().any(|x| x.len() != d) {
            return Err(Error::Shape("rows of unequal length".into()));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= k) {
            return Err(Error::Invalid(format!("label {bad} outside 0..{k}")));
        }
        if y.iter().all(|&c| c == y[0]) {
            return Err(Error::Invalid("logistic regression needs at least two classes".into()));
        }
        let mut model = LogisticRegression::zeros(k, d);
        if cfg.standardize {
            let n = xs.len() as f64;
            for j in 0..d {
                let m = xs.iter().map(|x| x[j]).sum::<f64>() / n;
                let var = xs.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / n;
                model.mean[j] = m;
                model.scale[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
            }
        }
        let zs: Vec<Vec<f64>> = xs.iter().map(|x| model.transform(x)).collect();
        // softmax cross-entropy curvature is at most 1/2 of the Gram bound
        let lr = cfg
            .learning_rate
            .unwrap_or_else(|| 1.0 / (0.5 * gram_top_eigenvalue(&zs) + cfg.l2).max(1e-12));
        for _ in 0..cfg.epochs {
            let (gw, gb) = penalized_loss_grad(&model.weights, &model.bias, &zs, y, cfg.l2);
            crate::linalg::axpy(-lr, &gw, &mut model.weights);
            crate::linalg::axpy(-lr, &gb, &mut model.bias);
        }
        if !model.weights.iter().chain(&model.bias).all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                epoch: cfg.epochs,
                batch: 0,
                detail: "logistic regression diverged".into(),
            });
        }
        Ok(model)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut z = logits(&self.weights, &self.bias, self.d, &self.transform(x));
        softmax_in_place(&mut z);
        z
    }

    /// Arg-max class, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.predict_proba(x);
        (0..self.k).fold(0, |best, c| if p[c] > p[best] { c } else { best })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_is_uniform() {
        let m = LogisticRegression::zeros(4, 3);
        assert_eq!(m.predict_proba(&[1.0, -2.0, 3.0]), vec![0.25; 4]);
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let xs: Vec<Vec<f64>> = (-10..=10).filter(|i| *i != 0).map(|i| vec![i as f64 / 10.0]).collect();
        let y: Vec<usize> = xs.iter().map(|x| usize::from(x[0] > 0.0)).collect();
        let m = LogisticRegression::fit(&xs, &y, 2, &LogRegConfig::default()).unwrap();
        let acc = xs.iter().zip(&y).filter(|(x, y)| m.predict(x) == **y).count();
        assert_eq!(acc, xs.len());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let xs = vec![vec![0.3, -1.2], vec![1.5, 0.2], vec![-0.7, 0.9], vec![0.1, 0.1]];
        let y = vec![0, 2, 1, 2];
        let w = vec![0.1, -0.2, 0.3, 0.05, -0.4, 0.25];
        let b = vec![0.0, 0.1, -0.1];
        let l2 = 0.1;
        let (gw, gb) = penalized_loss_grad(&w, &b, &xs, &y, l2);
        let h = 1e-6;
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (penalized_loss(&p, &b, &xs, &y, l2) - penalized_loss(&m, &b, &xs, &y, l2)) / (2.0 * h);
            assert!((fd - gw[i]).abs() / fd.abs().max(1e-8) < 1e-4, "w{i}: {fd} vs {}", gw[i]);
        }
        for i in 0..b.len() {
            let (mut p, mut m) = (b.clone(), b.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (penalized_loss(&w, &p, &xs, &y, l2) - penalized_loss(&w, &m, &xs, &y, l2)) / (2.0 * h);
            assert!((fd - gb[i]).abs() / fd.abs().max(1e-8) < 1e-4, "b{i}");
        }
    }

    #[test]
    fn single_class_rejected() {
        let xs = vec![vec![1.0], vec![2.0]];
        assert!(LogisticRegression::fit(&xs, &[1, 1], 2, &LogRegConfig::default()).is_err());
    }
}
