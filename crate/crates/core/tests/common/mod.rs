//! Reference implementations used as test oracles. Nothing here calls into
//! the integral-image, cascade-evaluation or Fisherface code paths under test;
//! only plain data types are shared.

#![allow(dead_code)]

use vigil_core::image::GrayImage;
use vigil_core::vision::{scale_coord, CascadeModel, FaceBox};

// ---------------------------------------------------------------- vision

pub fn brute_rect_sum(img: &GrayImage, x: u32, y: u32, w: u32, h: u32) -> u64 {
    let mut s = 0u64;
    for yy in y..y + h {
        for xx in x..x + w {
            s += img.get(xx, yy) as u64;
        }
    }
    s
}

/// Evaluates the cascade on one window by summing pixels directly.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn brute_window_accepts(
    img: &GrayImage,
    cascade: &CascadeModel,
    wx: u32,
    wy: u32,
    scale: f64,
) -> bool {
    let ww = scale_coord(cascade.base_width, scale);
    let wh = scale_coord(cascade.base_height, scale);
    let area = (ww as f64) * (wh as f64);
    for stage in &cascade.stages {
        let mut total = 0.0;
        for wc in &stage.classifiers {
            let mut value = 0.0;
            for r in &wc.feature.rects {
                let x0 = wx + scale_coord(r.x, scale);
                let x1 = wx + scale_coord(r.x + r.w, scale);
                let y0 = wy + scale_coord(r.y, scale);
                let y1 = wy + scale_coord(r.y + r.h, scale);
                value += r.weight * brute_rect_sum(img, x0, y0, x1 - x0, y1 - y0) as f64;
            }
            value /= area;
            total += if value < wc.threshold {
                wc.left_value
            } else {
                wc.right_value
            };
        }
        if !(total >= stage.stage_threshold) {
            return false;
        }
    }
    true
}

/// Every `(x, y, w, h)` window the cascade accepts, scanning scales
/// `factor^k` while the window fits and positions on a `step` grid.
pub fn exhaustive_oracle(
    img: &GrayImage,
    cascade: &CascadeModel,
    factor: f64,
    step: u32,
) -> Vec<(u32, u32, u32, u32)> {
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let s = factor.powi(k);
        let ww = scale_coord(cascade.base_width, s);
        let wh = scale_coord(cascade.base_height, s);
        if ww > img.width() || wh > img.height() {
            break;
        }
        let mut y = 0;
        while y + wh <= img.height() {
            let mut x = 0;
            while x + ww <= img.width() {
                if brute_window_accepts(img, cascade, x, y, s) {
                    out.push((x, y, ww, wh));
                }
                x += step;
            }
            y += step;
        }
        k += 1;
    }
    out.sort();
    out
}

pub fn box_tuples(boxes: &[FaceBox]) -> Vec<(u32, u32, u32, u32)> {
    let mut v: Vec<_> = boxes.iter().map(|b| (b.x, b.y, b.w, b.h)).collect();
    v.sort();
    v
}

// ---------------------------------------------------------- dense algebra

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n: usize,
    pub a: Vec<f64>,
}

impl Dense {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            a: vec![0.0; n * n],
        }
    }
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.n + c]
    }
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.a[r * self.n + c] = v;
    }
    pub fn mul(&self, o: &Dense) -> Dense {
        let n = self.n;
        let mut out = Dense::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.a[i * n + j] += aik * o.a[k * n + j];
                }
            }
        }
        out
    }
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Dense {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = Dense::identity(n);
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a.get(i, col).abs().total_cmp(&a.get(j, col).abs()))
                .unwrap();
            for j in 0..n {
                a.a.swap(col * n + j, piv * n + j);
                inv.a.swap(col * n + j, piv * n + j);
            }
            let d = a.get(col, col);
            assert!(d != 0.0, "singular matrix");
            for j in 0..n {
                a.a[col * n + j] /= d;
                inv.a[col * n + j] /= d;
            }
            for i in 0..n {
                if i != col {
                    let f = a.get(i, col);
                    if f != 0.0 {
                        for j in 0..n {
                            a.a[i * n + j] -= f * a.a[col * n + j];
                            inv.a[i * n + j] -= f * inv.a[col * n + j];
                        }
                    }
                }
            }
        }
        inv
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order and the matching unit eigenvectors.
pub fn jacobi_eigen(m: &Dense) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.n;
    let mut a = m.clone();
    let mut v = Dense::identity(n);
    let scale: f64 =
        a.a.iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = order
        .iter()
        .map(|&c| (0..n).map(|r| v.get(r, c)).collect())
        .collect();
    (values, vectors)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

// ------------------------------------------------------- fisherface oracle

/// Second implementation of the recognizer: full `D x D` covariance PCA,
/// scatter by explicit loops, and LDA through symmetric whitening by
/// `S_W^-1/2` (Jacobi) instead of a Cholesky reduction.
pub struct OracleFisher {
    pub mean: Vec<f64>,
    /// `L` composite projection directions of length `D`.
    pub directions: Vec<Vec<f64>>,
    pub train: Vec<(String, Vec<f64>)>,
    pub threshold: f64,
}

impl OracleFisher {
    pub fn fit(samples: &[(String, Vec<f64>)], margin: f64) -> Self {
        let n = samples.len();
        let d = samples[0].1.len();
        let mut labels: Vec<&str> = samples.iter().map(|s| s.0.as_str()).collect();
        labels.sort();
        labels.dedup();
        let c = labels.len();

        let mut mean = vec![0.0; d];
        for (_, x) in samples {
            for i in 0..d {
                mean[i] += x[i] / n as f64;
            }
        }
        let centred: Vec<Vec<f64>> = samples.iter().map(|(_, x)| sub(x, &mean)).collect();
        let mut cov = Dense::zeros(d);
        for x in &centred {
            for i in 0..d {
                for j in 0..d {
                    cov.a[i * d + j] += x[i] * x[j] / n as f64;
                }
            }
        }
        let (_, vecs) = jacobi_eigen(&cov);
        let p = n - c;
        let pcs: Vec<Vec<f64>> = vecs.into_iter().take(p).collect();
        let z: Vec<Vec<f64>> = centred
            .iter()
            .map(|x| pcs.iter().map(|v| dot(v, x)).collect())
            .collect();

        let mut zmean = vec![0.0; p];
        for zi in &z {
            for i in 0..p {
                zmean[i] += zi[i] / n as f64;
            }
        }
        let mut sb = Dense::zeros(p);
        let mut sw = Dense::zeros(p);
        for label in &labels {
            let members: Vec<&Vec<f64>> = z
                .iter()
                .zip(samples)
                .filter(|(_, s)| s.0 == *label)
                .map(|(zi, _)| zi)
                .collect();
            let nk = members.len() as f64;
            let mut mk = vec![0.0; p];
            for m in &members {
                for i in 0..p {
                    mk[i] += m[i] / nk;
                }
            }
            let dm = sub(&mk, &zmean);
            for i in 0..p {
                for j in 0..p {
                    sb.a[i * p + j] += nk * dm[i] * dm[j];
                }
            }
            for m in &members {
                let dx = sub(m, &mk);
                for i in 0..p {
                    for j in 0..p {
                        sw.a[i * p + j] += dx[i] * dx[j];
                    }
                }
            }
        }
        let trace: f64 = (0..p).map(|i| sw.get(i, i)).sum();
        let ridge = 1e-6 * trace / p as f64;
        for i in 0..p {
            sw.a[i * p + i] += ridge;
        }

        let (wvals, wvecs) = jacobi_eigen(&sw);
        let mut inv_sqrt = Dense::zeros(p);
        for (lam, q) in wvals.iter().zip(&wvecs) {
            for i in 0..p {
                for j in 0..p {
                    inv_sqrt.a[i * p + j] += q[i] * q[j] / lam.sqrt();
                }
            }
        }
        let whitened = inv_sqrt.mul(&sb).mul(&inv_sqrt);
        let (_, gvecs) = jacobi_eigen(&whitened);
        let l = (c - 1).min(p);
        let directions: Vec<Vec<f64>> = gvecs
            .iter()
            .take(l)
            .map(|v| {
                let u = inv_sqrt.matvec(v);
                let un = norm(&u);
                let u: Vec<f64> = u.iter().map(|x| x / un).collect();
                (0..d)
                    .map(|k| (0..p).map(|j| pcs[j][k] * u[j]).sum())
                    .collect()
            })
            .collect();

        let mut model = OracleFisher {
            mean,
            directions,
            train: Vec::new(),
            threshold: 0.0,
        };
        model.train = samples
            .iter()
            .map(|(l, x)| (l.clone(), model.project(x)))
            .collect();
        let mut worst: f64 = 0.0;
        for (i, (la, ya)) in model.train.iter().enumerate() {
            let nn = model
                .train
                .iter()
                .enumerate()
                .filter(|(j, (lb, _))| *j != i && lb == la)
                .map(|(_, (_, yb))| norm(&sub(ya, yb)))
                .fold(f64::INFINITY, f64::min);
            if nn.is_finite() {
                worst = worst.max(nn);
            }
        }
        model.threshold = worst * margin;
        model
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let dx = sub(x, &self.mean);
        self.directions.iter().map(|w| dot(w, &dx)).collect()
    }

    /// `Some(label)` for a known face, `None` for unknown, plus the distance.
    pub fn recognize(&self, x: &[f64]) -> (Option<String>, f64) {
        let y = self.project(x);
        let mut best: Option<(&str, f64)> = None;
        for (l, t) in &self.train {
            let d = norm(&sub(&y, t));
            let better = match best {
                None => true,
                Some((bl, bd)) => d < bd || (d == bd && l.as_str() < bl),
            };
            if better {
                best = Some((l, d));
            }
        }
        let (l, d) = best.unwrap();
        (
            if d <= self.threshold {
                Some(l.to_string())
            } else {
                None
            },
            d,
        )
    }
}
