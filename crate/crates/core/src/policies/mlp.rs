//! Small fully connected regression network with ReLU hidden layers,
//! inverted dropout after the first hidden layer, MSE loss and Adam.
//!
//! # File layout
//!
//! All integers are little-endian `u32`, all reals little-endian `f64`:
//!
//! | field | type |
//! |---|---|
//! | magic `b"BHMLP001"` | 8 bytes |
//! | number of layer sizes `k` | u32 |
//! | layer sizes | `k` × u32 |
//! | dropout rate | f64 |
//! | output mean, output std | 2 × f64 |
//! | input means, input stds | 2 × `sizes[0]` × f64 |
//! | per layer: weights `out × in` row-major, then `out` biases | f64 |

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BHMLP001";

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// `sizes[i+1] × sizes[i]`.
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    dropout: f64,
    input_mean: DVector<f64>,
    input_std: DVector<f64>,
    output_mean: f64,
    output_std: f64,
}

/// Gradient with the same shapes as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { epochs: 300, learning_rate: 1e-3, batch_size: 64 }
    }
}

impl Mlp {
    /// He-initialized hidden layers, a zero output layer (so the initial
    /// prediction is the label mean), zero biases and identity
    /// standardization.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], dropout: f64, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(Error::Config("layer sizes need an input, positive widths and one output".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive std");
            let output = i + 2 == sizes.len();
            weights.push(DMatrix::from_fn(w[1], w[0], |_, _| if output { 0.0 } else { normal.sample(rng) }));
            biases.push(DVector::zeros(w[1]));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
            dropout,
            input_mean: DVector::zeros(sizes[0]),
            input_std: DVector::from_element(sizes[0], 1.0),
            output_mean: 0.0,
            output_std: 1.0,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    /// Sets z-score constants from data; zero spreads become one.
    pub fn fit_standardization(&mut self, xs: &[Vec<f64>], ys: &[f64]) {
        let n = xs.len().max(1) as f64;
        let d = self.input_len();
        let mut mean = DVector::zeros(d);
        for x in xs {
            mean += DVector::from_column_slice(x);
        }
        mean /= n;
        let mut var = DVector::<f64>::zeros(d);
        for x in xs {
            let c = DVector::from_column_slice(x) - &mean;
            var += c.component_mul(&c);
        }
        var /= n;
        self.input_mean = mean;
        self.input_std = var.map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 });
        let ym = ys.iter().sum::<f64>() / n;
        let yv = ys.iter().map(|y| (y - ym).powi(2)).sum::<f64>() / n;
        self.output_mean = ym;
        self.output_std = if yv > 1e-24 { yv.sqrt() } else { 1.0 };
    }

    fn standardize(&self, x: &[f64]) -> DVector<f64> {
        (DVector::from_column_slice(x) - &self.input_mean).component_div(&self.input_std)
    }

    /// Network output in raw label units; dropout is off.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z = self.standardize(x);
        self.forward(&DMatrix::from_column_slice(z.len(), 1, z.as_slice()), None).0[(0, 0)] * self.output_std
            + self.output_mean
    }

    /// Forward pass on standardized columns. Returns the output row and the
    /// activations of every layer (input first).
    fn forward(&self, x: &DMatrix<f64>, mask: Option<&DMatrix<f64>>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let last = self.weights.len() - 1;
        let mut acts = vec![x.clone()];
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if i < last {
                z.apply(|v| *v = v.max(0.0));
                if i == 0 {
                    if let Some(m) = mask {
                        z.component_mul_assign(m);
                    }
                }
            }
            acts.push(z);
        }
        (acts.last().unwrap().clone(), acts)
    }

    /// Mean-square error and its gradient on standardized inputs `x`
    /// (one column per sample) and standardized targets `y`. `mask` is the
    /// inverted-dropout mask of the first hidden layer.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &[f64], mask: Option<&DMatrix<f64>>) -> (f64, MlpGradient) {
        let b = x.ncols() as f64;
        let (out, acts) = self.forward(x, mask);
        let err = DMatrix::from_fn(1, x.ncols(), |_, j| out[(0, j)] - y[j]);
        let loss = err.iter().map(|e| e * e).sum::<f64>() / b;
        let mut delta = err * (2.0 / b);
        let n_layers = self.weights.len();
        let mut gw = vec![DMatrix::zeros(0, 0); n_layers];
        let mut gb = vec![DVector::zeros(0); n_layers];
        for i in (0..n_layers).rev() {
            gw[i] = &delta * acts[i].transpose();
            gb[i] = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            if i > 0 {
                let mut back = self.weights[i].transpose() * &delta;
                // acts[i] is post-ReLU (and post-mask for the first hidden layer),
                // so a zero activation means a zero local derivative.
                let a = &acts[i];
                back.zip_apply(a, |d, av| {
                    if av <= 0.0 {
                        *d = 0.0
                    }
                });
                if i == 1 {
                    if let Some(m) = mask {
                        back.component_mul_assign(m);
                    }
                }
                delta = back;
            }
        }
        (loss, MlpGradient { weights: gw, biases: gb })
    }

    /// Parameters in storage order, for finite-difference checks.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.transpose().iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (r, c) = w.shape();
            *w = DMatrix::from_row_slice(r, c, &p[k..k + r * c]);
            k += r * c;
            b.copy_from_slice(&p[k..k + r]);
            k += r;
        }
    }

    /// Draws an inverted-dropout mask for the first hidden layer.
    fn dropout_mask<R: Rng + ?Sized>(&self, cols: usize, rng: &mut R) -> Option<DMatrix<f64>> {
        (self.dropout > 0.0).then(|| {
            let keep = 1.0 - self.dropout;
            DMatrix::from_fn(self.sizes[1], cols, |_, _| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            out.write_all(&(s as u32).to_le_bytes())?;
        }
        let mut reals = vec![self.dropout, self.output_mean, self.output_std];
        reals.extend(self.input_mean.iter());
        reals.extend(self.input_std.iter());
        reals.extend(self.params());
        for r in reals {
            out.write_all(&r.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Config("not a model file".into()));
        }
        let mut u = [0u8; 4];
        let mut read_u32 = |input: &mut R| -> Result<usize> {
            input.read_exact(&mut u)?;
            Ok(u32::from_le_bytes(u) as usize)
        };
        let k = read_u32(&mut input)?;
        if !(2..=64).contains(&k) {
            return Err(Error::Config(format!("model file declares {k} layer sizes")));
        }
        let sizes = (0..k).map(|_| read_u32(&mut input)).collect::<Result<Vec<_>>>()?;
        let read_f64 = |input: &mut R| -> Result<f64> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let dropout = read_f64(&mut input)?;
        let mut model = Self::new(&sizes, dropout, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        model.output_mean = read_f64(&mut input)?;
        model.output_std = read_f64(&mut input)?;
        let d = sizes[0];
        model.input_mean = DVector::from_iterator(d, (0..d).map(|_| read_f64(&mut input)).collect::<Result<Vec<_>>>()?);
        model.input_std = DVector::from_iterator(d, (0..d).map(|_| read_f64(&mut input)).collect::<Result<Vec<_>>>()?);
        let n_params = model.params().len();
        let p = (0..n_params).map(|_| read_f64(&mut input)).collect::<Result<Vec<_>>>()?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("model file holds non-finite parameters".into()));
        }
        model.set_params(&p);
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn flatten(g: &MlpGradient) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in g.weights.iter().zip(&g.biases) {
        out.extend(w.transpose().iter());
        out.extend(b.iter());
    }
    out
}

/// Mini-batch Adam with a cosine-decayed step on the mean-square error. Standardization constants are
/// refit on `xs, ys`. Returns the mean training loss of every epoch, in
/// standardized label units.
pub fn train<R: Rng + ?Sized>(
    mut model: Mlp,
    xs: &[Vec<f64>],
    ys: &[f64],
    settings: &TrainSettings,
    rng: &mut R,
) -> Result<(Mlp, Vec<f64>)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Contract("training needs a non-empty dataset with one label per sample".into()));
    }
    if xs.iter().any(|x| x.len() != model.input_len()) {
        return Err(Error::Contract(format!("every sample needs {} features", model.input_len())));
    }
    model.fit_standardization(xs, ys);
    let d = model.input_len();
    let zx: Vec<DVector<f64>> = xs.iter().map(|x| model.standardize(x)).collect();
    let zy: Vec<f64> = ys.iter().map(|y| (y - model.output_mean) / model.output_std).collect();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut params = model.params();
    let mut adam = Adam::new(params.len());
    let batch = settings.batch_size.max(1);
    let mut curve = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        // Cosine decay to 1% of the base rate.
        let progress = epoch as f64 / settings.epochs.max(1) as f64;
        let lr = settings.learning_rate * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let x = DMatrix::from_fn(d, chunk.len(), |r, c| zx[chunk[c]][r]);
            let y: Vec<f64> = chunk.iter().map(|&i| zy[i]).collect();
            let mask = model.dropout_mask(chunk.len(), rng);
            let (loss, grad) = model.loss_and_gradient(&x, &y, mask.as_ref());
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss became {loss} in epoch {epoch}; try a smaller learning rate"
                )));
            }
            total += loss * chunk.len() as f64;
            adam.step(&mut params, &flatten(&grad), lr);
            model.set_params(&params);
        }
        curve.push(total / xs.len() as f64);
    }
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut r = rng(3);
        let mut model = Mlp::new(&[3, 5, 4, 1], 0.0, &mut r).unwrap();
        let n = model.params().len();
        model.set_params(&(0..n).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let x = DMatrix::from_fn(3, 7, |_, _| r.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..7).map(|_| r.random_range(-1.0..1.0)).collect();
        let (_, g) = model.loss_and_gradient(&x, &y, None);
        let analytic = flatten(&g);
        let p0 = model.params();
        let mut worst: f64 = 0.0;
        for i in 0..p0.len() {
            let h = 1e-6;
            let mut m = model.clone();
            let mut p = p0.clone();
            p[i] += h;
            m.set_params(&p);
            let up = m.loss_and_gradient(&x, &y, None).0;
            p[i] -= 2.0 * h;
            m.set_params(&p);
            let down = m.loss_and_gradient(&x, &y, None).0;
            let num = (up - down) / (2.0 * h);
            worst = worst.max((num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-6));
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    #[test]
    fn constant_labels_are_learned() {
        let mut r = rng(1);
        let model = Mlp::new(&[2, 8, 1], 0.2, &mut r).unwrap();
        let xs: Vec<Vec<f64>> = (0..50).map(|_| vec![r.random(), r.random()]).collect();
        let ys = vec![3.5; 50];
        let settings = TrainSettings { epochs: 50, learning_rate: 1e-3, batch_size: 10 };
        let (m, curve) = train(model, &xs, &ys, &settings, &mut r).unwrap();
        assert!(*curve.last().unwrap() < 1e-12);
        for x in &xs {
            assert!((m.predict(x) - 3.5).abs() <= 1e-3, "{}", m.predict(x));
        }
    }

    #[test]
    fn linear_target_loss_drops_a_hundredfold() {
        let mut r = rng(2);
        let model = Mlp::new(&[3, 32, 32, 1], 0.0, &mut r).unwrap();
        let xs: Vec<Vec<f64>> = (0..256).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[0] - x[1] + 0.5 * x[2] + 1.0).collect();
        let settings = TrainSettings { epochs: 200, learning_rate: 1e-3, batch_size: 32 };
        let (_, curve) = train(model, &xs, &ys, &settings, &mut r).unwrap();
        assert!(curve[0] / curve[199] >= 100.0, "{} -> {}", curve[0], curve[199]);
    }

    #[test]
    fn shuffled_labels_fit_worse() {
        let mut r = rng(4);
        let xs: Vec<Vec<f64>> = (0..200).map(|_| (0..2).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] * x[1] + x[0]).collect();
        let mut shuffled = ys.clone();
        shuffled.shuffle(&mut r);
        let settings = TrainSettings { epochs: 40, learning_rate: 1e-3, batch_size: 16 };
        let m1 = Mlp::new(&[2, 16, 16, 1], 0.0, &mut rng(9)).unwrap();
        let m2 = m1.clone();
        let (_, a) = train(m1, &xs, &ys, &settings, &mut rng(10)).unwrap();
        let (_, b) = train(m2, &xs, &shuffled, &settings, &mut rng(10)).unwrap();
        assert!(a.last().unwrap() < b.last().unwrap());
    }

    #[test]
    fn huge_learning_rate_is_reported() {
        let mut r = rng(5);
        let model = Mlp::new(&[1, 4, 1], 0.0, &mut r).unwrap();
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let settings = TrainSettings { epochs: 50, learning_rate: f64::INFINITY, batch_size: 4 };
        assert!(matches!(train(model, &xs, &ys, &settings, &mut r), Err(Error::Divergence(_))));
    }

    #[test]
    fn inference_is_repeatable_and_file_roundtrips() {
        let mut r = rng(6);
        let model = Mlp::new(&[4, 6, 6, 1], 0.3, &mut r).unwrap();
        let xs: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| r.random()).collect()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.iter().sum()).collect();
        let (m, _) = train(model, &xs, &ys, &TrainSettings { epochs: 3, ..Default::default() }, &mut r).unwrap();
        assert_eq!(m.predict(&xs[0]).to_bits(), m.predict(&xs[0]).to_bits());
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = Mlp::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(Mlp::read_from(&b"garbage!"[..]).is_err());
    }
}
