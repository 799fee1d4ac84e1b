//! Three-layer MLP mapping a fused feature to a μ-law-space reflectance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const HIDDEN: usize = 64;

/// `C -> 64 -> 64 -> 1`, ReLU after the two hidden layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights {
    pub layers: [(Tensor, Tensor); 3],
}

impl MlpWeights {
    pub fn init(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |fan_in: usize, fan_out: usize| {
            (
                Tensor::uniform(&[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), &mut rng),
                Tensor::zeros(&[fan_out]),
            )
        };
        MlpWeights { layers: [layer(channels, HIDDEN), layer(HIDDEN, HIDDEN), layer(HIDDEN, 1)] }
    }

    pub fn zeros(channels: usize) -> Self {
        let layer = |i: usize, o: usize| (Tensor::zeros(&[i, o]), Tensor::zeros(&[o]));
        MlpWeights { layers: [layer(channels, HIDDEN), layer(HIDDEN, HIDDEN), layer(HIDDEN, 1)] }
    }

    pub fn from_parts(tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != 6 {
            return Err(Error::Format(format!("mlp needs 6 tensors, got {}", tensors.len())));
        }
        let mut it = tensors.into_iter();
        let layers: [(Tensor, Tensor); 3] = std::array::from_fn(|_| (it.next().unwrap(), it.next().unwrap()));
        let mut prev = layers[0].0.shape()[0];
        for (k, (w, b)) in layers.iter().enumerate() {
            let s = w.shape();
            let out = if k == 2 { 1 } else { HIDDEN };
            if s.len() != 2 || s[0] != prev || s[1] != out || b.shape() != [out] {
                return Err(Error::shape("mlp", format!("layer {k}: {:?} / {:?}", s, b.shape())));
            }
            prev = out;
        }
        Ok(MlpWeights { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.shape()[0]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> MlpVars {
        MlpVars(std::array::from_fn(|k| (tape.param(&self.layers[k].0), tape.param(&self.layers[k].1))))
    }

    /// Unbounded μ-law-space prediction for one fused feature.
    pub fn decode(&self, f_u: &[f64]) -> Result<f64> {
        if f_u.len() != self.input_dim() {
            return Err(Error::LengthMismatch(f_u.len(), self.input_dim()));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(Tensor::new(&[1, f_u.len()], f_u.to_vec())?);
        let y = decode_vars(&mut tape, &vars, x)?;
        Ok(tape.value(y).item())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MlpVars(pub [(Var, Var); 3]);

impl MlpVars {
    pub fn all(&self) -> Vec<Var> {
        self.0.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// `[N, C] -> [N]`.
pub fn decode_vars(tape: &mut Tape<'_>, mlp: &MlpVars, x: Var) -> Result<Var> {
    let n = tape.value(x).shape()[0];
    let mut h = x;
    for (k, &(w, b)) in mlp.0.iter().enumerate() {
        h = tape.matmul(h, w)?;
        h = tape.add_bias(h, b)?;
        if k < 2 {
            h = tape.relu(h)?;
        }
    }
    tape.reshape(h, &[n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zero_weights_give_zero() {
        let mlp = MlpWeights::zeros(8);
        assert_eq!(mlp.decode(&[3.0; 8]).unwrap(), 0.0);
    }

    #[test]
    fn constructed_pass_through() {
        let mut mlp = MlpWeights::zeros(4);
        mlp.layers[0].0.data_mut()[0] = 1.0; // input 0 -> hidden 0
        mlp.layers[1].0.data_mut()[0] = 1.0; // hidden 0 -> hidden 0
        mlp.layers[2].0.data_mut()[0] = 1.0; // hidden 0 -> out
        for x in [-2.0, 0.0, 0.7, 3.5] {
            let y = mlp.decode(&[x, 9.0, -9.0, 1.0]).unwrap();
            assert_eq!(y, f64::max(f64::max(x, 0.0), 0.0));
        }
    }

    #[test]
    fn matches_scalar_loop() {
        let mlp = MlpWeights::init(6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mlp = mlp;
        for t in mlp.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut h = x.clone();
            for (k, (w, b)) in mlp.layers.iter().enumerate() {
                let (fi, fo) = (w.shape()[0], w.shape()[1]);
                let mut next = vec![0.0; fo];
                for j in 0..fo {
                    let mut acc = b.data()[j];
                    for i in 0..fi {
                        acc += h[i] * w.data()[i * fo + j];
                    }
                    next[j] = if k < 2 { acc.max(0.0) } else { acc };
                }
                h = next;
            }
            assert!((mlp.decode(&x).unwrap() - h[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_equals_individual() {
        let mlp = MlpWeights::init(5, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..5 * 7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let vars = mlp.bind(&mut tape);
        let x = tape.constant(Tensor::new(&[7, 5], xs.clone()).unwrap());
        let y = decode_vars(&mut tape, &vars, x).unwrap();
        for (i, &yb) in tape.value(y).data().iter().enumerate() {
            assert!((yb - mlp.decode(&xs[i * 5..(i + 1) * 5]).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn wrong_input_length() {
        assert!(MlpWeights::zeros(4).decode(&[1.0; 3]).is_err());
    }
}
