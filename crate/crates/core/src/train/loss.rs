//! Regression and smoothness losses.
//!
//! Spectral and RGB supervision are both mean squared errors in μ-law space.
//! The smoothness term sums, over the six planes, the mean squared forward
//! difference along both grid axes.

use crate::error::{Error, Result};
use crate::field::{PlaneVars, TriplaneSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(Error::Config("empty loss batch".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Spectral loss over μ-law predictions and targets.
pub fn loss_spec(pred: &[f64], target: &[f64]) -> Result<f64> {
    mse(pred, target)
}

/// RGB loss over RGB-mode predictions and μ-law grayscale targets.
pub fn loss_rgb(pred: &[f64], target: &[f64]) -> Result<f64> {
    mse(pred, target)
}

pub fn loss_tv(tp: &TriplaneSet) -> f64 {
    let mut tape = Tape::new();
    let planes = tp.bind(&mut tape);
    let v = tv_vars(&mut tape, &planes).expect("planes are valid grids");
    tape.value(v).item()
}

pub fn mse_vars(tape: &mut Tape<'_>, pred: Var, target: Vec<f64>) -> Result<Var> {
    let n = tape.value(pred).len();
    if n != target.len() {
        return Err(Error::LengthMismatch(n, target.len()));
    }
    let t = tape.constant(Tensor::new(&[n], target)?);
    let diff = tape.sub(pred, t)?;
    let sq = tape.square(diff)?;
    tape.mean(sq)
}

pub fn tv_vars(tape: &mut Tape<'_>, planes: &PlaneVars) -> Result<Var> {
    let mut total = tape.total_variation(planes.0[0])?;
    for &p in &planes.0[1..] {
        let tv = tape.total_variation(p)?;
        total = tape.add(total, tv)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coords::WavelengthAxis;
    use crate::field::{init_triplanes, plane_extents};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_examples() {
        let t = [0.2, 0.5, 0.9];
        assert_eq!(loss_spec(&t, &t).unwrap(), 0.0);
        let p: Vec<f64> = t.iter().map(|v| v + 0.1).collect();
        assert!((loss_spec(&p, &t).unwrap() - 0.01).abs() < 1e-15);
        let p: Vec<f64> = t.iter().map(|v| v - 0.2).collect();
        assert!((loss_rgb(&p, &t).unwrap() - 0.04).abs() < 1e-15);
        assert!(loss_spec(&[1.0], &[1.0, 2.0]).is_err());
        assert!(loss_rgb(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn mse_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<f64> = (0..100).map(|_| rng.gen()).collect();
        let t: Vec<f64> = (0..100).map(|_| rng.gen()).collect();
        let mut acc = 0.0;
        for i in 0..100 {
            acc += (p[i] - t[i]).powi(2);
        }
        assert!((loss_spec(&p, &t).unwrap() - acc / 100.0).abs() < 1e-12);
        assert!((loss_rgb(&p, &t).unwrap() - acc / 100.0).abs() < 1e-12);
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::from_vec(p));
        let l = mse_vars(&mut tape, pv, t).unwrap();
        assert!((tape.value(l).item() - acc / 100.0).abs() < 1e-12);
    }

    #[test]
    fn tv_of_constant_planes_is_zero() {
        let axis = WavelengthAxis::new(400.0, 700.0, 3).unwrap();
        let mut tp = init_triplanes(2, [3, 4, 5], axis, 0).unwrap();
        for p in tp.planes_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.3);
        }
        assert_eq!(loss_tv(&tp), 0.0);
    }

    #[test]
    fn tv_is_homogeneous_of_degree_two() {
        let axis = WavelengthAxis::new(400.0, 700.0, 3).unwrap();
        let mut tp = init_triplanes(2, [3, 4, 5], axis, 1).unwrap();
        let base = loss_tv(&tp);
        for p in tp.planes_mut() {
            p.data_mut().iter_mut().for_each(|v| *v *= 2.0);
        }
        assert!((loss_tv(&tp) - 4.0 * base).abs() < 1e-14);
    }

    #[test]
    fn tv_sums_planes() {
        // a single non-constant plane: one channel, [[0,1],[0,1]] -> 0.5
        let axis = WavelengthAxis::new(400.0, 700.0, 2).unwrap();
        let dims = [2, 2, 2];
        let mut planes = plane_extents(dims, 2).map(|[r, c]| Tensor::zeros(&[r, c, 1]));
        planes[0] = Tensor::new(&[2, 2, 1], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let tp = TriplaneSet::from_planes(1, dims, axis, planes).unwrap();
        assert_eq!(loss_tv(&tp), 0.5);
    }
}
