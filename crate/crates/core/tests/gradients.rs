mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{composite_cases, missing_kinds, op_cases, weighted_sum, CaseResult, OP_TOLERANCE, TOLERANCE};
use specfield::{Tape, Tensor};

fn assert_all(results: &[CaseResult], tol: f64) {
    let bad: Vec<String> = results
        .iter()
        .filter(|r| !(r.check.max_rel_err < tol))
        .map(|r| format!("{}: {:.3e} at {:?}", r.name, r.check.max_rel_err, r.check.worst))
        .collect();
    assert!(bad.is_empty(), "gradient mismatches: {bad:#?}");
    assert!(results.iter().all(|r| r.check.checked > 0));
}

#[test]
fn every_op_matches_finite_differences() {
    assert_all(&op_cases(), OP_TOLERANCE);
}

#[test]
fn composites_match_finite_differences() {
    assert_all(&composite_cases(), TOLERANCE);
}

#[test]
fn suite_covers_every_op_kind() {
    let mut all = op_cases();
    all.extend(composite_cases());
    assert_eq!(missing_kinds(&all), vec![]);
}

fn grid(h: usize, w: usize, c: usize, seed: u64) -> Tensor {
    Tensor::uniform(&[h, w, c], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn bilinear_reproduces_nodes() {
    let g = grid(4, 6, 2, 1);
    let coords: Vec<[f64; 2]> = (0..4).flat_map(|i| (0..6).map(move |j| [i as f64 / 3.0, j as f64 / 5.0])).collect();
    let mut tape = Tape::new();
    let v = tape.param(&g);
    let y = tape.bilinear_sample(v, coords).unwrap();
    assert_eq!(tape.value(y).data(), g.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Each sample's four weights sum to one, so the adjoint of a plain sum
    // deposits exactly one unit of mass per sample and channel.
    #[test]
    fn bilinear_adjoint_conserves_mass(h in 2usize..7, w in 2usize..7, seed in 0u64..1000,
                                       coords in prop::collection::vec((-0.2f64..1.2, -0.2f64..1.2), 1..20)) {
        let g = grid(h, w, 3, seed);
        let n = coords.len();
        let mut tape = Tape::new();
        let v = tape.param(&g);
        let y = tape.bilinear_sample(v, coords.into_iter().map(|(a, b)| [a, b]).collect()).unwrap();
        let s = tape.sum(y).unwrap();
        let gr = tape.backward(s).unwrap().wrt(v);
        for ch in 0..3 {
            let mass: f64 = gr.data().iter().skip(ch).step_by(3).sum();
            prop_assert!((mass - n as f64).abs() < 1e-9, "channel {ch}: {mass} vs {n}");
        }
    }

    #[test]
    fn backward_is_deterministic(seed in 0u64..1000) {
        let x = Tensor::uniform(&[1, 2, 6, 5], 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let k = Tensor::uniform(&[3, 2, 3, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(seed + 1));
        let run = || {
            let mut tape = Tape::new();
            let (xv, kv) = (tape.param(&x), tape.param(&k));
            let y = tape.conv2d(xv, kv, None, 1).unwrap();
            let y = tape.relu(y).unwrap();
            let y = tape.reshape(y, &[3, 6, 5]).unwrap();
            let y = tape.channel_last(y).unwrap();
            let l = weighted_sum(&mut tape, y).unwrap();
            let g = tape.backward(l).unwrap();
            (g.wrt(xv), g.wrt(kv))
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.0.data(), b.0.data());
        prop_assert_eq!(a.1.data(), b.1.data());
    }
}
