mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use specfield::coords::{from_rusin, to_rusin};
use specfield::{RusinAngles, Vec3};

#[test]
fn ten_thousand_coords_round_trip() {
    let err = common::coord_round_trip(10_000, 7);
    assert!(err < 1e-6, "max error {err:e} rad");
}

#[test]
fn wavelength_is_carried_through() {
    let c = RusinAngles::new(0.3, 0.4, 1.0).with_lambda(612.5);
    let (wi, wo) = from_rusin(c.angles, 0.25).unwrap();
    let back = to_rusin(wi, wo).unwrap().with_lambda(c.lambda);
    assert_eq!(back.lambda, 612.5);
}

fn cyclic(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(PI - d)
}

proptest! {
    #[test]
    fn half_vector_azimuth_is_free(t_h in 0.01..1.2f64, t_d in 0.01..0.35f64, p_d in 0.0..3.14f64,
                                   a in -3.1..3.1f64, b in -3.1..3.1f64) {
        let c = RusinAngles::new(t_h, t_d, p_d);
        let x = to_rusin(from_rusin(c, a).unwrap().0, from_rusin(c, a).unwrap().1).unwrap();
        let (wi, wo) = from_rusin(c, b).unwrap();
        let y = to_rusin(wi, wo).unwrap();
        prop_assert!((x.theta_h - y.theta_h).abs() < 1e-9);
        prop_assert!((x.theta_d - y.theta_d).abs() < 1e-9);
        prop_assert!(cyclic(x.phi_d, y.phi_d) < 1e-9);
    }

    #[test]
    fn swapping_directions_preserves_angles(t_i in 0.0..1.5f64, p_i in 0.0..6.28f64, t_o in 0.0..1.5f64, p_o in 0.0..6.28f64) {
        let (wi, wo) = (Vec3::spherical(t_i, p_i), Vec3::spherical(t_o, p_o));
        let (a, b) = (to_rusin(wi, wo).unwrap(), to_rusin(wo, wi).unwrap());
        prop_assert!((a.theta_h - b.theta_h).abs() < 1e-9);
        prop_assert!((a.theta_d - b.theta_d).abs() < 1e-9);
        prop_assert!(cyclic(a.phi_d, b.phi_d) < 1e-9 || a.theta_d < 1e-6);
    }
}
