//! Trace evaluators against complex power-flow arithmetic.

mod common;

use common::{flows, rel_close, setup, FIXTURES};
use num_complex::Complex64;
use opfbound::{eval_traces, VoltageVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_x(n: usize, rng: &mut impl Rng) -> VoltageVector {
    VoltageVector((0..2 * n).map(|_| rng.gen_range(-1.2..1.2)).collect())
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, b| a.max(b.abs()))
}

#[test]
fn traces_match_complex_flows_on_every_fixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for name in FIXTURES {
        let s = setup(name);
        for _ in 0..100 {
            let x = random_x(s.case.n_bus(), &mut rng);
            let v = x.phasors();
            let rep = eval_traces(&s.mats, &x);
            let f = flows(&s.case, &v);
            let sb = max_abs(f.s_bus.iter().map(|z| z.norm()));
            for k in 0..s.case.n_bus() {
                assert!(rel_close(rep.p[k], f.s_bus[k].re, sb, 1e-10), "{name} P{k}");
                assert!(rel_close(rep.q[k], f.s_bus[k].im, sb, 1e-10), "{name} Q{k}");
                assert!(rel_close(rep.v2[k], v[k].norm_sqr(), 1.0, 1e-12));
            }
            let sl = max_abs(f.s_from.iter().chain(&f.s_to).map(|z| z.norm()));
            for l in 0..s.case.branches.len() {
                assert!(rel_close(rep.p_from[l], f.s_from[l].re, sl, 1e-10), "{name} Pf{l}");
                assert!(rel_close(rep.q_from[l], f.s_from[l].im, sl, 1e-10), "{name} Qf{l}");
                assert!(rel_close(rep.p_to[l], f.s_to[l].re, sl, 1e-10), "{name} Pt{l}");
                assert!(rel_close(rep.q_to[l], f.s_to[l].im, sl, 1e-10), "{name} Qt{l}");
                let br = &s.case.branches[l];
                let w = v[br.from] * v[br.to].conj();
                assert!(rel_close(rep.cos_term[l], w.re, w.norm(), 1e-12));
                assert!(rel_close(rep.sin_term[l], w.im, w.norm(), 1e-12));
            }
            let r = s.case.ref_bus();
            assert!(rel_close(rep.vq_ref2, v[r].im * v[r].im, 1.0, 1e-12));
        }
    }
}

#[test]
fn injections_match_admittance_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = setup("case9");
    let adm = opfbound::build_admittance(&s.case).unwrap();
    for _ in 0..100 {
        let x = random_x(9, &mut rng);
        let v = x.phasors();
        let iv = adm.mul(&v);
        let rep = eval_traces(&s.mats, &x);
        for k in 0..9 {
            let sk = v[k] * iv[k].conj();
            assert!(rel_close(rep.p[k], sk.re, sk.norm().max(1.0), 1e-10));
            assert!(rel_close(rep.q[k], sk.im, sk.norm().max(1.0), 1e-10));
        }
    }
}

#[test]
fn zero_voltage_gives_zero_traces() {
    let s = setup("case14");
    let rep = eval_traces(&s.mats, &VoltageVector(vec![0.0; 28]));
    assert!(rep.p.iter().chain(&rep.q).chain(&rep.v2).all(|&t| t == 0.0));
    assert!(rep.p_from.iter().chain(&rep.sin_term).all(|&t| t == 0.0));
}

#[test]
fn flat_voltage_on_lossless_two_bus_has_no_flow() {
    let s = setup("case2");
    let x = VoltageVector::from_phasors(&[Complex64::new(1.0, 0.0); 2]);
    let rep = eval_traces(&s.mats, &x);
    assert!(rep.p_from[0].abs() < 1e-15 && rep.q_from[0].abs() < 1e-15);
    assert!(rep.v2.iter().all(|&v| (v - 1.0).abs() < 1e-15));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn angle_difference_from_trace_ratio(
            xs in proptest::collection::vec(-1.5f64..1.5, 18),
        ) {
            let s = setup("case9");
            let x = VoltageVector(xs);
            let v = x.phasors();
            let rep = eval_traces(&s.mats, &x);
            for (l, br) in s.case.branches.iter().enumerate() {
                prop_assume!(v[br.from].norm() > 1e-3 && v[br.to].norm() > 1e-3);
                let d = v[br.from].arg() - v[br.to].arg();
                let t = rep.sin_term[l].atan2(rep.cos_term[l]);
                let diff = (t - d).rem_euclid(std::f64::consts::PI);
                prop_assert!(diff < 1e-9 || std::f64::consts::PI - diff < 1e-9);
            }
            for k in 0..9 {
                prop_assert!(rep.v2[k] >= 0.0);
            }
        }
    }
}
