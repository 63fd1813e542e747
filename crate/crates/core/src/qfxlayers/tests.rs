use std::f64::consts::LN_2;

use super::*;
use crate::autograd::{Adam, AdamConfig, ClampGrad, Eval, Ops, Optimizer, ParamStore, Tape};
use crate::conformance::{oracle_cast, raw_to_f64};
use crate::fxcore::{self, FxFormat, OverflowMode, RoundMode};
use crate::{Error, Tensor};

fn s41() -> FxFormat {
    FxFormat::signed(4, 1).unwrap()
}

fn oracle(x: f64, f: &FxFormat) -> f64 {
    raw_to_f64(oracle_cast(x, f).unwrap().raw, f.fbit())
}

#[test]
fn fixed_cast_forward_and_grad() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(0.3), true);
    let y = qfx_cast(&mut t, &x, &DiffCastConfig::fixed(s41()), None).unwrap();
    assert_eq!(t.value(&y).data(), &[0.25]);
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0]);
}

fn ibit_grad(x0: f64, i0: f64, fmt: FxFormat) -> (f64, f64, f64) {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(x0), true);
    let i = t.leaf(Tensor::scalar(i0), true);
    let cfg = DiffCastConfig::learnable(fmt, Granularity::PerTensor);
    let y = qfx_cast(&mut t, &x, &cfg, Some(&i)).unwrap();
    let g = t.backward(y).unwrap();
    (
        t.value(&y).data()[0],
        g.get(x).unwrap().data()[0],
        g.get(i).unwrap().data()[0],
    )
}

#[test]
fn learnable_cast_gradient_closed_form() {
    // x_q = 0.25, so d x_q / dI = ln2 * (0.25 - 0.3)
    let (y, gx, gi) = ibit_grad(0.3, 1.0, s41());
    assert_eq!(y, 0.25);
    assert_eq!(gx, 1.0);
    assert!((gi - LN_2 * (0.25 - 0.3)).abs() < 1e-12);
    assert!((gi - (-0.034657359)).abs() < 1e-8);
}

#[test]
fn representable_input_has_zero_ibit_gradient() {
    let (y, _, gi) = ibit_grad(0.625, 1.0, s41());
    assert_eq!(y, 0.625);
    assert_eq!(gi, 0.0);
}

#[test]
fn ibit_gradient_matches_closed_form_over_many_inputs() {
    let f = FxFormat::signed(8, 0).unwrap();
    for k in 0..500 {
        let x0 = -3.9 + k as f64 * 0.0157;
        for i0 in [1.2, 2.0, 2.7, 3.4] {
            let (y, gx, gi) = ibit_grad(x0, i0, f);
            let ibit = i0.clamp(0.0, 8.0).round_ties_even() as u32;
            let fmt = f.with_ibit(ibit).unwrap();
            assert_eq!(y, fxcore::cast(x0, &fmt).unwrap());
            assert_eq!(gx, 1.0);
            assert!((gi - LN_2 * (y - x0)).abs() < 1e-9, "x={x0} I={i0}");
        }
    }
}

#[test]
fn clipped_policy_kills_saturated_gradients() {
    let mut t = Tape::with_clamp_grad(ClampGrad::Clipped);
    let x = t.leaf(Tensor::vector(vec![0.3, 5.0]), true);
    let i = t.leaf(Tensor::scalar(1.0), true);
    let cfg = DiffCastConfig::learnable(s41(), Granularity::PerTensor);
    let y = qfx_cast(&mut t, &x, &cfg, Some(&i)).unwrap();
    assert_eq!(t.value(&y).data(), &[0.25, 0.875]);
    let s = t.sum(&y).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0]);
    // saturated element contributes ln2 * x_q through the 2^-fbit factor only
    let expect = LN_2 * (0.25 - 0.3) + LN_2 * 0.875;
    assert!((g.get(i).unwrap().data()[0] - expect).abs() < 1e-12);
}

#[test]
fn effective_ibit_examples() {
    assert_eq!(effective_ibit_values(&Tensor::scalar(1.3), 4), vec![1]);
    assert_eq!(effective_ibit_values(&Tensor::scalar(-2.0), 4), vec![0]);
    assert_eq!(effective_ibit_values(&Tensor::scalar(9.7), 4), vec![4]);
    assert_eq!(effective_ibit_values(&Tensor::scalar(2.5), 4), vec![2]);
    assert_eq!(
        effective_ibit_values(&Tensor::vector(vec![0.4, 3.6]), 4),
        vec![0, 4]
    );
}

#[test]
fn initial_ibit_covers_range() {
    let x = Tensor::vector(vec![0.5, -13.3125, 2.0]);
    // log2(13.3125) + 1 = 4.73 -> 5, plus sign bit
    assert_eq!(
        initial_ibit(&x, 8, true, Granularity::PerTensor).data(),
        &[6.0]
    );
    assert_eq!(
        initial_ibit(&x, 4, true, Granularity::PerTensor).data(),
        &[4.0]
    );
    assert_eq!(
        initial_ibit(&Tensor::vector(vec![0.0]), 8, true, Granularity::PerTensor).data(),
        &[0.0]
    );
    let m = Tensor::matrix(2, 2, vec![0.1, 3.0, -0.2, 1.0]).unwrap();
    assert_eq!(
        initial_ibit(&m, 8, false, Granularity::PerChannel).data(),
        &[0.0, 3.0]
    );
    let lbp = LearnableBinaryPoint::init_from(&m, 8, true, Granularity::PerChannel);
    assert_eq!(lbp.granularity(), Granularity::PerChannel);
    assert_eq!(lbp.effective(), vec![0, 4]);
}

fn sites(fmt: FxFormat) -> BinarySites {
    let c = Some(DiffCastConfig::fixed(fmt));
    BinarySites {
        lhs: CastSite::new("a", c),
        rhs: CastSite::new("b", c),
        out: CastSite::new("o", c),
    }
}

fn eval_binary(
    op: fn(&mut Eval, &ParamStore, &BinarySites, &Tensor, &Tensor) -> crate::Result<Tensor>,
    a: f64,
    b: f64,
    fmt: FxFormat,
) -> crate::Result<f64> {
    let p = ParamStore::new();
    op(
        &mut Eval,
        &p,
        &sites(fmt),
        &Tensor::scalar(a),
        &Tensor::scalar(b),
    )
    .map(|t| t.data()[0])
}

#[test]
fn arithmetic_examples() {
    let f = s41();
    // 0.25 + 0.25
    assert_eq!(eval_binary(qfx_add, 0.3, 0.2, f).unwrap(), 0.5);
    assert_eq!(oracle(oracle(0.3, &f) + oracle(0.2, &f), &f), 0.5);
    // 0.25 * 0.25 = 0.0625 -> 0.5 LSB -> rounds up to 1/8
    assert_eq!(eval_binary(qfx_mul, 0.3, 0.3, f).unwrap(), 0.125);
    assert_eq!(oracle(oracle(0.3, &f) * oracle(0.3, &f), &f), 0.125);
    for x in [0.3, -0.61, 0.9, -2.0] {
        assert_eq!(
            eval_binary(qfx_add, x, 0.0, f).unwrap(),
            fxcore::cast(x, &f).unwrap()
        );
    }
    assert_eq!(eval_binary(qfx_sub, 0.3, 0.2, f).unwrap(), 0.0);
    assert_eq!(eval_binary(qfx_div, 0.5, 0.25, f).unwrap(), 0.875);
    assert!(matches!(
        eval_binary(qfx_div, 0.5, 0.01, f),
        Err(Error::DivisionByZero(0))
    ));
    assert_eq!(eval_binary(qfx_residual, 0.3, 0.2, f).unwrap(), 0.5);
}

#[test]
fn add_and_mul_commute_with_equal_configs() {
    let f = FxFormat::signed(6, 2).unwrap();
    for k in 0..200 {
        let a = -2.3 + k as f64 * 0.023;
        let b = 1.7 - k as f64 * 0.019;
        assert_eq!(
            eval_binary(qfx_add, a, b, f).unwrap(),
            eval_binary(qfx_add, b, a, f).unwrap()
        );
        assert_eq!(
            eval_binary(qfx_mul, a, b, f).unwrap(),
            eval_binary(qfx_mul, b, a, f).unwrap()
        );
    }
}

#[test]
fn qfx_ops_are_differentiable() {
    let p = ParamStore::new();
    let mut t = Tape::new();
    let a = t.leaf(Tensor::scalar(0.3), true);
    let b = t.leaf(Tensor::scalar(0.6), true);
    let y = qfx_mul(&mut t, &p, &sites(FxFormat::signed(8, 2).unwrap()), &a, &b).unwrap();
    let g = t.backward(y).unwrap();
    // STE through every cast: d(qa*qb)/da = qb
    assert_eq!(
        g.get(a).unwrap().data(),
        &[fxcore::cast(0.6, &FxFormat::signed(8, 2).unwrap()).unwrap()]
    );
}

#[test]
fn batchnorm_fold_examples() {
    let eps = 1e-5;
    let v = |x: f64| Tensor::vector(vec![x]);
    let (a, e) = fold_batchnorm(&v(1.0), &v(0.0), &v(0.0), &v(1.0 - eps), eps).unwrap();
    assert!((a.data()[0] - 1.0).abs() < 1e-12 && e.data()[0].abs() < 1e-12);
    let (a, e) = fold_batchnorm(&v(2.0), &v(1.0), &v(0.5), &v(1.0 - eps), eps).unwrap();
    assert!((a.data()[0] - 2.0).abs() < 1e-12 && e.data()[0].abs() < 1e-12);
    let (a, e) = fold_batchnorm(&v(0.0), &v(0.7), &v(3.0), &v(2.0), eps).unwrap();
    assert_eq!((a.data()[0], e.data()[0]), (0.0, 0.7));
    assert!(fold_batchnorm(&v(1.0), &v(0.0), &v(0.0), &v(1.0), 0.0).is_err());
}

fn bn_sites(fmt: FxFormat) -> BatchNormSites {
    BatchNormSites {
        mul: sites(fmt),
        add: sites(fmt),
    }
}

#[test]
fn batchnorm_example_against_oracle() {
    let f = FxFormat::signed(8, 4).unwrap();
    let p = ParamStore::new();
    let out = qfx_batchnorm(
        &mut Eval,
        &p,
        &bn_sites(f),
        &Tensor::matrix(1, 1, vec![0.3]).unwrap(),
        &Tensor::vector(vec![2.0]),
        &Tensor::vector(vec![0.25]),
    )
    .unwrap();
    // integer oracle chain: cast(0.3)=0.3125, *2 = 0.625, +0.25 = 0.875
    let prod = oracle(oracle(2.0, &f) * oracle(0.3, &f), &f);
    let want = oracle(oracle(prod, &f) + oracle(0.25, &f), &f);
    assert_eq!(want, 0.875);
    assert_eq!(out.data(), &[want]);
}

#[test]
fn identity_batchnorm_is_cast_identity() {
    let f = FxFormat::signed(8, 4).unwrap();
    let p = ParamStore::new();
    let xs: Vec<f64> = (-20..20).map(|k| k as f64 * 0.1875).collect();
    let x = Tensor::matrix(xs.len(), 1, xs.clone()).unwrap();
    let out = qfx_batchnorm(
        &mut Eval,
        &p,
        &bn_sites(f),
        &x,
        &Tensor::vector(vec![1.0]),
        &Tensor::vector(vec![0.0]),
    )
    .unwrap();
    assert_eq!(out.data(), &xs[..]);
}

#[test]
fn batchnorm_channel_mismatch() {
    let p = ParamStore::new();
    let x = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
    let r = qfx_batchnorm(
        &mut Eval,
        &p,
        &BatchNormSites::identity("bn"),
        &x,
        &Tensor::vector(vec![1.0, 1.0]),
        &Tensor::vector(vec![0.0, 0.0]),
    );
    assert!(matches!(r, Err(Error::Shape(_))));
}

#[test]
fn cast_site_requires_its_parameter() {
    let site = CastSite::new(
        "act",
        Some(DiffCastConfig::learnable(s41(), Granularity::PerTensor)),
    );
    let p = ParamStore::new();
    assert!(matches!(
        site.forward(&mut Eval, &p, &Tensor::scalar(0.3)),
        Err(Error::Config(_))
    ));
    let p = ParamStore::from([("act.I".to_string(), Tensor::scalar(1.4))]);
    assert_eq!(
        site.forward(&mut Eval, &p, &Tensor::scalar(0.3))
            .unwrap()
            .data(),
        &[0.25]
    );
    assert_eq!(site.effective_ibits(&p), vec![1]);
}

#[test]
fn deploy_equals_train_on_learnable_sites() {
    let fmt = FxFormat::new(6, 2, true, RoundMode::RndConv, OverflowMode::WrapSigned).unwrap();
    let site = CastSite::new(
        "s",
        Some(DiffCastConfig::learnable(fmt, Granularity::PerChannel)),
    );
    let p = ParamStore::from([("s.I".to_string(), Tensor::vector(vec![1.2, 3.8, 0.1]))]);
    let data: Vec<f64> = (0..30).map(|k| (k as f64 * 0.77).sin() * 5.0).collect();
    let x = Tensor::matrix(10, 3, data).unwrap();
    let deployed = site.forward(&mut Eval, &p, &x).unwrap();
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let trained = site.forward(&mut t, &p, &xv).unwrap();
    assert!(t.value(&trained).bit_eq(&deployed));
    // and per channel it equals the plain cast at that channel's ibit
    for (k, v) in deployed.data().iter().enumerate() {
        let ibit = [1, 4, 0][k % 3];
        assert_eq!(
            *v,
            fxcore::cast(x.data()[k], &fmt.with_ibit(ibit).unwrap()).unwrap()
        );
    }
}

#[test]
fn learnable_binary_point_moves_toward_precision() {
    // Targets on a 1/8 grid need at least 3 fractional bits.
    let w = 8;
    let fmt = FxFormat::signed(w, 0).unwrap();
    let xs: Vec<f64> = (-16..16).map(|k| k as f64 / 8.0 + 1.0 / 16.0).collect();
    let x = Tensor::vector(xs.clone());
    let site = CastSite::new(
        "q",
        Some(DiffCastConfig::learnable(fmt, Granularity::PerTensor)),
    );
    let mut params = ParamStore::from([("q.I".to_string(), Tensor::scalar(w as f64))]);
    let mut opt = Adam::new(AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    });
    for _ in 0..200 {
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let y = site.forward(&mut t, &params, &xv).unwrap();
        let d = t.sub(&y, &xv).unwrap();
        let sq = t.mul(&d, &d).unwrap();
        let loss = t.mean(&sq).unwrap();
        let g = t.backward(loss).unwrap();
        opt.step(&mut params, &g.by_param()).unwrap();
    }
    let ibit = site.effective_ibits(&params)[0];
    assert!(ibit < w, "binary point did not move: {ibit}");
}
