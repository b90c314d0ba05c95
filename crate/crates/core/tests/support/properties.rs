//! Invariant suites shared by the `properties` and `acceptance` targets.

use burgers_rom::bayesopt::{expected_improvement, propose_next, BoConfig, EvalRecord, SearchBox};
use burgers_rom::burgers::{read_dataset, write_dataset, DatasetRole, GridSpec, ParametricDataset, SolutionField};
use burgers_rom::diff::{conv1d, maxpool1d, upsample_nearest, Tape, Tensor, Var};
use burgers_rom::flow::{rq_spline_forward, rq_spline_inverse, RqSplineParams};
use burgers_rom::reservoir::{init_reservoir, reservoir_step, HyperBox, RcHyperparams};
use burgers_rom::Result;
use proptest::prelude::*;

const H: f64 = 1e-5;

/// Max-norm relative error between the tape gradient and central differences of
/// `loss = Σ w ⊙ build(params)`.
fn gradient_error(params: &[Tensor], weights: &Tensor, build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let eval = |ps: &[Tensor]| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().enumerate().map(|(i, p)| tape.param(i, p).unwrap()).collect();
        let y = build(&mut tape, &vars).unwrap();
        let w = tape.constant(weights.clone()).unwrap();
        let prod = tape.mul(y, w).unwrap();
        let loss = tape.sum(prod).unwrap();
        let shapes: Vec<&[usize]> = ps.iter().map(|p| p.shape()).collect();
        (tape.value(loss).item(), tape.backward(loss).unwrap().dense(&shapes))
    };
    let (_, analytic) = eval(params);
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (i, p) in params.iter().enumerate() {
        for k in 0..p.len() {
            let mut plus = params.to_vec();
            plus[i].data_mut()[k] += H;
            let mut minus = params.to_vec();
            minus[i].data_mut()[k] -= H;
            let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * H);
            let a = analytic[i].data()[k];
            diff = diff.max((a - fd).abs());
            scale = scale.max(a.abs()).max(fd.abs());
        }
    }
    diff / scale.max(1e-12)
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, n)
}

/// Values whose magnitude stays clear of the ReLU kink by more than the FD step.
fn off_kink(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0.01f64..1.5, any::<bool>()).prop_map(|(v, neg)| if neg { -v } else { v }), n)
}

fn cases() -> ProptestConfig {
    ProptestConfig::with_cases(24)
}

pub const SUITES: &[(&str, fn())] = &[
    ("conv_gradients", conv_gradients),
    ("dense_tanh_gradients", dense_tanh_gradients),
    ("relu_gradients", relu_gradients),
    ("maxpool_gradients", maxpool_gradients),
    ("upsample_gradients", upsample_gradients),
    ("composite_network_gradients", composite_network_gradients),
    ("pool_after_upsample_is_identity", pool_after_upsample_is_identity),
    ("upsample_after_pool_is_identity_on_pooled_data", upsample_after_pool_is_identity_on_pooled_data),
    ("identity_filter_conv_is_identity", identity_filter_conv_is_identity),
    ("dataset_round_trip_is_bit_exact", dataset_round_trip_is_bit_exact),
    ("proposals_stay_in_box", proposals_stay_in_box),
    ("expected_improvement_is_nonnegative", expected_improvement_is_nonnegative),
    ("spline_is_invertible", spline_is_invertible),
    ("spline_is_monotone", spline_is_monotone),
    ("reservoir_step_respects_leaky_bound", reservoir_step_respects_leaky_bound),
    ("echo_state_contraction_at_published_settings", echo_state_contraction_at_published_settings),
];

pub fn conv_gradients() {
    proptest!(cases(), |(x in vals(2 * 3 * 9), f in vals(4 * 3 * 3), b in vals(4), w in vals(2 * 4 * 9), stride in 1usize..=2)| {
        // Stride 2 needs an odd length so the padded traversal divides evenly.
        let k_in = if stride == 1 { 8 } else { 9 };
        let k_out = if stride == 1 { 8 } else { 5 };
        let wt = tensor(&[2, 4, k_out], w[..2 * 4 * k_out].to_vec());
        let params = [tensor(&[2, 3, k_in], x[..2 * 3 * k_in].to_vec()), tensor(&[4, 3, 3], f), tensor(&[4], b)];
        let err = gradient_error(&params, &wt, &|t, v| t.conv1d(v[0], v[1], v[2], stride, true));
        prop_assert!(err < 1e-4, "relative error {err}");

    });
}

pub fn dense_tanh_gradients() {
    proptest!(cases(), |(x in vals(3 * 5), wm in vals(4 * 5), b in vals(4), w in vals(3 * 4))| {
        let params = [tensor(&[3, 5], x), tensor(&[4, 5], wm), tensor(&[4], b)];
        let err = gradient_error(&params, &tensor(&[3, 4], w), &|t, v| {
            let y = t.dense(v[0], v[1], v[2])?;
            t.tanh(y)
        });
        prop_assert!(err < 1e-4, "relative error {err}");

    });
}

pub fn relu_gradients() {
    proptest!(cases(), |(x in off_kink(12), w in vals(12))| {
        let err = gradient_error(&[tensor(&[12], x)], &tensor(&[12], w), &|t, v| t.relu(v[0]));
        prop_assert!(err < 1e-4, "relative error {err}");

    });
}

pub fn maxpool_gradients() {
    proptest!(cases(), |(x in vals(2 * 3 * 8), w in vals(2 * 3 * 4))| {
        // Pairs closer than the FD step would straddle the argmax switch.
        prop_assume!(x.chunks(2).all(|p| (p[0] - p[1]).abs() > 1e-3));
        let err = gradient_error(&[tensor(&[2, 3, 8], x)], &tensor(&[2, 3, 4], w), &|t, v| t.maxpool1d(v[0], 2));
        prop_assert!(err < 1e-4, "relative error {err}");

    });
}

pub fn upsample_gradients() {
    proptest!(cases(), |(x in vals(2 * 2 * 5), w in vals(2 * 2 * 15))| {
        let err = gradient_error(&[tensor(&[2, 2, 5], x)], &tensor(&[2, 2, 15], w), &|t, v| t.upsample_nearest(v[0], 3));
        prop_assert!(err < 1e-4, "relative error {err}");

    });
}

pub fn composite_network_gradients() {
    proptest!(cases(), |(x in vals(2 * 8), f1 in vals(3 * 3), b1 in vals(3), wd in vals(2 * 12), bd in vals(2), target in vals(2 * 2))| {
        // conv → tanh → pool → flatten → dense → mse, the autoencoder's building blocks.
        let params = [tensor(&[3, 1, 3], f1), tensor(&[3], b1), tensor(&[2, 12], wd), tensor(&[2], bd)];
        let xin = tensor(&[2, 1, 8], x);
        let tgt = tensor(&[2, 2], target);
        let err = gradient_error(&params, &Tensor::scalar(1.0), &|t, v| {
            let input = t.constant(xin.clone())?;
            let c = t.conv1d(input, v[0], v[1], 1, true)?;
            let a = t.tanh(c)?;
            let p = t.maxpool1d(a, 2)?;
            let flat = t.reshape(p, &[2, 12])?;
            let y = t.dense(flat, v[2], v[3])?;
            let target = t.constant(tgt.clone())?;
            t.mse(y, target)
        });
        prop_assert!(err < 1e-4, "relative error {err}");

    });
}

pub fn pool_after_upsample_is_identity() {
    proptest!(cases(), |(x in vals(3 * 7))| {
        let t = tensor(&[3, 7], x);
        prop_assert_eq!(maxpool1d(&upsample_nearest(&t, 2).unwrap(), 2).unwrap(), t);

    });
}

pub fn upsample_after_pool_is_identity_on_pooled_data() {
    proptest!(cases(), |(x in vals(2 * 6))| {
        let pre: Vec<f64> = x.iter().flat_map(|v| [*v, *v]).collect();
        let t = tensor(&[2, 12], pre);
        prop_assert_eq!(upsample_nearest(&maxpool1d(&t, 2).unwrap(), 2).unwrap(), t);

    });
}

pub fn identity_filter_conv_is_identity() {
    proptest!(cases(), |(x in vals(9))| {
        let t = tensor(&[1, 9], x);
        let f = tensor(&[1, 1, 3], vec![0.0, 1.0, 0.0]);
        prop_assert_eq!(conv1d(&t, &f, &Tensor::zeros(&[1]), 1, true).unwrap(), t);

    });
}

pub fn dataset_round_trip_is_bit_exact() {
    proptest!(cases(), |(raw in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL, 3 * 5 * 4), first in 1.0f64..2000.0, gaps in prop::collection::vec(1e-6f64..500.0, 2))| {
        let res = [first, first + gaps[0], first + gaps[0] + gaps[1]];
        let grid = GridSpec::new(1.0, 4, 2.0, 5).unwrap();
        let fields: Vec<SolutionField> = res
            .iter()
            .zip(raw.chunks(20))
            .map(|(&re, v)| SolutionField::new(re, grid, v.to_vec()).unwrap())
            .collect();
        let ds = ParametricDataset::new(DatasetRole::Unspecified, grid, fields).unwrap();
        let bytes = write_dataset(&ds);
        let back = read_dataset(&bytes).unwrap();
        prop_assert_eq!(back.grid(), ds.grid());
        for (a, b) in back.fields().iter().zip(ds.fields()) {
            prop_assert_eq!(a.reynolds.to_bits(), b.reynolds.to_bits());
            let (abits, bbits): (Vec<u64>, Vec<u64>) =
                (a.values().iter().map(|v| v.to_bits()).collect(), b.values().iter().map(|v| v.to_bits()).collect());
            prop_assert_eq!(abits, bbits);
        }
        prop_assert_eq!(write_dataset(&back), bytes);

    });
}

pub fn proposals_stay_in_box() {
    proptest!(cases(), |(n in 0usize..16, mses in prop::collection::vec(prop::option::weighted(0.85, 1e-8f64..1.0), 16), seed in 0u64..1000, relaxed in any::<bool>())| {
        let sbox = SearchBox::reservoir(if relaxed { &HyperBox::RELAXED } else { &HyperBox::STANDARD });
        let config = BoConfig { initial_points: 4, candidates: 64, refine_steps: 8, seed, ..Default::default() };
        let mut history = Vec::new();
        for i in 0..n {
            let point = propose_next(&history, &sbox, &config).unwrap();
            prop_assert!(sbox.contains(&point), "{point:?}");
            history.push(EvalRecord {
                iteration: i,
                point,
                mse: mses[i],
                seed: 0,
                wall_time: 0.0,
                failure: mses[i].is_none().then(|| "diverged".to_string()),
            });
        }
        let next = propose_next(&history, &sbox, &config).unwrap();
        prop_assert!(sbox.contains(&next), "{next:?}");

    });
}

pub fn expected_improvement_is_nonnegative() {
    proptest!(cases(), |(mean in -10.0f64..10.0, sd in 0.0f64..5.0, best in -10.0f64..10.0)| {
        let ei = expected_improvement(mean, sd, best);
        prop_assert!(ei.is_finite() && ei >= 0.0);
        prop_assert!(ei + 1e-12 >= (best - mean).max(0.0));

    });
}

pub fn spline_is_invertible() {
    proptest!(cases(), |(raw in vals(23), x in -4.0f64..4.0, bound in 0.5f64..5.0)| {
        let p = RqSplineParams::from_raw(&raw, 8, bound).unwrap();
        let (y, ld) = rq_spline_forward(x, &p);
        let (back, ld_inv) = rq_spline_inverse(y, &p);
        prop_assert!((back - x).abs() <= 1e-10 * x.abs().max(1.0), "{x} -> {y} -> {back}");
        prop_assert!((ld + ld_inv).abs() <= 1e-9);

    });
}

pub fn spline_is_monotone() {
    proptest!(cases(), |(raw in vals(23), a in -4.0f64..4.0, b in -4.0f64..4.0)| {
        let p = RqSplineParams::from_raw(&raw, 8, 3.0).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(rq_spline_forward(lo, &p).0 <= rq_spline_forward(hi, &p).0);

    });
}

pub fn reservoir_step_respects_leaky_bound() {
    proptest!(cases(), |(r in prop::collection::vec(-1.0f64..1.0, 40), y in vals(2), param in 0.0f64..1.0, leak in 0.05f64..1.0, seed in 0u64..100)| {
        let h = RcHyperparams { leakage: leak, ..RcHyperparams { spectral_radius: 0.9, ..RcHyperparams::TABLE2 } };
        let model = init_reservoir(&h, 40, 2, seed).unwrap();
        let next = reservoir_step(&model, &r, &y, param).unwrap();
        let inf = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bound = (1.0 - leak) * inf + leak;
        prop_assert!(next.iter().all(|v| v.abs() <= bound + 1e-15));

    });
}

pub fn echo_state_contraction_at_published_settings() {
    let model = init_reservoir(&RcHyperparams::TABLE2, 600, 2, 1).unwrap();
    let mut a = vec![0.0; 600];
    let mut b: Vec<f64> = (0..600).map(|i| ((i * 7919) % 200) as f64 / 100.0 - 1.0).collect();
    let d0 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    for s in 0..50 {
        let y = [0.3 * (s as f64 * 0.1).sin(), 0.2 * (s as f64 * 0.07).cos()];
        a = reservoir_step(&model, &a, &y, 0.5).unwrap();
        b = reservoir_step(&model, &b, &y, 0.5).unwrap();
    }
    let d50 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(d50 * 10.0 <= d0, "distance {d0} -> {d50}");
}
