use flowfield::superposition::{
    gini_paper, gini_sweep, global_field, multisample_velocity, weighted_velocity, GlobalField,
};
use flowfield::{
    field_from_flow, gaussian_draw, Coupling, EndpointPair, ExtendedPoint, FlowKind, FlowSpec, Point, RngStream,
    VeVariant, VectorField,
};
use proptest::prelude::*;

fn flow_of(kind: FlowKind, dim: usize) -> FlowSpec {
    let f = FlowSpec::new(kind, dim).unwrap();
    if kind == FlowKind::VeDiffusion {
        f.with_ve_variant(VeVariant::MeanX0)
    } else {
        f
    }
}

fn explicit(n: usize, dim: usize, rng: &mut RngStream) -> Coupling {
    let pairs = (0..n)
        .map(|_| EndpointPair::two_sided(gaussian_draw(rng, dim), gaussian_draw(rng, dim)).unwrap())
        .collect();
    Coupling::explicit(pairs).unwrap()
}

/// Direct `sum p_i v_i / sum p_i` with a hand-rolled log-sum-exp.
fn naive_velocity(flow: &FlowSpec, pairs: &[EndpointPair], x: &Point, t: f64) -> Vec<f64> {
    let lps: Vec<f64> = pairs.iter().map(|p| flow.cond_log_density(p, x, t).unwrap()).collect();
    let m = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut num = vec![0.0; x.dim()];
    let mut den = 0.0;
    for (p, lp) in pairs.iter().zip(&lps) {
        let w = (lp - m).exp();
        let v = flow.cond_velocity(p, x, t).unwrap();
        for k in 0..x.dim() {
            num[k] += w * v[k];
        }
        den += w;
    }
    num.iter().map(|c| c / den).collect()
}

/// Textbook Gini: mean absolute difference over twice the mean.
fn classical_gini(w: &[f64]) -> f64 {
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let mut s = 0.0;
    for a in w {
        for b in w {
            s += (a - b).abs();
        }
    }
    s / (2.0 * n * n * mean)
}

fn normalize(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_sum_to_one(kind in proptest::sample::select(FlowKind::ALL.to_vec()), seed in any::<u64>(), u in 1e-3f64..0.999, far in 0.0f64..20.0) {
        prop_assume!(kind != FlowKind::IfmCanonical || (u - 0.5).abs() > 0.01);
        let flow = flow_of(kind, 2);
        let mut rng = RngStream::new(seed, 0);
        let c = explicit(16, 2, &mut rng);
        let x = gaussian_draw(&mut rng, 2).scale(1.0 + far);
        let est = weighted_velocity(&flow, &c.support(), &x, u).unwrap();
        let total: f64 = est.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let v: Vec<f64> = (0..2).map(|k| {
            est.weights.iter().zip(c.support()).map(|(w, p)| w * flow.cond_velocity(&p, &x, u).unwrap()[k]).sum()
        }).collect();
        for k in 0..2 {
            prop_assert!((v[k] - est.velocity[k]).abs() <= 1e-10 * (1.0 + v[k].abs()));
        }
    }

    #[test]
    fn full_support_estimate_is_the_field_ratio(kind in proptest::sample::select(FlowKind::ALL.to_vec()), seed in any::<u64>(), u in 0.05f64..0.95) {
        prop_assume!(kind != FlowKind::IfmCanonical || (u - 0.5).abs() > 0.05);
        let flow = flow_of(kind, 2);
        let spec = field_from_flow(&flow);
        let mut rng = RngStream::new(seed, 0);
        let c = explicit(32, 2, &mut rng);
        let anchor = c.sample_pair(&mut rng);
        let x = flow.sample_xt(&anchor, u, &mut rng).unwrap();
        let est = multisample_velocity(&flow, &c, &x, u, None, c.support_len(), &mut rng).unwrap();
        let p = ExtendedPoint::new(x.clone(), u);
        let e = GlobalField::over_support(&spec, &c).unwrap().eval_scaled(&p).unwrap();
        let naive = naive_velocity(&flow, &c.support(), &x, u);
        for k in 0..2 {
            let ratio = e.spatial[k] / e.temporal;
            prop_assert!((est.velocity[k] - ratio).abs() <= 1e-10 * ratio.abs().max(1e-3));
            prop_assert!((est.velocity[k] - naive[k]).abs() <= 1e-10 * naive[k].abs().max(1e-3));
        }
    }

    #[test]
    fn gini_matches_the_textbook_formula(w in proptest::collection::vec(0.0f64..1.0, 2..40)) {
        prop_assume!(w.iter().sum::<f64>() > 1e-6);
        let w = normalize(&w);
        let n = w.len() as f64;
        let want = 1.0 - classical_gini(&w) * n / (n - 1.0);
        prop_assert!((gini_paper(&w).unwrap() - want.clamp(0.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn gini_ignores_order_and_scale(w in proptest::collection::vec(0.0f64..1.0, 2..40), c in 0.01f64..100.0, seed in any::<u64>()) {
        prop_assume!(w.iter().sum::<f64>() > 1e-6);
        let base = gini_paper(&normalize(&w)).unwrap();
        let mut shuffled = w.clone();
        let mut rng = RngStream::new(seed, 0);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.index(i + 1));
        }
        prop_assert!((gini_paper(&normalize(&shuffled)).unwrap() - base).abs() < 1e-12);
        let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
        prop_assert!((gini_paper(&normalize(&scaled)).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn duplicated_pairs_do_not_change_the_global_field(seed in any::<u64>(), u in 0.05f64..0.95) {
        let flow = FlowSpec::new(FlowKind::TwoSidedInterpolant, 2).unwrap();
        let spec = field_from_flow(&flow);
        let mut rng = RngStream::new(seed, 0);
        let pair = EndpointPair::two_sided(gaussian_draw(&mut rng, 2), gaussian_draw(&mut rng, 2)).unwrap();
        let p = ExtendedPoint::new(flow.sample_xt(&pair, u, &mut rng).unwrap(), u);
        let one = spec.eval_pair_field(&pair, &p).unwrap();
        let c1 = Coupling::explicit(vec![pair.clone()]).unwrap();
        let c2 = Coupling::explicit(vec![pair.clone(), pair.clone()]).unwrap();
        for c in [c1, c2] {
            let g = global_field(&spec, &c, &p, c.support_len(), &mut rng).unwrap();
            prop_assert!((g.temporal - one.temporal).abs() <= 1e-13 * one.temporal);
            prop_assert!(g.spatial.sub(&one.spatial).norm() <= 1e-13 * one.norm());
        }
    }
}

#[test]
fn gini_endpoints() {
    for n in [2, 7, 100] {
        let mut point = vec![0.0; n];
        point[n / 2] = 1.0;
        assert_eq!(gini_paper(&point).unwrap(), 0.0);
        assert!((gini_paper(&vec![1.0 / n as f64; n]).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn weights_stay_normalized_when_densities_underflow() {
    // sigma_t = 1e-3 with probes far from every pair: every density is exp(-huge).
    let flow = FlowSpec::new(FlowKind::LinearFlowMatching, 2).unwrap();
    let mut rng = RngStream::new(4, 0);
    let c = explicit(64, 2, &mut rng);
    for r in [5.0, 50.0, 500.0] {
        let x = Point::new(vec![r, -r]).unwrap();
        let est = weighted_velocity(&flow, &c.support(), &x, 1e-3).unwrap();
        assert!((est.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(est.velocity.is_finite());
    }
}

#[test]
fn anchor_dominates_at_moderate_time() {
    let flow = flow_of(FlowKind::VeDiffusion, 8);
    let mut rng = RngStream::new(2, 0);
    let data: Vec<Point> = (0..4096).map(|_| gaussian_draw(&mut rng, 8)).collect();
    let c = Coupling::one_sided(data).unwrap();
    let rows = gini_sweep(&flow, &c, &[16, 256], 200, 0.3, &RngStream::new(2, 1)).unwrap();
    for row in rows {
        assert!(row.anchor_argmax_freq > 0.5, "N = {}: {}", row.n, row.anchor_argmax_freq);
    }
}
