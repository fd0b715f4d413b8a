use flowfield::config::KvConfig;
use flowfield::{FlowKind, FlowSpec, VeVariant};
use proptest::prelude::*;

proptest! {
    #[test]
    fn flow_specs_roundtrip_through_key_values(
        kind in proptest::sample::select(FlowKind::ALL.to_vec()),
        dim in 1usize..6,
        horizon in 0.1f64..10.0,
        s in 0.01f64..3.0,
        d in 1u32..300,
        mean_x0 in any::<bool>(),
    ) {
        let mut spec = FlowSpec::new(kind, dim).unwrap().with_horizon(horizon).unwrap();
        match kind {
            FlowKind::TwoSidedInterpolant => spec = spec.with_scale(s).unwrap(),
            FlowKind::PfgmPlusPlus => spec = spec.with_aug_dim(d).unwrap(),
            FlowKind::VeDiffusion if mean_x0 => spec = spec.with_ve_variant(VeVariant::MeanX0),
            _ => {}
        }
        let text: String = spec.to_kv().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let back = FlowSpec::from_kv(&KvConfig::parse(&text).unwrap()).unwrap();
        prop_assert_eq!(back, spec);
    }
}
