mod common;

use lake_mpc::ddp::{self, DdpConfig};
use lake_mpc::hydrology::LakeParams;
use lake_mpc::mpc::{self, MpcConfig};
use lake_mpc::scenario::Scenario;
use proptest::prelude::*;

fn two_days() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (
        prop::collection::vec(10.0..1500.0f64, 2),
        prop::collection::vec(0.0..400.0f64, 2),
        -0.15..1.3f64,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mpc_respects_bounds_and_conserves_mass((q, w, h0) in two_days()) {
        let lake = LakeParams::default();
        let sc = Scenario::new(
            lake_mpc::scenario::expand_daily(&q),
            lake_mpc::scenario::expand_daily(&w),
            "random",
        ).unwrap();
        let s0 = lake.storage_of_level(h0).unwrap();
        let run = mpc::run_hourly(&lake, &MpcConfig::for_lake(&lake), &sc, s0).unwrap();
        let t = &run.trace;
        prop_assert!(t.conservation_error() <= 1e-9);
        prop_assert_eq!(t.recovery_hours, 0);
        for k in 0..t.len() {
            let (lo, hi) = common::bounds(&lake, common::level(&lake, t.storages[k]));
            prop_assert!(t.releases[k] >= lo - 1e-9 && t.releases[k] <= hi + 1e-9);
            prop_assert!(t.levels[k] >= lake.dry_threshold - 1e-9);
        }
        prop_assert!(run.max_kkt_residual() <= 1e-6);
    }

    #[test]
    fn ddp_policy_respects_bounds((q, w, h0) in two_days()) {
        let lake = LakeParams::default();
        let cfg = DdpConfig { grid_points: 41, action_samples: 21, ..DdpConfig::for_lake(&lake) };
        let (q, w) = (lake_mpc::scenario::expand_daily(&q), lake_mpc::scenario::expand_daily(&w));
        let s0 = lake.storage_of_level(h0).unwrap();
        let table = ddp::backward_induction(&lake, &cfg, &q, &w).unwrap();
        let t = ddp::simulate_policy(&lake, &table, &q, &w, s0).unwrap();
        prop_assert!(t.conservation_error() <= 1e-9);
        for k in 0..t.len() {
            let (lo, hi) = common::bounds(&lake, common::level(&lake, t.storages[k]));
            prop_assert!(t.releases[k] >= lo - 1e-9 && t.releases[k] <= hi + 1e-9);
        }
        prop_assert!(ddp::trajectory_cost(&lake, &cfg, &t) >= 0.0);
    }
}
