use lake_mpc::ddp::{self, DdpConfig};
use lake_mpc::hydrology::LakeParams;
use lake_mpc::scenario::{synthetic_year, SynthOptions};

/// A finer grid with more release samples should never do worse on the
/// forward-simulated cost.
#[test]
fn refining_the_grid_does_not_increase_cost() {
    let lake = LakeParams::default();
    let year = synthetic_year(SynthOptions::default()).unwrap();
    let s0 = lake.storage_of_level(0.3).unwrap();
    for day in [130usize, 180, 290] {
        let span = day * 24..(day + 20) * 24;
        let q = &year.inflow_hourly[span.clone()];
        let w = &year.demand_hourly[span];
        let cost = |grid_points, action_samples| {
            let cfg = DdpConfig {
                grid_points,
                action_samples,
                ..DdpConfig::for_lake(&lake)
            };
            let table = ddp::backward_induction(&lake, &cfg, q, w).unwrap();
            let trace = ddp::simulate_policy(&lake, &table, q, w, s0).unwrap();
            ddp::trajectory_cost(&lake, &cfg, &trace)
        };
        let coarse = cost(101, 51);
        let fine = cost(201, 101);
        assert!(fine <= coarse * (1.0 + 1e-6), "day {day}: {fine} > {coarse}");
    }
}
