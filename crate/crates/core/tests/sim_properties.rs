use pimcaps::arith::PeConfig;
use pimcaps::capsnet::{dynamic_routing, Approx, Exact, NetworkConfig, RoutingInstance};
use pimcaps::hmc::HmcConfig;
use pimcaps::planner::{compute_e, compute_m, select_dimension, CostParams, DistributionDim};
use pimcaps::sim::partition::analytic_total_ops;
use pimcaps::sim::{partition_workload, run_rp, Scenario, SimOptions};

const TABLE: [(usize, usize, usize, usize); 12] = [
    (100, 1152, 10, 3),
    (200, 1152, 10, 3),
    (300, 1152, 10, 3),
    (100, 2304, 11, 3),
    (100, 3456, 11, 3),
    (100, 4608, 11, 3),
    (100, 1152, 26, 3),
    (100, 1152, 47, 3),
    (100, 1152, 62, 3),
    (100, 576, 10, 3),
    (100, 576, 10, 6),
    (100, 576, 10, 9),
];

fn table() -> impl Iterator<Item = NetworkConfig> {
    TABLE
        .into_iter()
        .map(|(nb, nl, nh, it)| NetworkConfig::new(nb, nl, nh, 8, 16, it).unwrap())
}

fn extent(cfg: &NetworkConfig, dim: DistributionDim) -> usize {
    match dim {
        DistributionDim::B => cfg.batch_size,
        DistributionDim::L => cfg.low_caps,
        DistributionDim::H => cfg.high_caps,
    }
}

#[test]
fn work_is_conserved_in_every_scenario() {
    let cfg = NetworkConfig::new(100, 576, 10, 8, 16, 3).unwrap();
    let hmc = HmcConfig::default();
    for sc in Scenario::ALL {
        for dim in DistributionDim::ALL {
            let m = run_rp(&cfg, dim, sc, &hmc, &PeConfig::default(), &SimOptions::default())
                .unwrap()
                .metrics;
            assert_eq!(m.pe_ops, analytic_total_ops(&cfg), "{sc} {dim:?}");
        }
    }
}

#[test]
fn counted_traffic_equals_formula_on_small_configs() {
    let pe = PeConfig::default();
    let mut checked = 0;
    for nb in 1..=8 {
        for nl in 1..=8 {
            for nh in 1..=8 {
                let cfg = NetworkConfig::new(nb, nl, nh, 8, 16, 1 + (nb + nl + nh) % 3).unwrap();
                for nv in [2usize, 4, 8] {
                    let hmc = HmcConfig::default().with_vaults(nv);
                    let p = CostParams::from_hardware(&cfg, &hmc);
                    for dim in DistributionDim::ALL {
                        if extent(&cfg, dim) < nv {
                            continue;
                        }
                        let m = run_rp(&cfg, dim, Scenario::PimCapsNet, &hmc, &pe, &SimOptions::default())
                            .unwrap()
                            .metrics;
                        assert_eq!(
                            m.intervault_bytes as f64,
                            compute_m(dim, &cfg, &p),
                            "{cfg:?} nv={nv} {dim:?}"
                        );
                        checked += 1;
                    }
                }
            }
        }
    }
    assert!(checked > 500);
}

#[test]
fn busiest_vault_work_against_formula() {
    for cfg in table() {
        let p = CostParams::from_hardware(&cfg, &HmcConfig::default());
        for dim in DistributionDim::ALL {
            let sim = *partition_workload(&cfg, dim, 32).vault_ops().iter().max().unwrap() as f64;
            let e = compute_e(dim, &cfg, &p);
            match dim {
                DistributionDim::B => {
                    assert!((e - sim).abs() / sim <= 0.05, "{cfg:?} {dim:?}: E {e}, simulated {sim}");
                }
                // The L formula leaves out the root's global squash and
                // reduction work, which only stays small for wide layers.
                DistributionDim::L if cfg.low_caps >= 1152 => {
                    assert!((e - sim).abs() / sim <= 0.05, "{cfg:?} {dim:?}: E {e}, simulated {sim}");
                }
                DistributionDim::L => assert!(e < sim),
                DistributionDim::H => {
                    // The H formula has no weighted-sum term; the gap is that
                    // term's share exactly.
                    let (cl, it) = (cfg.low_dim as f64, cfg.iterations as f64);
                    let expected = (2.0 * cl - 1.0 + 4.0 * it) / (2.0 * cl - 1.0 + 2.0 * it);
                    assert!(
                        ((sim / e) - expected).abs() / expected <= 0.01,
                        "{cfg:?}: ratio {}",
                        sim / e
                    );
                }
            }
        }
    }
}

#[test]
fn more_vaults_never_slow_a_layer_down() {
    let pe = PeConfig::default();
    for cfg in table() {
        let full = HmcConfig::default();
        let one = full.with_vaults(1);
        let dim = select_dimension(&cfg, &CostParams::from_hardware(&cfg, &full))
            .unwrap()
            .selected;
        let run = |hmc: &HmcConfig| {
            run_rp(&cfg, dim, Scenario::PimCapsNet, hmc, &pe, &SimOptions::default())
                .unwrap()
                .metrics
        };
        let (m32, m1) = (run(&full), run(&one));
        assert!(
            m32.total_cycles <= m1.total_cycles,
            "{cfg:?}: {} vs {}",
            m32.total_cycles,
            m1.total_cycles
        );
        assert_eq!(m1.intervault_comm_cycles, 0);
        assert_eq!(m1.intervault_bytes, 0);
    }
}

#[test]
fn in_memory_numerics_match_the_routing_kernels_bit_for_bit() {
    let cfg = NetworkConfig::new(2, 24, 6, 8, 16, 3).unwrap();
    let approx = Approx::calibrated(9).unwrap();
    let opts = SimOptions {
        seed: 21,
        numerics: true,
        exp_params: *approx.params(),
        ..SimOptions::default()
    };
    let inst = RoutingInstance::random(cfg, 21).unwrap();
    let (v_approx, _) = dynamic_routing(&inst.u, &inst.w, &cfg, &approx).unwrap();
    let (v_exact, _) = dynamic_routing(&inst.u, &inst.w, &cfg, &Exact).unwrap();
    for sc in Scenario::ALL {
        let run = run_rp(
            &cfg,
            DistributionDim::L,
            sc,
            &HmcConfig::default(),
            &PeConfig::default(),
            &opts,
        )
        .unwrap();
        let want = if sc == Scenario::BaselineModel {
            &v_exact
        } else {
            &v_approx
        };
        assert_eq!(run.v.unwrap().data(), want.data(), "{sc}");
    }
}

#[test]
fn runs_are_deterministic() {
    let cfg = NetworkConfig::new(100, 1152, 26, 8, 16, 3).unwrap();
    let hmc = HmcConfig::default();
    for sc in [Scenario::PimCapsNet, Scenario::PimIntra, Scenario::PimInter] {
        let run = || {
            let m = run_rp(
                &cfg,
                DistributionDim::H,
                sc,
                &hmc,
                &PeConfig::default(),
                &SimOptions::default(),
            )
            .unwrap()
            .metrics;
            serde_json::to_string(&m).unwrap()
        };
        assert_eq!(run(), run());
    }
}

#[test]
fn interleaved_layout_pays_for_crossbar_traffic() {
    let cfg = NetworkConfig::new(100, 1152, 62, 8, 16, 3).unwrap();
    let hmc = HmcConfig::default();
    let pe = PeConfig::default();
    let dim = select_dimension(&cfg, &CostParams::from_hardware(&cfg, &hmc))
        .unwrap()
        .selected;
    let intra = run_rp(&cfg, dim, Scenario::PimIntra, &hmc, &pe, &SimOptions::default())
        .unwrap()
        .metrics;
    let caps = run_rp(&cfg, dim, Scenario::PimCapsNet, &hmc, &pe, &SimOptions::default())
        .unwrap()
        .metrics;
    assert!(intra.intervault_comm_cycles > 0);
    assert!(caps.intervault_bytes < intra.intervault_bytes);
    assert!(caps.total_cycles < intra.total_cycles);
}
