use lsq_core::engine::{self, Monitors, SimConfig, Simulation};
use lsq_core::processes::{ArrivalKind, ArrivalSpec, ServiceSpec};
use lsq_core::validation::mixed_equivalence_setup;
use lsq_core::PolicyKind;
use proptest::prelude::*;

fn service() -> impl Strategy<Value = ServiceSpec> {
    prop_oneof![
        (1.0f64..4.0).prop_map(ServiceSpec::geometric_min1),
        (0.2f64..3.0).prop_map(ServiceSpec::geometric_min0),
        (1u64..4).prop_map(ServiceSpec::deterministic),
    ]
}

fn policy(n: usize, m: usize) -> impl Strategy<Value = PolicyKind> {
    prop_oneof![
        Just(PolicyKind::Jsq),
        (1..=n).prop_map(|d| PolicyKind::JsqD { d }),
        Just(PolicyKind::Jiq),
        Just(PolicyKind::WeightedRandom),
        (1..=n).prop_map(|d| PolicyKind::LsqSample { d }),
        (0.01f64..=1.0).prop_map(|p| PolicyKind::LsqUpdate { p }),
        (0.01f64..=1.0).prop_map(|p| PolicyKind::LsqSmart { p }),
        (m as u64..=3 * m as u64).prop_map(|c_up| PolicyKind::LsqRoundRobin { c_up }),
        Just(PolicyKind::LsqFullUpdate),
        (0.01f64..20.0).prop_map(|r| PolicyKind::LowCommPush { r }),
        (0.01f64..20.0).prop_map(|r| PolicyKind::LowCommPull { r }),
        (0.01f64..20.0).prop_map(|r| PolicyKind::Hybrid { r }),
    ]
}

/// Small systems, possibly overloaded.
fn config() -> impl Strategy<Value = SimConfig> {
    (1usize..=5, 1usize..=3)
        .prop_flat_map(|(n, m)| {
            (
                prop::collection::vec(service(), n),
                Just(m),
                policy(n, m),
                0.0f64..1.3,
                1u64..300,
                any::<u64>(),
            )
        })
        .prop_map(|(services, m, policy, load, slots, seed)| {
            let capacity: f64 = services.iter().map(|s| s.rate).sum();
            SimConfig {
                services,
                arrivals: ArrivalSpec::uniform(load * capacity, m, ArrivalKind::Poisson),
                policy,
                slots,
                warmup: slots / 3,
                seed,
                monitors: Monitors::default(),
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn slot_level_invariants(config in config()) {
        let n = config.servers();
        let m = config.dispatchers();
        let has_views = config.policy.has_views();
        let mut sim = Simulation::new(config.clone()).unwrap();
        let mut views: Vec<Vec<u64>> = (0..m)
            .map(|j| sim.policy().local_view(j).map(<[u64]>::to_vec).unwrap_or_default())
            .collect();
        while sim.slot() < config.slots {
            let trace = sim.step().clone();

            // Queue recursion.
            for i in 0..n {
                let expected = (trace.queue_start[i] + trace.server_arrivals[i]).saturating_sub(trace.potential_service[i]);
                prop_assert_eq!(sim.queue_lengths()[i], expected);
                prop_assert!(trace.completions[i] <= trace.potential_service[i]);
            }

            // Incast counts distinct dispatchers.
            let active = trace.dispatcher_arrivals.iter().filter(|&&a| a > 0).count() as u32;
            prop_assert!(trace.incast_max <= active);
            prop_assert_eq!(trace.decisions.len() as u32, active);
            prop_assert!(trace.message_count >= trace.messages.len() as u64);

            // Views move only by self-increment or overwrite to the truth.
            if has_views {
                for (j, old) in views.iter_mut().enumerate() {
                    let mut expected = old.clone();
                    for d in trace.decisions.iter().filter(|d| d.dispatcher == j) {
                        expected[d.server] += d.jobs;
                    }
                    for msg in trace.messages.iter().filter(|msg| msg.dispatcher == j) {
                        prop_assert_eq!(msg.queue_length, sim.queue_lengths()[msg.server]);
                        expected[msg.server] = msg.queue_length;
                    }
                    let now = sim.policy().local_view(j).unwrap();
                    prop_assert_eq!(&expected[..], now);
                    *old = expected;
                }
            }
        }
        let report = sim.run_to_end().report;
        let inv = report.invariants;
        prop_assert_eq!(inv.queue_dynamics_violations, 0);
        prop_assert_eq!(inv.fifo_violations, 0);
        prop_assert_eq!(inv.consistency_violations, 0);
        prop_assert!(inv.conservation_holds);
    }

    #[test]
    fn reports_are_well_formed_and_deterministic(config in config()) {
        let a = engine::run(config.clone()).unwrap();
        let b = engine::run(config.clone()).unwrap();
        prop_assert_eq!(&a, &b);

        for w in a.sojourn_ccdf.windows(2) {
            prop_assert!(w[0].threshold < w[1].threshold);
            prop_assert!(w[0].probability >= w[1].probability);
        }
        if let Some(last) = a.sojourn_ccdf.last() {
            prop_assert_eq!(last.probability, 0.0);
        }
        if let Some(gap) = &a.gap {
            prop_assert!(gap.mean >= 0.0);
            prop_assert!(gap.per_pair.iter().all(|&g| g <= gap.max as f64));
        }
        let measured: u64 = a.incast_histogram.values().sum();
        prop_assert_eq!(measured, a.measured_slots);
        prop_assert!(a.incast_max as usize <= config.dispatchers());

        let json = serde_json::to_string(&a).unwrap();
        let back: lsq_core::MetricsReport = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn monitors_do_not_change_the_trajectory(config in config()) {
        let plain = SimConfig {
            monitors: Monitors {
                check_invariants: false,
                gaps: false,
                refresh_ages: false,
                drift: false,
                record_decisions: true,
                ..Monitors::default()
            },
            ..config.clone()
        };
        let full = SimConfig {
            monitors: Monitors {
                drift: true,
                record_decisions: true,
                ..Monitors::default()
            },
            ..config
        };
        let a = engine::run_detailed(plain).unwrap();
        let b = engine::run_detailed(full).unwrap();
        prop_assert_eq!(a.decisions, b.decisions);
        prop_assert_eq!(a.series.total_queue, b.series.total_queue);
        prop_assert_eq!(a.report.mean_sojourn, b.report.mean_sojourn);
    }
}

#[test]
fn littles_law_at_a_stable_configuration() {
    let (services, arrivals) = mixed_equivalence_setup();
    for policy in [PolicyKind::Jsq, PolicyKind::LsqSmart { p: 0.3 }, PolicyKind::JsqD { d: 2 }] {
        let config = SimConfig::new(services.clone(), arrivals.clone(), policy, 200_000, 1);
        let r = engine::run(config).unwrap();
        let l = r.mean_total_queue.unwrap();
        let w = r.mean_sojourn.unwrap();
        let x = r.throughput.unwrap();
        assert!((l - x * w).abs() <= 0.05 * l, "{policy}: L={l}, X={x}, W={w}");
    }
}

#[test]
fn round_robin_refresh_age_is_exactly_the_period() {
    let (services, arrivals) = mixed_equivalence_setup();
    for c_up in [3, 5, 10] {
        let config = SimConfig::new(services.clone(), arrivals.clone(), PolicyKind::LsqRoundRobin { c_up }, 5_000, 2);
        let refresh = engine::run(config).unwrap().refresh.unwrap();
        assert_eq!(refresh.max_age, c_up);
        assert_eq!(refresh.violations, 0);
        assert_eq!(refresh.bound, Some(c_up));
    }
}

#[test]
fn full_update_keeps_views_exact() {
    let (services, arrivals) = mixed_equivalence_setup();
    let config = SimConfig::new(services, arrivals, PolicyKind::LsqFullUpdate, 5_000, 3);
    let r = engine::run(config).unwrap();
    assert_eq!(r.gap.unwrap().max, 0);
    assert_eq!(r.refresh.unwrap().max_age, 1);
}
