use proptest::collection::vec;
use proptest::prelude::*;

use hcrv::data::ingest_groups;
use hcrv::diagnostics::{ess, ks_two_sample};
use hcrv::elicitation::{hcrv_moments, solve_hcrv_params};
use hcrv::exact::{build_plan, exact_draw};
use hcrv::hdp::{crf_gibbs_sweep, franchise_step, ConcentrationUpdate, FranchiseState};
use hcrv::mcmc::{LatentState, McmcKernel, ProposalConfig};
use hcrv::specfun::{exp_integral_e1, inverse_e1};
use hcrv::{GroupedCounts, ModelParams, Streams};

// small count matrix with every group and column non-empty
fn counts() -> impl Strategy<Value = GroupedCounts> {
    (1usize..4, 1usize..5).prop_flat_map(|(d, k)| vec(vec(0u32..5, k), d)).prop_filter_map("empty group or column", |mut c| {
        let k = c[0].len();
        for (i, row) in c.iter_mut().enumerate() {
            row[i % k] += 1;
        }
        for j in 0..k {
            if c.iter().all(|r| r[j] == 0) {
                c[0][j] = 1;
            }
        }
        GroupedCounts::from_counts((0..k).map(|j| j as f64).collect(), c).ok()
    })
}

fn params() -> impl Strategy<Value = ModelParams> {
    (0.2f64..5.0, 0.2f64..5.0, 0.5f64..3.0, 0.5f64..3.0).prop_map(|(a, a0, b, b0)| ModelParams::new(a, a0).with_rates(b, b0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ingestion_counts_are_consistent(groups in vec(vec(0u8..6, 1..12), 1..5)) {
        let g: Vec<Vec<f64>> = groups.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
        let data = ingest_groups(&g).unwrap();
        let sizes = data.group_sizes();
        for i in 0..data.d() {
            prop_assert_eq!(sizes[i] as usize, groups[i].len());
            prop_assert_eq!(data.counts()[i].iter().sum::<u32>(), sizes[i]);
        }
        prop_assert!(data.column_totals().iter().all(|&n| n >= 1));
        prop_assert!(data.distinct().windows(2).all(|w| w[0] != w[1]));
        prop_assert!(data.k() as u32 <= data.n());
        prop_assert!(data.m() as usize >= data.d());
    }

    #[test]
    fn moment_report_invariants(a in 0.05f64..50.0, a0 in 0.05f64..50.0, p in 0.01f64..0.99) {
        let m = hcrv_moments(a, a0, p).unwrap();
        prop_assert!(m.correlation > 0.0 && m.correlation < 1.0);
        prop_assert!(m.variance > 0.0);
        prop_assert!((m.covariance - m.correlation * m.variance).abs() <= 1e-12 * m.variance);
        let other = hcrv_moments(a, a0, 0.5).unwrap();
        prop_assert!((m.correlation - other.correlation).abs() < 1e-12);
    }

    #[test]
    fn elicitation_round_trip(s2 in 0.02f64..0.98, rho in 0.02f64..0.98) {
        let e = solve_hcrv_params(s2, rho).unwrap();
        let m = hcrv_moments(e.alpha, e.alpha0, 0.5).unwrap();
        prop_assert!((m.sigma2 - s2).abs() < 1e-6, "{} vs {}", m.sigma2, s2);
        prop_assert!((m.correlation - rho).abs() < 1e-6, "{} vs {}", m.correlation, rho);
    }

    #[test]
    fn inverse_e1_round_trip(log_y in -20.0f64..5.0) {
        let y = log_y.exp();
        let r = inverse_e1(y).unwrap();
        let back = exp_integral_e1(r.solution).unwrap();
        prop_assert!(((back - y) / y).abs() < 1e-9);
    }

    #[test]
    fn ess_lies_in_range(x in vec(-10.0f64..10.0, 10..300)) {
        prop_assume!(x.iter().any(|&v| v != x[0]));
        let e = ess(&x).unwrap();
        prop_assert!(e > 0.0 && e <= x.len() as f64);
    }

    #[test]
    fn ks_p_value_is_a_probability(a in vec(-5.0f64..5.0, 5..60), b in vec(-5.0f64..5.0, 5..60)) {
        let r = ks_two_sample(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        prop_assert!((0.0..=1.0).contains(&r.statistic));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_draws_satisfy_invariants(data in counts(), p in params(), seed in 0u64..1000) {
        let mut plan = build_plan(&data, &p).unwrap();
        prop_assert!(plan.r_opt >= 0.0);
        prop_assert!(plan.r_opt <= (data.m() as usize - data.d()) as f64 + 1e-9);
        let mut rng = Streams::new(seed).stream("prop", 0);
        for _ in 0..20 {
            let mut atoms = exact_draw(&mut plan, &data, &mut rng).unwrap();
            atoms.attach_residual(&p, 15, &mut rng).unwrap();
            prop_assert!(atoms.latent.lambda >= p.prior_rate());
            prop_assert!(atoms.fixed_jumps.iter().flatten().all(|&x| x > 0.0 && x.is_finite()));
            let w = atoms.normalize().unwrap();
            for i in 0..data.d() {
                let total = w.fixed[i].iter().sum::<f64>() + w.residual_total(i);
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
        prop_assert_eq!(plan.stats.bound_violations, 0);
    }

    #[test]
    fn mcmc_sweeps_keep_state_valid(data in counts(), p in params(), log_walk in any::<bool>(), seed in 0u64..1000) {
        let cfg = if log_walk { ProposalConfig::log_walk() } else { ProposalConfig::gamma() };
        let mut kernel = McmcKernel::new(&data, &p, cfg).unwrap();
        let mut s = LatentState::initial(&data, &p);
        let mut rng = Streams::new(seed).stream("prop", 1);
        for _ in 0..50 {
            kernel.gibbs_sweep(&mut s, &mut rng);
            s.validate().unwrap();
            prop_assert!(s.lambda >= p.prior_rate());
        }
    }

    #[test]
    fn franchise_bookkeeping_survives_sweeps(data in counts(), random in any::<bool>(), seed in 0u64..1000) {
        let p = ModelParams::new(1.5, 2.0);
        let update = random.then_some(ConcentrationUpdate::Auxiliary);
        let mut state = FranchiseState::new(&data, &p, update).unwrap();
        let sizes = data.group_sizes();
        let mut rng = Streams::new(seed).stream("prop", 2);
        for _ in 0..30 {
            crf_gibbs_sweep(&mut state, &mut rng);
            franchise_step(&mut state, &sizes, &mut rng);
            prop_assert_eq!(state.audit(&data).violations(), 0);
        }
    }
}
