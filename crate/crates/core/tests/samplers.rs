use hcrv::diagnostics::{autocorrelation, ess, ks_two_sample};
use hcrv::hdp::ConcentrationUpdate;
use hcrv::run::{sample_chain, ChainShape, DrawRef, Sampler};
use hcrv::simulate::{simulate_data, SimSpec};
use hcrv::{GroupedCounts, ModelParams, Streams};

fn poisson(means: &[f64], n: usize, seed: u64) -> GroupedCounts {
    let spec = SimSpec::PoissonGroups { means: means.to_vec(), sizes: vec![n; means.len()] };
    simulate_data(&spec, &mut Streams::new(seed).stream("sim", 0)).unwrap().counts().unwrap()
}

fn scalar_trace(data: &GroupedCounts, sampler: Sampler, shape: ChainShape, seed: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(shape.draws);
    let params = ModelParams::new(1.0, 1.0);
    sample_chain(data, &params, sampler, shape, None, ConcentrationUpdate::Auxiliary, &Streams::new(seed), |draw| {
        out.push(draw.scalar());
        Ok(())
    })
    .unwrap();
    out
}

#[test]
fn mhlog_ess_on_four_poisson_groups() {
    // means 2..5, 25 observations each, α = α₀ = b = b₀ = 1
    let data = poisson(&[2.0, 3.0, 4.0, 5.0], 25, 450);
    for seed in [1, 2, 3] {
        let trace = scalar_trace(&data, Sampler::Mhlog, ChainShape { draws: 1000, burnin: 100, thin: 10 }, seed);
        let e = ess(&trace).unwrap();
        assert!(e > 400.0, "seed {seed}: ESS {e}");
    }
}

#[test]
fn exact_draws_have_no_lag_one_correlation() {
    let data = poisson(&[2.0, 3.0, 4.0], 10, 5);
    let trace = scalar_trace(&data, Sampler::Exact, ChainShape { draws: 4000, burnin: 0, thin: 1 }, 8);
    let rho = autocorrelation(&trace, 1)[1];
    assert!(rho.abs() < 4.0 / (trace.len() as f64).sqrt(), "lag-1 {rho}");
}

#[test]
fn fixed_concentration_targets_a_different_posterior() {
    let data = poisson(&[2.0, 3.0, 4.0], 10, 201);
    let params = ModelParams::new(1.0, 1.0);
    let shape = ChainShape { draws: 5000, burnin: 1000, thin: 10 };
    let weights = |sampler, seed| {
        let mut rng = Streams::new(seed).stream("weights", 0);
        let mut w11 = Vec::with_capacity(shape.draws);
        sample_chain(&data, &params, sampler, shape, None, ConcentrationUpdate::Auxiliary, &Streams::new(seed), |draw| {
            if let DrawRef::Franchise { state, .. } = draw {
                w11.push(state.posterior_weights(&data, 20, &mut rng)?.residual_total(0));
            }
            Ok(())
        })
        .unwrap();
        w11
    };
    let random = weights(Sampler::Hdppr, 11);
    let fixed = weights(Sampler::Hdpfixed, 12);
    let ks = ks_two_sample(&random, &fixed).unwrap();
    assert!(ks.p_value < 0.01, "KS p {}", ks.p_value);
}
