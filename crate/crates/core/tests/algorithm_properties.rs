use fedcef::metrics::{comm_accounting, prox_gradient_mapping};
use fedcef::problem::ClientData;
use fedcef::*;
use proptest::prelude::*;

fn hetero(dim: usize, clients: usize, seed: u64) -> FederatedProblem {
    let spec = SyntheticSpec {
        loss: LossKind::HeteroQuadratic,
        dim,
        samples: 0,
        clients,
        partition: PartitionSpec::Iid,
        spread: HeteroSpread::default(),
    };
    generate_synthetic(&spec, &derive_stream(seed, "problem").unwrap()).unwrap()
}

fn quadratic_parts(prob: &FederatedProblem) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..prob.num_clients())
        .map(|i| match prob.client(i) {
            ClientData::Quadratic { curvature, center } => {
                (curvature.as_slice().to_vec(), center.as_slice().to_vec())
            }
            ClientData::Samples(_) => unreachable!(),
        })
        .collect()
}

#[test]
fn fedavg_fixed_point_is_biased_while_fedcef_is_not() {
    let prob = hetero(10, 5, 0);
    let parts = quadratic_parts(&prob);
    let l = prob.smoothness().value;
    let hp = HyperParams {
        alpha: 0.99 / (25.0 * l) / 27.0,
        eta_g: 2.7,
        local_steps: 10,
        momentum: 1.0,
        batch: BatchSize::Full,
        rounds: 2000,
    };
    // K local steps map z to m_i + a_i (z - m_i) with a_i = (1 - alpha H_i)^K;
    // the averaged affine map has fixed point sum m_i (1 - a_i) / sum (1 - a_i)
    let mut fixed = vec![0.0; 10];
    let mut x_star = vec![0.0; 10];
    for j in 0..10 {
        let (mut num, mut den, mut hm, mut h) = (0.0, 0.0, 0.0, 0.0);
        for (curv, cent) in &parts {
            let a = (1.0 - hp.alpha * curv[j]).powi(10);
            num += cent[j] * (1.0 - a);
            den += 1.0 - a;
            hm += curv[j] * cent[j];
            h += curv[j];
        }
        fixed[j] = num / den;
        x_star[j] = hm / h;
    }
    let x_star = ParamVector::new(x_star).unwrap();
    let fixed = ParamVector::new(fixed).unwrap();

    let ours = run_fedcef(
        &prob,
        &Regularizer::Zero,
        &hp,
        &CompressorSpec::identity(),
        0,
        &RunOptions::default(),
    )
    .unwrap();
    let ours_gap = ours.iterates.last().unwrap().sub(&x_star).unwrap().norm();
    let bias = fixed.sub(&x_star).unwrap().norm();
    assert!(
        bias >= 10.0 * ours_gap,
        "bias {bias}, fedcef gap {ours_gap}"
    );

    let long = HyperParams {
        rounds: 20_000,
        ..hp
    };
    let avg = run_prox_fedavg(&prob, &Regularizer::Zero, &long, 0, &RunOptions::default()).unwrap();
    let to_fixed = avg.iterates.last().unwrap().sub(&fixed).unwrap().norm();
    assert!(
        to_fixed <= 1e-6 * bias,
        "FedAvg ends {to_fixed} from its fixed point"
    );
}

#[test]
fn pgd_on_lasso_descends_and_converges() {
    let spec = SyntheticSpec {
        loss: LossKind::SquaredError,
        dim: 20,
        samples: 100,
        clients: 1,
        partition: PartitionSpec::Iid,
        spread: HeteroSpread::default(),
    };
    let prob = generate_synthetic(&spec, &derive_stream(21, "problem").unwrap()).unwrap();
    let reg = Regularizer::l1(0.1).unwrap();
    let step = 1.0 / prob.smoothness().value;
    let traj = run_centralized_pgd(&prob, &reg, step, 10_000).unwrap();
    let values: Vec<f64> = traj
        .iter()
        .map(|z| prob.objective_value(&reg, z).unwrap())
        .collect();
    for w in values.windows(2) {
        assert!(
            w[1] <= w[0] + 1e-12 * w[0].abs(),
            "ascent {} -> {}",
            w[0],
            w[1]
        );
    }
    let reached = traj
        .iter()
        .position(|z| prox_gradient_mapping(&prob, &reg, z, step).unwrap().norm() <= 1e-8);
    assert!(reached.is_some());
}

#[test]
fn byte_accounting_matches_formulas() {
    let prob = hetero(1000, 10, 1);
    let hp = HyperParams {
        alpha: 1e-4,
        eta_g: 1.0,
        local_steps: 2,
        momentum: 0.5,
        batch: BatchSize::Full,
        rounds: 3,
    };
    let opts = RunOptions {
        keep_transcripts: true,
        ..RunOptions::default()
    };
    let top = run_fedcef(
        &prob,
        &Regularizer::Zero,
        &hp,
        &CompressorSpec::top_k(10),
        0,
        &opts,
    )
    .unwrap();
    let dense = run_fedcef(
        &prob,
        &Regularizer::Zero,
        &hp,
        &CompressorSpec::identity(),
        0,
        &opts,
    )
    .unwrap();
    let tiny = run_fedcef(
        &prob,
        &Regularizer::Zero,
        &hp,
        &CompressorSpec::top_ratio(0.01),
        0,
        &opts,
    )
    .unwrap();
    for t in &top.transcripts {
        assert_eq!(t.uplink_bytes, 800);
        assert_eq!(t.downlink_bytes, 4000);
    }
    for t in &dense.transcripts {
        assert_eq!(t.uplink_bytes, 40_000);
    }
    assert_eq!(
        comm_accounting(1000, &top.transcripts),
        vec![(800, 8000), (1600, 12_000), (2400, 16_000)]
    );
    let (up_tiny, up_dense) = (
        tiny.series.last().unwrap().uplink_bytes,
        dense.series.last().unwrap().uplink_bytes,
    );
    assert_eq!(up_tiny * 50, up_dense);
}

#[test]
fn runs_are_deterministic_per_seed() {
    let cfg = parse_config(
        "[problem]\nloss = \"logistic\"\ndim = 8\nsamples = 80\nclients = 4\n\
         [hyper]\nB = 1\nK = 3\nT = 10\n[compressor]\nkind = \"randk\"\nratio = 0.25\n",
    )
    .unwrap();
    let text = |cfg: &RunConfig| {
        let exp = fedcef::harness::run_experiment(cfg).unwrap();
        let mut buf = Vec::new();
        fedcef::harness::write_metrics(&exp, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    assert_eq!(text(&cfg), text(&cfg));
    let other = RunConfig {
        seed: 1,
        ..cfg.clone()
    };
    assert_ne!(text(&cfg), text(&other));
}

fn sample_problem(seed: u64) -> FederatedProblem {
    let spec = SyntheticSpec {
        loss: LossKind::Logistic,
        dim: 20,
        samples: 120,
        clients: 3,
        partition: PartitionSpec::Dirichlet { alpha: 0.5 },
        spread: HeteroSpread::default(),
    };
    generate_synthetic(&spec, &derive_stream(seed, "problem").unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn momentum_replays_from_recorded_gradients(
        seed in 0u64..1000,
        alpha in 0.005f64..0.1,
        eta in 0.05f64..1.0,
        lambda in 0.0f64..0.05,
        ratio in 0.05f64..1.0,
    ) {
        let prob = sample_problem(seed);
        let reg = Regularizer::l1(lambda).unwrap();
        let hp = HyperParams {
            alpha,
            eta_g: 1.0,
            local_steps: 30,
            momentum: eta,
            batch: BatchSize::Samples(2),
            rounds: 4,
        };
        let opts = RunOptions { keep_transcripts: true, ..RunOptions::default() };
        let out = run_fedcef(&prob, &reg, &hp, &CompressorSpec::top_ratio(ratio), seed, &opts).unwrap();
        // replay the momentum from the transcript: v_i <- (1 - eta) v_i + eta mean_k g_ik
        let n = prob.num_clients();
        let mut v = vec![ParamVector::zeros(20); n];
        let mut c = vec![ParamVector::zeros(20); n];
        for t in &out.transcripts {
            for i in 0..n {
                let mean = ParamVector::mean(&t.local_gradients[i]).unwrap();
                v[i] = v[i].scale(1.0 - eta).unwrap().axpy(eta, &mean).unwrap();
                c[i] = c[i].add(&t.uplink[i].densify()).unwrap();
            }
        }
        // the replayed v and c must explain the final deviation measure
        let dev = (0..n)
            .map(|i| v[i].sub(&c[i]).unwrap().norm())
            .fold(0.0, f64::max);
        let recorded = *out.control_deviation.last().unwrap();
        prop_assert!((dev - recorded).abs() <= 1e-9 * (1.0 + recorded), "{} vs {}", dev, recorded);
    }

    #[test]
    fn server_control_is_mean_of_uplinks(seed in 0u64..1000, k in 1usize..20) {
        let prob = sample_problem(seed);
        let hp = HyperParams {
            alpha: 0.05,
            eta_g: 1.5,
            local_steps: 3,
            momentum: 0.3,
            batch: BatchSize::Samples(3),
            rounds: 5,
        };
        let opts = RunOptions { keep_transcripts: true, ..RunOptions::default() };
        let out = run_fedcef(&prob, &Regularizer::Zero, &hp, &CompressorSpec::rand_k(k), seed, &opts).unwrap();
        // z^{t+1} = z^t - beta c^{t+1} with c the running mean of uplinks
        let mut c = ParamVector::zeros(20);
        for (t, tr) in out.transcripts.iter().enumerate() {
            let dense: Vec<ParamVector> = tr.uplink.iter().map(|p| p.densify()).collect();
            c = c.add(&ParamVector::mean(&dense).unwrap()).unwrap();
            let predicted = out.iterates[t].axpy(-hp.beta(), &c).unwrap();
            prop_assert!(predicted.sub(&out.iterates[t + 1]).unwrap().inf_norm() <= 1e-12);
        }
    }
}
