//! Scratch probe (not shipped): inspect a small-n regression fit.

use addtree::bench::BuiltinObjective;
use addtree::gp::{fit, Dataset, FitConfig, NoiseModel};
use addtree::kernel::{build_add_tree, ParamInit};
use addtree::tree_space::sample_uniform;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let seed: u64 = std::env::args().nth(2).and_then(|a| a.parse().ok()).unwrap_or(0);
    let objective = BuiltinObjective::Jenatton;
    let spec = objective.spec().into_shared();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train: Vec<_> = (0..n).map(|_| sample_uniform(&spec, &mut rng)).collect();
    let train_y: Vec<f64> = train.iter().map(|p| objective.eval(p)).collect();
    let mut trng = ChaCha8Rng::seed_from_u64(seed ^ 0x7465737473657421);
    let test: Vec<_> = (0..50).map(|_| sample_uniform(&spec, &mut trng)).collect();
    let test_y: Vec<f64> = test.iter().map(|p| objective.eval(p)).collect();

    let mut per_leaf = vec![0usize; 4];
    for p in &train {
        per_leaf[spec.path_of_point(p).unwrap()] += 1;
    }
    println!("train per leaf: {per_leaf:?}");

    let fraction: f64 = std::env::args()
        .nth(3)
        .and_then(|a| a.parse().ok())
        .unwrap_or(0.2);
    let data = Dataset::new(
        spec.clone(),
        train.clone(),
        train_y.clone(),
        NoiseModel::Learn,
    )
    .unwrap();
    let gp = fit(
        data,
        &FitConfig {
            init: ParamInit {
                variance: 1.0,
                lengthscale_fraction: fraction,
            },
            tied: false,
            restarts: 5,
            optim: addtree::optim::OptimOptions {
                max_iters: std::env::args()
                    .nth(7)
                    .and_then(|a| a.parse().ok())
                    .unwrap_or(0),
                ..Default::default()
            },
            ..FitConfig::with_seed(seed)
        },
    )
    .unwrap();
    println!("fitted mll {:.2}, noise {:.2e}", gp.mll(), gp.noise_variance());
    for (k, v) in gp.named_params() {
        println!("  {k} = {v:+.3} (exp {:.4})", v.exp());
    }
    let mut se = 0.0;
    let mut per_leaf_se = vec![(0.0, 0usize); 4];
    for (p, &y) in test.iter().zip(&test_y) {
        let e = gp.posterior(p).unwrap().mean - y;
        se += e * e;
        let l = spec.path_of_point(p).unwrap();
        per_leaf_se[l].0 += e * e;
        per_leaf_se[l].1 += 1;
    }
    println!("fitted MSE = {:.3e}", se / 50.0);
    for (l, (s, c)) in per_leaf_se.iter().enumerate() {
        println!("  leaf {l}: mse {:.3e} over {c}", s / (*c as f64).max(1.0));
    }

    // Hand-set parameters roughly matching the generative structure:
    // shared linear components and quadratic leaves, in standardized units.
    let template = build_add_tree(spec.clone(), &ParamInit::default());
    let mut theta = template.pack();
    let (shift, scale) = {
        let m = train_y.iter().sum::<f64>() / n as f64;
        let v = train_y.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / n as f64;
        (m, v.sqrt())
    };
    println!("shift {shift:.3} scale {scale:.3}");
    let ids = template.param_ids();
    let mid_l: f64 = std::env::args().nth(4).and_then(|a| a.parse().ok()).unwrap_or(5.0);
    let leaf_l: f64 = std::env::args().nth(5).and_then(|a| a.parse().ok()).unwrap_or(3.0);
    for (k, id) in ids.iter().enumerate() {
        use addtree::kernel::ParamId;
        theta[k] = match id {
            // Mid vertices carry r (range 1, linear): long lengthscale.
            ParamId::Variance(v) if *v <= 2 => ((0.5 / scale) * (0.5 / scale)).ln(),
            ParamId::Lengthscale(v, _) if *v <= 2 => mid_l.ln(),
            // Leaves carry x^2: a global parabola, long lengthscale too.
            ParamId::Variance(_) => ((0.5 / scale) * (0.5 / scale)).ln(),
            ParamId::Lengthscale(_, _) => leaf_l.ln(),
            ParamId::InteractionScale(_) => 0.0,
        };
    }
    let oracle = template.with_packed(&theta).unwrap();
    let noise2: f64 = std::env::args().nth(6).and_then(|a| a.parse().ok()).unwrap_or(1e-8);
    let data2 =
        Dataset::new(spec.clone(), train, train_y, NoiseModel::Fixed(vec![noise2; n])).unwrap();
    let (mll2, _) = addtree::gp::log_marginal_likelihood(&oracle, &data2, None).unwrap();
    println!("oracle-params mll {mll2:.2}");
    // Exact conditioning at the hand-set parameters, no fitting at all.
    let gp2 = addtree::gp::FittedGP::conditioned(oracle, data2, 0.0).unwrap();
    let mut se2 = 0.0;
    for (p, &y) in test.iter().zip(&test_y) {
        let e = gp2.posterior(p).unwrap().mean - y;
        se2 += e * e;
    }
    println!("oracle-params MSE = {:.3e}", se2 / 50.0);
}
