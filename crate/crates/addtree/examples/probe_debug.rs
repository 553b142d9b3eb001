//! Scratch probe (not shipped): replay a run and dump acquisition state.

use addtree::acquisition::{propose, UcbConfig};
use addtree::baselines::{Strategy, StrategyKind, StrategyOptions};
use addtree::bench::BuiltinObjective;
use addtree::gp::{fit, Dataset, FitConfig, NoiseModel};

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(3);
    let iters: usize = std::env::args()
        .nth(2)
        .and_then(|a| a.parse().ok())
        .unwrap_or(40);
    let ambient_dim = std::env::args().nth(3).as_deref() == Some("ambient");
    let objective = BuiltinObjective::Jenatton;
    let spec = objective.spec().into_shared();
    let mut options = StrategyOptions::default();
    options.ucb.per_vertex_dim = !ambient_dim;
    let mut strategy = Strategy::new(StrategyKind::AddTree, spec.clone(), seed, options).unwrap();
    let mut points = Vec::new();
    let mut ys = Vec::new();
    for t in 1..=iters {
        let p = strategy.propose(t).unwrap();
        let y = objective.eval(&p);
        strategy.observe(p.clone(), y).unwrap();
        points.push(p);
        ys.push(y);
    }
    let mut per_leaf = vec![0usize; 4];
    for p in &points {
        per_leaf[spec.path_of_point(p).unwrap()] += 1;
    }
    println!("observations per leaf: {per_leaf:?}");
    println!("best y: {}", ys.iter().cloned().fold(f64::INFINITY, f64::min));

    let data = Dataset::new(spec.clone(), points, ys, NoiseModel::Learn).unwrap();
    let gp = fit(data, &FitConfig::with_seed(999)).unwrap();
    println!("y_shift {} y_scale {}", gp.y_shift(), gp.y_scale());
    println!("noise {:.3e}  mll {:.3}", gp.noise_variance(), gp.mll());
    for (name, v) in gp.named_params() {
        println!("  {name} = {v:.4}  (exp {:.4})", v.exp());
    }
    let cfg = UcbConfig::default();
    let prop = propose(&gp, iters + 1, &cfg, 1, None);
    println!("path_scores: {:?}", prop.path_scores);
    println!("chosen path {}  point {}", prop.path, prop.point);
    for (v, u) in &prop.vertex_scores {
        let x = &prop.vertex_points[v];
        let comp = gp.component_posterior(*v, x).unwrap();
        println!(
            "  vertex {v}: u = {u:.4} at x = {x:?}  (mu {:.4}, sigma {:.4})",
            comp.mean,
            comp.variance.sqrt()
        );
    }
    // Joint posterior along a sweep of each path.
    use addtree::acquisition::joint_ucb;
    use addtree::tree_space::sample_on_path;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
    for leaf in 0..spec.leaf_count() {
        let mut best = f64::NEG_INFINITY;
        let mut worst_sigma: f64 = 0.0;
        for _ in 0..200 {
            let p = sample_on_path(&spec, leaf, &mut rng);
            let u = joint_ucb(&gp, &p, iters + 1, &cfg);
            let post = gp.posterior(&p).unwrap();
            best = best.max(u);
            worst_sigma = worst_sigma.max(post.variance.sqrt() / gp.y_scale());
        }
        println!("path {leaf}: max joint UCB over 200 probes = {best:.4}, max sigma = {worst_sigma:.4}");
    }
}
