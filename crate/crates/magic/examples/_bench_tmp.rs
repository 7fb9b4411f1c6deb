use magic::harness::sim;
use magic::solver::{solve_randomized, Loss, ProgramSpec};
use magic::randomization::RandomizationDist;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let inst = sim::graph_instance(100, 30, 0.245, 0.01, &mut rng).unwrap();
    let dist = RandomizationDist::laplace(0.05, 29).unwrap();
    let t0 = std::time::Instant::now();
    let mut total_sweeps = 0;
    for i in 0..30 {
        let omega = dist.sample_vector(&mut rng);
        let spec = ProgramSpec::new(Loss::NodeRegression { x: inst.x.clone(), node: i }, 0.42, 0.0, omega).unwrap();
        let sol = solve_randomized(&spec, 1e-10, 200_000).unwrap();
        total_sweeps += sol.sweeps;
    }
    println!("30 solves: {:?}, total sweeps {}", t0.elapsed(), total_sweeps);
}
