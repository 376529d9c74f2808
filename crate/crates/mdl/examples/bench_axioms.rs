use mdl::limit::LimitSpace;
use mdl::lip::{distance_function, height_function, lip_scan, scale_radii};
use mdl::system::{GrowthRule, InverseSystem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let space = LimitSpace::new(InverseSystem::generate(2, GrowthRule::Periodic, 6).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let radii = scale_radii(&space, 6);
    let q = space.sample_point(&mut rng).unwrap();
    let funcs = [height_function(&space), distance_function(&space, &q).unwrap()];
    let t = Instant::now();
    let mut n = 0u32;
    for _ in 0..10 {
        let x = space.sample_point(&mut rng).unwrap();
        for f in &funcs {
            let est = lip_scan(&space, f, &x, &radii).unwrap();
            n += est.scales.len() as u32;
        }
    }
    println!("20 scans in {:?} ({n} scale rows)", t.elapsed());
}
