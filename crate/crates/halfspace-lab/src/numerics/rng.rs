use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Counter-based generator; every logical task owns an independent stream.
pub type LabRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a path of task indices into a single 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019))))
}

/// Stream for the task identified by `path` under `master`.
///
/// Serial and parallel schedules that use the same paths see identical draws.
pub fn stream(master: u64, path: &[u64]) -> LabRng {
    let mut seed = [0u8; 32];
    let mut s = derive_seed(master, path);
    for chunk in seed.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// i.i.d. normal coordinates with the given per-coordinate variance.
pub fn gaussian_vector<R: rand::Rng + ?Sized>(n: usize, variance: f64, rng: &mut R) -> Vec<f64> {
    let sd = variance.max(0.0).sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect()
}
