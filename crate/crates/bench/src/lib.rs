//! Deterministic inputs shared by the kernel benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scgan_core::{Image8, Tensor};

/// Uniform `[-1, 1)` tensor of the given shape.
pub fn uniform_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(data, shape).expect("length matches shape")
}

/// Random RGB image.
pub fn noise_image(height: usize, width: usize, seed: u64) -> Image8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..height * width * 3).map(|_| rng.random::<u8>()).collect();
    Image8::new(height, width, 3, data).expect("length matches shape")
}
