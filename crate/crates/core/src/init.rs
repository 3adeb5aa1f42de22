use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skinmamba_tensor::{Param, Real, Tensor};

/// Seeded source of initial parameter values. Layers draw from it in
/// construction order, so a fixed seed and config give identical models.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn uniform<T: Real>(&mut self, shape: impl Into<Vec<usize>>, low: f64, high: f64) -> Tensor<T> {
        let shape = shape.into();
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(self.rng.gen_range(low..high))).collect();
        Tensor::new(shape, data)
    }

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the default for conv and linear
    /// weights and biases.
    pub fn kaiming_uniform<T: Real>(&mut self, shape: impl Into<Vec<usize>>, fan_in: usize) -> Param<T> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Param::new(self.uniform(shape, -bound, bound))
    }

    pub fn unit(&mut self) -> f64 {
        self.rng.gen()
    }
}
