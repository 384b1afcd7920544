use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Deterministic random source addressed by `(seed, stream_id)`.
///
/// The same pair always replays the identical draw sequence, and distinct
/// stream ids under one seed are independent, so parallel trials can each
/// own a stream without coordinating. Backed by ChaCha8, whose output is
/// pure integer arithmetic and therefore identical on every platform.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> SeededRng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        SeededRng {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh generator on a different stream of the same seed.
    pub fn substream(&self, stream_id: u64) -> SeededRng {
        SeededRng::new(self.seed, stream_id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw (Box-Muller, two raw draws per sample).
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Unbiased uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        let n = n as u64;
        let bound = u64::MAX - u64::MAX % n;
        loop {
            let v = self.rng.next_u64();
            if v < bound {
                return (v % n) as usize;
            }
        }
    }

    /// `count` distinct indices drawn from `[0, n)` (partial Fisher-Yates).
    pub fn distinct_indices(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }

    /// Tensor of uniform draws in `[lo, hi)`.
    pub fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
        if !(lo < hi) {
            return Err(Error::InvalidRange { lo, hi });
        }
        let span = hi - lo;
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| lo + span * self.next_f64()).collect();
        Tensor::from_vec(shape, data)
    }

    /// Tensor of mean-zero normal draws with standard deviation `std`.
    pub fn gaussian(&mut self, shape: &[usize], std: f64) -> Result<Tensor> {
        if std < 0.0 || !std.is_finite() {
            return Err(Error::NegativeStd(std));
        }
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| std * self.next_gaussian()).collect();
        Tensor::from_vec(shape, data)
    }
}

/// FNV-1a hash of a byte string; used to derive stable stream ids from
/// structured labels (cell coordinates, trial indices) independent of the
/// standard library's hash randomization.
pub fn stream_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
