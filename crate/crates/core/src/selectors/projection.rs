use std::sync::OnceLock;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::derive_seed;

/// Input coordinates sharing one seeded sign stream.
const BLOCK: usize = 64;

/// Linear map applied to gradients before comparing them.
#[derive(Debug, Clone)]
pub enum Projection {
    Identity,
    /// `d × n` matrix of independent ±1/√d entries, stored one bit per entry.
    Rademacher {
        input_dim: usize,
        output_dim: usize,
        seed: u64,
        /// For input coordinate `i`, words `i*stride .. (i+1)*stride` hold the
        /// signs of column `i` (bit set = +1).
        bits: Vec<u64>,
        stride: usize,
    },
}

impl Projection {
    pub fn rademacher(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        assert!(output_dim >= 1, "projection dimension must be >= 1");
        let stride = output_dim.div_ceil(64);
        let mut bits = vec![0u64; input_dim * stride];
        for (b, chunk) in bits.chunks_mut(BLOCK * stride).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
            for w in chunk {
                *w = rng.next_u64();
            }
        }
        Projection::Rademacher {
            input_dim,
            output_dim,
            seed,
            bits,
            stride,
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Projection::Identity => input_dim,
            Projection::Rademacher { output_dim, .. } => *output_dim,
        }
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        match self {
            Projection::Identity => g.to_vec(),
            Projection::Rademacher {
                input_dim,
                output_dim,
                bits,
                stride,
                ..
            } => {
                assert_eq!(g.len(), *input_dim, "projection input length");
                let table = sign_table();
                let mut out = vec![0.0; stride * 64];
                for (i, &gi) in g.iter().enumerate() {
                    if gi == 0.0 {
                        continue;
                    }
                    let col = &bits[i * stride..(i + 1) * stride];
                    for (w, &word) in col.iter().enumerate() {
                        let dst = &mut out[w * 64..(w + 1) * 64];
                        for (byte_idx, chunk) in dst.chunks_exact_mut(8).enumerate() {
                            let signs = &table[((word >> (8 * byte_idx)) & 0xff) as usize];
                            for (o, s) in chunk.iter_mut().zip(signs) {
                                *o += gi * s;
                            }
                        }
                    }
                }
                out.truncate(*output_dim);
                let scale = 1.0 / (*output_dim as f64).sqrt();
                for o in &mut out {
                    *o *= scale;
                }
                out
            }
        }
    }
}

/// `table[b][k]` is +1 when bit `k` of `b` is set, otherwise -1.
fn sign_table() -> &'static [[f64; 8]; 256] {
    static TABLE: OnceLock<[[f64; 8]; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[0.0; 8]; 256];
        for (b, row) in t.iter_mut().enumerate() {
            for (k, s) in row.iter_mut().enumerate() {
                *s = if (b >> k) & 1 == 1 { 1.0 } else { -1.0 };
            }
        }
        t
    })
}
