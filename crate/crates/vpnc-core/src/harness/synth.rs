//! Deterministic synthetic panoramas for training and tests.
//!
//! Each image is a sum of a few smooth lobes evaluated directly on the
//! unit sphere, so it is band-limited, seam-free at the longitude wrap,
//! pole-consistent, and genuinely redundant across overlapping viewports;
//! there is shared structure for cross-viewport conditioning to exploit.

use crate::geometry::{erp_to_sphere, ErpImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LOBES: usize = 8;

struct Lobe {
    dir: [f64; 3],
    freq: f64,
    phase: f64,
    /// Per-channel amplitude so the channels are correlated but not equal.
    amp: [f64; 3],
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0f64),
        ];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-3 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Renders a smooth test panorama. Identical (seed, size) inputs produce
/// identical pixels on every platform that rounds f64 the same way.
pub fn synthetic_erp(width: usize, height: usize, seed: u64) -> ErpImage {
    assert_eq!(width, 2 * height, "panorama must be 2:1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lobes: Vec<Lobe> = (0..LOBES)
        .map(|_| Lobe {
            dir: random_unit(&mut rng),
            freq: rng.gen_range(1.0..4.0f64),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            amp: [
                rng.gen_range(0.2..1.0f64),
                rng.gen_range(0.2..1.0f64),
                rng.gen_range(0.2..1.0f64),
            ],
        })
        .collect();
    // Normalize so the worst-case sum stays inside [0, 1] around 0.5.
    let norm: [f64; 3] = {
        let mut n = [0.0f64; 3];
        for l in &lobes {
            for (c, acc) in n.iter_mut().enumerate() {
                *acc += l.amp[c];
            }
        }
        n
    };
    let mut data = vec![0.0f32; width * height * 3];
    for row in 0..height {
        for col in 0..width {
            let dir = erp_to_sphere(col as f64 + 0.5, row as f64 + 0.5, width, height);
            for c in 0..3 {
                let mut v = 0.0f64;
                for l in &lobes {
                    let dot = dir[0] * l.dir[0] + dir[1] * l.dir[1] + dir[2] * l.dir[2];
                    v += l.amp[c] * (l.freq * dot + l.phase).cos();
                }
                let px = 0.5 + 0.5 * v / norm[c];
                data[(row * width + col) * 3 + c] = px.clamp(0.0, 1.0) as f32;
            }
        }
    }
    ErpImage::new(width, height, data).expect("2:1 checked above")
}
