//! Deterministic desk-scale classifier and images: 8×8 strokes in two
//! orientation classes (horizontal, vertical) and a dense-ReLU net whose
//! first layer holds 3×3 line detectors replicated at every valid
//! position, pooled per class by the second layer.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::GrayImage;
use crate::imageio::write_image;
use crate::netfwd::{Layer, NetSpec};

pub const SIDE: usize = 8;
pub const CLASSES: usize = 2;

/// Stroke angle in degrees per class.
pub const CLASS_ANGLES: [f64; CLASSES] = [0.0, 90.0];

const K: usize = 3;
const POSITIONS: usize = (SIDE - K + 1) * (SIDE - K + 1);

/// Line detectors, one per class: horizontal, vertical.
const KERNELS: [[f64; 9]; CLASSES] = [
    [-1.0, -1.0, -1.0, 2.0, 2.0, 2.0, -1.0, -1.0, -1.0],
    [-1.0, 2.0, -1.0, -1.0, 2.0, -1.0, -1.0, 2.0, -1.0],
];

fn gauss(d: f64, s: f64) -> f64 {
    (-(d * d) / (2.0 * s * s)).exp()
}

/// Anti-aliased stroke through `centre` (pixels from the image centre) at
/// `angle` degrees, peak `intensity`.
pub fn stroke(angle: f64, centre: (f64, f64), intensity: f64) -> GrayImage {
    let c = (SIDE as f64 - 1.0) / 2.0;
    let (s, co) = angle.to_radians().sin_cos();
    GrayImage::from_fn(SIDE, SIDE, 1, |r, col, _| {
        let (x, y) = (col as f64 - c - centre.0, r as f64 - c - centre.1);
        let along = x * co - y * s;
        let across = x * s + y * co;
        intensity * gauss(across, 0.6) * gauss(along, 2.5)
    })
    .expect("stroke values lie in [0, 1]")
}

/// Noise-free prototype of class `k`.
pub fn prototype(k: usize) -> GrayImage {
    stroke(CLASS_ANGLES[k], (0.0, 0.0), 1.0)
}

/// `flatten → dense(64, 72) → relu → dense(72, 2)`. Hidden unit
/// `(kernel, position)` is one line detector at one placement; logit `k`
/// sums the detectors of class `k`.
pub fn model() -> NetSpec {
    let n = SIDE * SIDE;
    let hidden = KERNELS.len() * POSITIONS;
    let span = SIDE - K + 1;
    let mut w1 = vec![0.0; hidden * n];
    for (o, kernel) in KERNELS.iter().enumerate() {
        for p in 0..POSITIONS {
            let (pr, pc) = (p / span, p % span);
            let row = &mut w1[(o * POSITIONS + p) * n..(o * POSITIONS + p + 1) * n];
            for ky in 0..K {
                for kx in 0..K {
                    row[(pr + ky) * SIDE + pc + kx] = kernel[ky * K + kx] / 6.0;
                }
            }
        }
    }
    let mut w2 = vec![0.0; CLASSES * hidden];
    for k in 0..CLASSES {
        for p in 0..POSITIONS {
            w2[k * hidden + k * POSITIONS + p] = 1.0;
        }
    }
    NetSpec {
        layers: vec![
            Layer::Flatten,
            Layer::Dense {
                inputs: n,
                outputs: hidden,
                weights: w1,
                bias: vec![0.0; hidden],
            },
            Layer::Relu,
            Layer::Dense {
                inputs: hidden,
                outputs: CLASSES,
                weights: w2,
                bias: vec![0.0; CLASSES],
            },
        ],
    }
}

/// `count` labelled strokes with jittered angle, offset and intensity, a
/// fainter perpendicular distractor stroke and uniform pixel noise, clamped
/// to `[0, 1]`.
pub fn examples(count: usize, seed: u64) -> Vec<(GrayImage, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let label = i % CLASSES;
            let angle = CLASS_ANGLES[label] + rng.gen_range(-10.0..10.0);
            let centre = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let intensity = rng.gen_range(0.5..1.0);
            let main = stroke(angle, centre, intensity);
            let cross = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            let distractor = stroke(angle + 90.0, cross, intensity * rng.gen_range(0.0..0.9));
            let noise: f64 = rng.gen_range(0.0..0.2);
            let data = main
                .data()
                .iter()
                .zip(distractor.data())
                .map(|(a, b)| (a.max(*b) + noise * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0))
                .collect();
            let img = GrayImage::new(SIDE, SIDE, 1, data).expect("clamped values");
            (img, label)
        })
        .collect()
}

/// Paths written by [`write`].
#[derive(Clone, Debug, PartialEq)]
pub struct FixturePaths {
    pub weights: PathBuf,
    pub images: PathBuf,
    pub labels: PathBuf,
}

/// Writes `weights.txt`, `images/NNN.txt`, an `images.txt` list (paths
/// relative to the list) and `labels.txt` into `dir`.
pub fn write(dir: &Path, count: usize, seed: u64) -> Result<FixturePaths> {
    std::fs::create_dir_all(dir.join("images"))?;
    let weights = dir.join("weights.txt");
    std::fs::write(&weights, model().to_text())?;
    let mut list = String::new();
    let mut labels = String::new();
    for (i, (img, label)) in examples(count, seed).iter().enumerate() {
        let rel = format!("images/{i:03}.txt");
        write_image(&dir.join(&rel), img)?;
        list.push_str(&rel);
        list.push('\n');
        labels.push_str(&format!("{label}\n"));
    }
    let images = dir.join("images.txt");
    let labels_path = dir.join("labels.txt");
    std::fs::write(&images, list)?;
    std::fs::write(&labels_path, labels)?;
    Ok(FixturePaths {
        weights,
        images,
        labels: labels_path,
    })
}
