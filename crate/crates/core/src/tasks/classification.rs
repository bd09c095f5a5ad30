//! Digit-style classification task: synthetic generator, corruption split
//! machinery, and base-classifier pretraining.
//!
//! The synthetic generator provides a hermetic substitute for the real digit
//! files with the same shape: 10 classes of grayscale images built from
//! class-specific bump patterns plus light pixel noise. The base predictor is
//! a dense network trained on clean images with cross-entropy; calibration
//! and test data get the rotation + noise corruption.

use super::corrupt::corrupt;
use super::idx::ImageSet;
use crate::conformal::{LabeledData, Target};
use crate::diff::nn::{forward_mlp, forward_mlp_on_tape, Activation, MlpArch, MlpVars, OutputHead};
use crate::diff::params::ParamVector;
use crate::diff::tape::Tape;
use crate::optim::{OptimKind, Updater};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const N_CLASSES: usize = 10;

/// Fixed stream key for class prototypes: patterns are part of the task
/// definition, not of any per-seed randomness.
const PROTOTYPE_STREAM: u64 = 0xC1A5;

/// Class prototype: a sum of bright Gaussian bumps at class-keyed positions.
fn prototype(class: usize, size: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROTOTYPE_STREAM);
    rng.set_stream(class as u64);
    let n_bumps = 3;
    let sigma = size as f64 / 7.0;
    let mut img = vec![0.0; size * size];
    for _ in 0..n_bumps {
        // Keep bump centers away from the border so rotations keep most mass.
        let margin = size as f64 * 0.2;
        let bc: f64 = rng.random_range(margin..(size as f64 - margin));
        let br: f64 = rng.random_range(margin..(size as f64 - margin));
        let amp: f64 = rng.random_range(0.7..1.0);
        for r in 0..size {
            for c in 0..size {
                let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
                img[r * size + c] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    for p in img.iter_mut() {
        *p = p.min(1.0);
    }
    img
}

/// Clean synthetic digits: prototype of a uniformly random class plus
/// N(0, 0.1²) pixel noise, clipped to [0, 1].
pub fn gen_synthetic_digits(n: usize, size: usize, seed: u64) -> ImageSet {
    let protos: Vec<Vec<f64>> = (0..N_CLASSES).map(|c| prototype(c, size)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..N_CLASSES);
        let img: Vec<f64> = protos[class]
            .iter()
            .map(|&p| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                (p + 0.1 * z).clamp(0.0, 1.0)
            })
            .collect();
        images.push(img);
        labels.push(class);
    }
    ImageSet {
        images,
        labels,
        width: size,
        height: size,
    }
}

#[derive(Debug, Clone)]
pub struct ClassificationTask {
    /// Clean images for base-model pretraining.
    pub clean_train: ImageSet,
    /// Corrupted calibration split.
    pub cal: LabeledData,
    /// Corrupted test split, disjoint from calibration.
    pub test: LabeledData,
    pub width: usize,
    pub height: usize,
}

pub fn to_labeled(set: &ImageSet) -> LabeledData {
    LabeledData::new(
        set.images.clone(),
        set.labels.iter().map(|&l| Target::Class(l)).collect(),
    )
}

/// Assemble the corrupted-digit task from a clean pool: pretraining images
/// come first; the remainder is corrupted, shuffled per seed, and split into
/// disjoint calibration and test sets.
pub fn build_classification_task(
    clean_pool: &ImageSet,
    n_train: usize,
    n_cal: usize,
    n_test: usize,
    seed: u64,
) -> ClassificationTask {
    assert!(
        clean_pool.len() >= n_train + n_cal + n_test,
        "clean pool too small: {} < {}",
        clean_pool.len(),
        n_train + n_cal + n_test
    );
    let train_idx: Vec<usize> = (0..n_train).collect();
    let rest_idx: Vec<usize> = (n_train..clean_pool.len()).collect();
    let clean_train = clean_pool.subset(&train_idx);
    let held_out = clean_pool.subset(&rest_idx);

    let corrupted = corrupt(&held_out, seed);

    // Per-seed reshuffle of the corrupted pool, then disjoint splits.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX); // do not collide with per-image noise streams
    let mut indices: Vec<usize> = (0..corrupted.len()).collect();
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    let cal = corrupted.subset(&indices[..n_cal]);
    let test = corrupted.subset(&indices[n_cal..n_cal + n_test]);

    ClassificationTask {
        clean_train,
        cal: to_labeled(&cal),
        test: to_labeled(&test),
        width: clean_pool.width,
        height: clean_pool.height,
    }
}

/// The dense substitute for a convolutional base classifier:
/// (H·W) → 256 → 128 → 10 with ReLU and a log-softmax head.
pub fn classifier_arch(input: usize) -> MlpArch {
    MlpArch::new(input, vec![256, 128], N_CLASSES, Activation::Relu)
        .with_head(OutputHead::LogSoftmax)
}

/// Cross-entropy pretraining on clean images (Adam, minibatched).
pub fn train_base_classifier(
    clean: &ImageSet,
    arch: &MlpArch,
    steps: usize,
    lr: f64,
    seed: u64,
) -> ParamVector {
    assert!(!clean.is_empty(), "empty pretraining set");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = arch.init_params(&mut rng, false);
    let mut updater = Updater::new(OptimKind::Adam, lr, params.len());
    let n = clean.len();
    let batch_size = n.min(100);

    for _ in 0..steps {
        let mut tape = Tape::new();
        let theta = tape.leaf(params.values().to_vec());
        let vars = MlpVars::slice_from(&mut tape, arch, theta);
        let mut losses = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let i = rng.random_range(0..n);
            let logp = forward_mlp_on_tape(&mut tape, arch, &vars, &clean.images[i]);
            let picked = tape.index(logp, clean.labels[i]);
            losses.push(tape.neg(picked));
        }
        let stacked = tape.concat(&losses);
        let loss = tape.mean(stacked);
        let grads = tape.backward(loss);
        updater.step(params.values_mut(), grads.wrt(theta));
    }
    params
}

/// Top-1 accuracy of a classifier on an image set.
pub fn classifier_accuracy(arch: &MlpArch, params: &ParamVector, data: &ImageSet) -> f64 {
    let mut correct = 0usize;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        let logp = forward_mlp(arch, params.values(), img);
        let pred = logp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if pred == label {
            correct += 1;
        }
    }
    correct as f64 / data.len() as f64
}
