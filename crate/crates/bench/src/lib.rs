//! Shared inputs for the benchmarks in `benches/`. Run them with
//! `cargo bench -p speller-bench`.

use speller_core::numcore::Tensor;

/// Deterministic pseudo-signal in [-0.5, 0.5).
pub fn signal(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5)
}

/// A sine at 0.37 rad/sample, long enough for zero-phase filtering.
pub fn trace(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.37).sin()).collect()
}

/// Prefixes of one sentence, as seen while decoding letter by letter.
pub fn contexts(n: usize) -> Vec<String> {
    const TEXT: &str = "THE QUICK BROWN FOX";
    (0..n).map(|i| TEXT[..1 + i % TEXT.len()].to_string()).collect()
}

/// Next-symbol training pairs over the 27-symbol vocabulary.
pub fn sequences(batch: usize, len: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let inputs: Vec<Vec<usize>> = (0..batch).map(|i| (0..len).map(|t| (i + t) % 27).collect()).collect();
    let targets = inputs.iter().map(|s| s.iter().map(|&v| (v + 1) % 27).collect()).collect();
    (inputs, targets)
}
