//! Deterministic parallel reductions over sample rows.
//!
//! Rows are cut into fixed-size chunks. Each chunk is summed sequentially and
//! the chunk partials are combined by pairwise summation in chunk order, so the
//! result depends only on the data and never on the rayon pool size.

use rayon::prelude::*;

/// Number of rows summed sequentially inside one chunk.
pub const CHUNK_ROWS: usize = 4096;

/// Sums `width` accumulators over all rows of a row-major buffer.
///
/// `visit` receives one row and the chunk-local accumulator slice.
pub fn sum_rows<F>(data: &[f64], n_cols: usize, width: usize, visit: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    sum_rows_with(data, n_cols, width, || (), |row, acc, _| visit(row, acc))
}

/// Like [`sum_rows`] with a scratch value built once per chunk.
pub fn sum_rows_with<S, I, F>(data: &[f64], n_cols: usize, width: usize, scratch: I, visit: F) -> Vec<f64>
where
    I: Fn() -> S + Sync,
    F: Fn(&[f64], &mut [f64], &mut S) + Sync,
{
    sum_rows_sized::<0, S, I, F>(data, n_cols, width, scratch, visit)
}

/// Like [`sum_rows_with`]; when `N > 0` the row width is the constant `N`
/// (and must equal `n_cols`), which lets the per-row loop specialize.
pub fn sum_rows_sized<const N: usize, S, I, F>(
    data: &[f64],
    n_cols: usize,
    width: usize,
    scratch: I,
    visit: F,
) -> Vec<f64>
where
    I: Fn() -> S + Sync,
    F: Fn(&[f64], &mut [f64], &mut S) + Sync,
{
    assert!(N == 0 || N == n_cols, "row width {n_cols} does not match {N}");
    let partials: Vec<Vec<f64>> = data
        .par_chunks(CHUNK_ROWS * n_cols)
        .map(|chunk| {
            let cols = if N == 0 { n_cols } else { N };
            let mut acc = vec![0.0; width];
            let mut state = scratch();
            for row in chunk.chunks_exact(cols) {
                let row = if N == 0 { row } else { &row[..N] };
                visit(row, &mut acc, &mut state);
            }
            acc
        })
        .collect();
    pairwise(&partials, width)
}

fn pairwise(parts: &[Vec<f64>], width: usize) -> Vec<f64> {
    match parts.len() {
        0 => vec![0.0; width],
        1 => parts[0].clone(),
        len => {
            let (lo, hi) = parts.split_at(len / 2);
            let mut left = pairwise(lo, width);
            let right = pairwise(hi, width);
            for (l, r) in left.iter_mut().zip(&right) {
                *l += r;
            }
            left
        }
    }
}

/// SplitMix64 finalizer; used to derive independent child seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for item `index` of stream `domain` under a parent seed.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(domain)).wrapping_add(index))
}
