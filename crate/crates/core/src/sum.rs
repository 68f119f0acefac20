//! Order-fixed summation so that reductions do not depend on how work was
//! split between threads.

const LEAF: usize = 16;

/// Pairwise (cascade) summation with a fixed recursion split.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= LEAF {
        let mut s = 0.0;
        for &v in values {
            s += v;
        }
        return s;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sum of `f(x)` over an iterator, collected then summed pairwise.
pub fn pairwise_sum_by<I, F>(iter: I, f: F) -> f64
where
    I: IntoIterator,
    F: FnMut(I::Item) -> f64,
{
    let v: Vec<f64> = iter.into_iter().map(f).collect();
    pairwise_sum(&v)
}
