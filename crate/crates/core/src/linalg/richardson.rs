use nalgebra::DVector;

/// Extrapolated limit of a sequence of quotients.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrapolation {
    pub estimate: DVector<f64>,
    /// Error estimate of the selected table entry.
    pub error: f64,
}

/// Richardson table for `q(h_k)` with `h_k = h_0 / 2^k` and an error
/// expansion in integer powers of `h`. Returns the table entry with the
/// smallest error estimate, which guards against roundoff at high levels.
pub fn richardson(quotients: &[DVector<f64>]) -> Extrapolation {
    assert!(!quotients.is_empty(), "richardson needs at least one quotient");
    let mut prev: Vec<DVector<f64>> = vec![quotients[0].clone()];
    let mut best = Extrapolation {
        estimate: quotients[0].clone(),
        error: f64::INFINITY,
    };
    for q in &quotients[1..] {
        let mut row = vec![q.clone()];
        for j in 1..=prev.len() {
            let factor = (1u64 << j) as f64 - 1.0;
            let next = &row[j - 1] + (&row[j - 1] - &prev[j - 1]) / factor;
            let err = (&next - &row[j - 1]).amax().max((&next - &prev[j - 1]).amax());
            if err <= best.error {
                best = Extrapolation {
                    estimate: next.clone(),
                    error: err,
                };
            }
            row.push(next);
        }
        prev = row;
    }
    best
}
