//! Activity coefficients as composition derivatives of `g^E/RT`.

use gibbsnet_autodiff::{AdError, Dual2, Tape};

/// `ln γ_i = g + D_i g - Σ_{j<N} x_j D_j g`, where `D_j` differentiates
/// along `e_j - e_N` so the composition stays on the simplex.
///
/// `excess` receives one jet per component and returns `g^E/RT`; it is
/// called once per direction.
pub fn ln_gamma_by_identities<F>(x: &[f64], mut excess: F) -> Result<Vec<f64>, AdError>
where
    F: FnMut(&mut Tape, &[Dual2]) -> Result<Dual2, AdError>,
{
    let n = x.len();
    assert!(n >= 2, "need at least two components");
    let mut g = 0.0;
    let mut dg = vec![0.0; n];
    for j in 0..n - 1 {
        let mut tape = Tape::new();
        let plus = tape.scalar(1.0);
        let minus = tape.scalar(-1.0);
        let jets: Vec<Dual2> = x
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let node = tape.scalar(v);
                let d = if k == j {
                    Some(plus)
                } else if k == n - 1 {
                    Some(minus)
                } else {
                    None
                };
                Dual2::from_parts(node, d, None, false)
            })
            .collect();
        let out = excess(&mut tape, &jets)?;
        g = out.value(&tape);
        dg[j] = out.first(&tape);
    }
    let s: f64 = (0..n - 1).map(|j| x[j] * dg[j]).sum();
    Ok((0..n).map(|i| g + dg[i] - s).collect())
}
