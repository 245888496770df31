use super::{Result, Tape, Tensor, TensorError, Var};

/// Per-coordinate relative error `|a - n| / max(1e-8, |a| + |n|)`.
fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / f64::max(1e-8, a.abs() + n.abs())
}

/// Stencil disagreements above this trigger the slower extrapolated estimate.
const REFINE_ABOVE: f64 = 1e-7;

/// Largest relative disagreement between reverse-mode gradients of `f` and a
/// numerical estimate, over every coordinate of every input.
///
/// Each coordinate is first estimated with the fourth-order central stencil
/// `(8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h`, `h = eps`. Where that
/// disagrees with the analytic value, the estimate is redone with Ridders'
/// extrapolation from starting steps 1, 0.1, 0.01 and 0.001 (those not below
/// `eps`), keeping the result with the smallest self-reported error. Tiny
/// gradients sit below the rounding noise of a fixed small step, and large
/// steps can cross kinks; the choice never consults the analytic value.
pub fn gradient_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(TensorError::InvalidArgument {
            op: "gradient_check",
            msg: format!("eps must be positive, got {eps}"),
        });
    }
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&vars)?;
    let analytic: Vec<Tensor> = if out.requires_grad() {
        let grads = out.backward()?;
        vars.iter().map(|v| grads.get_or_zeros(v)).collect()
    } else {
        if out.value().numel() != 1 {
            return Err(TensorError::NonScalarLoss(out.shape()));
        }
        inputs.iter().map(|t| Tensor::zeros(t.shape())).collect()
    };

    let eval = |which: usize, coord: usize, delta: f64| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut t = t.clone();
                if i == which {
                    t.data_mut()[coord] += delta;
                }
                tape.constant(t)
            })
            .collect();
        Ok(f(&vars)?.value().item())
    };

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.numel() {
            let a = analytic[i].data()[k];
            let near = eval(i, k, eps)? - eval(i, k, -eps)?;
            let far = eval(i, k, 2.0 * eps)? - eval(i, k, -2.0 * eps)?;
            let mut err = relative_error(a, (8.0 * near - far) / (12.0 * eps));
            if err > REFINE_ABOVE {
                let mut best: Option<(f64, f64)> = None;
                for h0 in [1.0, 0.1, 0.01, 1e-3].into_iter().filter(|&h| h >= eps) {
                    let (estimate, est_err) = ridders(|d| eval(i, k, d), h0)?;
                    if best.map_or(true, |(_, e)| est_err < e) {
                        best = Some((estimate, est_err));
                    }
                }
                if let Some((estimate, _)) = best {
                    err = relative_error(a, estimate);
                }
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Ridders' polynomial extrapolation of central differences, shrinking the
/// step from `h0`. Returns the estimate and its error estimate.
///
/// The error estimate never drops below the rounding noise `eps·|g(0)| / h` of
/// the central difference it came from; otherwise quantized steps that happen
/// to agree would report a spurious exact result.
fn ridders(g: impl Fn(f64) -> Result<f64>, h0: f64) -> Result<(f64, f64)> {
    const SHRINK: f64 = 1.4;
    const TABLE: usize = 10;
    const SAFE: f64 = 2.0;
    let shrink2 = SHRINK * SHRINK;
    let scale = f64::EPSILON * g(0.0)?.abs().max(f64::MIN_POSITIVE);
    let mut table = [[0.0f64; TABLE]; TABLE];
    let mut h = h0;
    table[0][0] = (g(h)? - g(-h)?) / (2.0 * h);
    let mut best = (table[0][0], f64::INFINITY);
    for i in 1..TABLE {
        h /= SHRINK;
        table[0][i] = (g(h)? - g(-h)?) / (2.0 * h);
        let mut fac = shrink2;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
            fac *= shrink2;
            let e = (table[j][i] - table[j - 1][i])
                .abs()
                .max((table[j][i] - table[j - 1][i - 1]).abs())
                .max(scale / h);
            if e <= best.1 {
                best = (table[j][i], e);
            }
        }
        if (table[i][i] - table[i - 1][i - 1]).abs() >= SAFE * best.1 {
            break;
        }
    }
    Ok(best)
}
