//! Central finite differences for checking analytic gradients.

use super::{Tape, Tensor, Var};

/// Central-difference gradient of scalar `f` at `x` with step `h`.
pub fn numeric_gradient<F>(x: &Tensor, h: f64, mut f: F) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.numel()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        *g = (up - down) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad).expect("shape of a valid tensor")
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)` over flattened data.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error length mismatch");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied())).max(1e-8);
    diff / scale
}

/// Scalar `sum(y * w)` with fixed, distinct weights `w_i = sin(0.37 (i + 1))`,
/// so every entry of `y` contributes to the checked gradient.
fn probe(tape: &mut Tape, y: Var) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = (0..n).map(|i| (0.37 * (i + 1) as f64).sin()).collect();
    let w = tape.constant(Tensor::new(shape, w).expect("probe shape"));
    let wy = tape.mul(y, w).expect("probe shape");
    tape.sum(wy)
}

/// Largest relative error, over all `inputs`, between the tape gradient of
/// a probed `build(inputs)` and central differences with step `h`. `build`
/// must be deterministic.
pub fn op_gradient_error<F>(inputs: &[Tensor], h: f64, build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let run = |inputs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let y = build(&mut tape, &vars);
        let s = probe(&mut tape, y);
        (tape, vars, s)
    };
    let (mut tape, vars, s) = run(inputs);
    tape.backward(s).expect("scalar probe");
    let mut worst: f64 = 0.0;
    for (i, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v).expect("param leaf has a gradient");
        let numeric = numeric_gradient(&inputs[i], h, |t| {
            let mut shifted = inputs.to_vec();
            shifted[i] = t.clone();
            let (tape, _, s) = run(&shifted);
            tape.value(s).item()
        });
        worst = worst.max(relative_error(analytic.data(), numeric.data()));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = numeric_gradient(&x, 1e-4, |t| t.data().iter().map(|v| v * v).sum());
        assert!(relative_error(g.data(), &[2.0, -4.0, 1.0]) < 1e-9);
    }

    #[test]
    fn probed_square_has_exact_gradient() {
        let x = Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 0.1]).unwrap();
        let err = op_gradient_error(&[x], 1e-5, |t, v| t.mul(v[0], v[0]).unwrap());
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        let e = relative_error(&[1.0, 0.0], &[1.1, 0.0]);
        assert!((e - 0.1 / 1.1).abs() < 1e-12);
    }
}
