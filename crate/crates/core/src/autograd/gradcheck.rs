use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
    /// Check at most this many coordinates per parameter, evenly strided.
    pub max_coords: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-6,
            max_coords: usize::MAX,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, flat coordinate) of the worst mismatch.
    pub worst: (usize, usize),
    pub checked: usize,
}

fn eval<F>(f: &F, params: &[Tensor]) -> Result<(Tape, Var, Vec<Var>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let lv = tape.value(loss);
    if lv.len() != 1 {
        return Err(Error::NonScalarLoss(lv.shape().to_vec()));
    }
    Ok((tape, loss, vars))
}

/// Compare tape gradients of a scalar loss against central differences
/// (f(θ+eps) − f(θ−eps)) / (2·eps), coordinate by coordinate.
pub fn grad_check<F>(params: &[Tensor], opts: &GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, loss, vars) = eval(&f, params)?;
    let grads = tape.backward(loss)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params[pi].shape()));
        let n = params[pi].len();
        let stride = n.div_ceil(opts.max_coords.min(n).max(1));
        for idx in (0..n).step_by(stride.max(1)) {
            let orig = work[pi].data()[idx];
            work[pi].data_mut()[idx] = orig + opts.eps;
            let (t, l, _) = eval(&f, &work)?;
            let plus = t.value(l).data()[0];
            work[pi].data_mut()[idx] = orig - opts.eps;
            let (t, l, _) = eval(&f, &work)?;
            let minus = t.value(l).data()[0];
            work[pi].data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.data()[idx];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
                report.worst = (pi, idx);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Activation, Center, Spread};
    use crate::tensor::{ConvGeometry, Padding, Prng};

    #[test]
    fn exact_linear_case() {
        let mut rng = Prng::new(0);
        let x = Tensor::randn(&[16], 1.0, &mut rng);
        let w = Tensor::randn(&[16], 1.0, &mut rng);
        let r = grad_check(&[w], &GradCheckOptions::default(), |t, v| {
            let xc = t.constant(x.clone());
            let p = t.mul(v[0], xc)?;
            Ok(t.sum(p))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn vector_loss_is_rejected() {
        let r = grad_check(&[Tensor::zeros(&[3])], &GradCheckOptions::default(), |_, v| {
            Ok(v[0])
        });
        assert!(matches!(r, Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn tanh_conv() {
        let mut rng = Prng::new(1);
        let x = Tensor::randn(&[2, 2, 5, 5], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 2, 3, 3], 0.3, &mut rng);
        let probe = Tensor::randn(&[2, 3, 5, 5], 1.0, &mut rng);
        for padding in [Padding::Zero, Padding::Reflection] {
            let r = grad_check(&[x.clone(), w.clone()], &GradCheckOptions::default(), |t, v| {
                let y = t.conv2d(v[0], v[1], ConvGeometry::new(1, 1, padding))?;
                let a = t.activation(y, Activation::Tanh);
                let pr = t.constant(probe.clone());
                let m = t.mul(a, pr)?;
                Ok(t.sum(m))
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "{padding:?}: {r:?}");
        }
    }

    #[test]
    fn every_normalization_combination() {
        let mut rng = Prng::new(2);
        let z = Tensor::randn(&[3, 2, 3, 4], 1.0, &mut rng);
        let probe = Tensor::randn(&[3, 2, 3, 4], 1.0, &mut rng);
        let centers = [Center::Instance, Center::Batch, Center::Fixed(vec![0.3, -0.2])];
        let spreads = [Spread::Instance, Spread::Batch, Spread::Fixed(vec![0.7, 1.3])];
        for c in &centers {
            for s in &spreads {
                let r = grad_check(&[z.clone()], &GradCheckOptions::default(), |t, v| {
                    let u = t.normalize(v[0], c.clone(), s.clone(), 1e-5)?;
                    let pr = t.constant(probe.clone());
                    let m = t.mul(u, pr)?;
                    Ok(t.sum(m))
                })
                .unwrap();
                assert!(r.max_rel_error < 1e-4, "{c:?} {s:?}: {r:?}");
            }
        }
    }
}
