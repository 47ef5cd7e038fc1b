//! Equation-level self checks run by `cbnlab check`.

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    check_criteria, codes_tensor, demo_in_elimination, demo_inter_batch_identity, demo_intra_batch_inconsistency,
    lci_conv, random_code_pairs, CriterionThresholds, LatentCode,
};
use crate::autograd::{grad_check, GradCheckOptions, Tape, Var};
use crate::error::Result;
use crate::generator::{build_generator, count_params, GeneratorSpec, Injection};
use crate::layers::{
    bias_net_forward, BiasConstraint, BiasNet, Bound, Mode, NormKind, NormLayer, NormOptions, ParamStore, DEFAULT_EPS,
};
use crate::synth::StyleEncoder;
use crate::tensor::{channel_stats, ConvGeometry, KernelBank, Padding, Prng, StatScope, Tensor};

const GRAD_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRecord {
    pub check_name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    /// Epsilon given to every normalization layer the checks build.
    pub eps: f64,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            seed: 2024,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Cmp {
    Below,
    Above,
    Equal,
}

struct Check {
    name: &'static str,
    threshold: f64,
    cmp: Cmp,
    run: fn(&CheckOptions) -> Result<f64>,
}

const fn below(name: &'static str, threshold: f64, run: fn(&CheckOptions) -> Result<f64>) -> Check {
    Check {
        name,
        threshold,
        cmp: Cmp::Below,
        run,
    }
}

const fn above(name: &'static str, threshold: f64, run: fn(&CheckOptions) -> Result<f64>) -> Check {
    Check {
        name,
        threshold,
        cmp: Cmp::Above,
        run,
    }
}

const fn equal(name: &'static str, threshold: f64, run: fn(&CheckOptions) -> Result<f64>) -> Check {
    Check {
        name,
        threshold,
        cmp: Cmp::Equal,
        run,
    }
}

const CHECKS: &[Check] = &[
    below("decomposition.zero_padding", 1e-10, |o| decomposition(o, Padding::Zero)),
    below("decomposition.reflection", 1e-10, |o| decomposition(o, Padding::Reflection)),
    below("decomposition.reflection_constant_offset", 1e-10, reflection_offset),
    below("intra_batch.formula", 1e-9, |o| Ok(demo_intra_batch_inconsistency(&mut rng(o, 3), 100)?.formula_error)),
    above("intra_batch.inconsistency", 1e-2, |o| Ok(demo_intra_batch_inconsistency(&mut rng(o, 3), 100)?.worst_spread)),
    below("inter_batch.identity", 1e-6, |o| Ok(demo_inter_batch_identity(&mut rng(o, 4), 100)?.max_error)),
    above("inter_batch.shift", 1e-2, |o| Ok(demo_inter_batch_identity(&mut rng(o, 4), 100)?.max_shift)),
    below("in_elimination.reflection", 1e-5, |o| in_elimination(o, Padding::Reflection)),
    above("in_elimination.zero_padding_leak", 1e-5, |o| in_elimination(o, Padding::Zero)),
    below("normalization.bn_unit_std", 1e-4, |o| unit_std(o, NormKind::Bn)),
    below("normalization.in_unit_std", 1e-4, |o| unit_std(o, NormKind::In)),
    below("cbn.mean_cbin", 1e-9, |o| cbn_mean(o, NormKind::Cbin)),
    below("cbn.mean_cbbn", 1e-9, |o| cbn_mean(o, NormKind::Cbbn)),
    below("cbn.consistency_gap", 1e-9, |o| Ok(cbn_criteria(o)?.0)),
    above("cbn.diversity_gap", 1e-2, |o| Ok(cbn_criteria(o)?.1)),
    below("grad.conv2d", GRAD_TOL, grad_conv),
    below("grad.transposed_conv2d", GRAD_TOL, grad_transposed),
    below("grad.bn", GRAD_TOL, |o| grad_norm(o, NormKind::Bn)),
    below("grad.in", GRAD_TOL, |o| grad_norm(o, NormKind::In)),
    below("grad.cbbn", GRAD_TOL, |o| grad_norm(o, NormKind::Cbbn)),
    below("grad.cbin", GRAD_TOL, |o| grad_norm(o, NormKind::Cbin)),
    below("grad.bias_net", GRAD_TOL, grad_bias_net),
    below("grad.encoder", GRAD_TOL, grad_encoder),
    below("grad.loss_l1", GRAD_TOL, |o| grad_loss(o, Loss::L1)),
    below("grad.loss_latent_regression", GRAD_TOL, |o| grad_loss(o, Loss::Latent)),
    below("grad.loss_lsgan", GRAD_TOL, |o| grad_loss(o, Loss::Lsgan)),
    equal("params.cbn_added_s2", 7040.0, |_| Ok(cbn_added(2))),
    equal("params.cbn_added_s8", 28160.0, |_| Ok(cbn_added(8))),
    equal("params.cbn_added_s128", 450560.0, |_| Ok(cbn_added(128))),
    equal("params.cbn_added_s256", 901120.0, |_| Ok(cbn_added(256))),
    below("params.base_conv_weights", 0.02, |_| {
        let base = count_params(&GeneratorSpec::default()).base_conv_weights as f64;
        let target = 8.0 * 1024.0 * 1024.0;
        Ok((base - target).abs() / target)
    }),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.name).collect()
}

/// Run every check whose name passes `select`, in declaration order. A check
/// that errors is reported as a failure with a NaN statistic.
pub fn run_checks(select: impl Fn(&str) -> bool + Sync, opts: &CheckOptions) -> Vec<CheckRecord> {
    CHECKS
        .par_iter()
        .filter(|c| select(c.name))
        .map(|c| {
            let (statistic, error) = match (c.run)(opts) {
                Ok(v) => (v, None),
                Err(e) => (f64::NAN, Some(e.to_string())),
            };
            let pass = match c.cmp {
                Cmp::Below => statistic < c.threshold,
                Cmp::Above => statistic > c.threshold,
                Cmp::Equal => statistic == c.threshold,
            };
            CheckRecord {
                check_name: c.name.to_string(),
                statistic,
                threshold: c.threshold,
                pass,
                error,
            }
        })
        .collect()
}

fn rng(o: &CheckOptions, stream: u64) -> Prng {
    Prng::new(o.seed).split(stream)
}

struct DecompDraw {
    x: Tensor,
    c: LatentCode,
    w: KernelBank,
    v: KernelBank,
    pad: usize,
}

fn decomp_draw(r: &mut Prng) -> DecompDraw {
    let b = 1 + r.below(2);
    let q = 1 + r.below(3);
    let s = 1 + r.below(4);
    let out = 1 + r.below(4);
    let k = [1, 3, 5][r.below(3)];
    let m = k + 1 + r.below(6);
    let n = k + 1 + r.below(6);
    DecompDraw {
        x: Tensor::randn(&[b, q, m, n], 1.0, r),
        c: LatentCode::continuous((0..s).map(|_| r.uniform_range(-1.0, 1.0)).collect()),
        w: KernelBank::randn(out, q, k, k, 0.5, r),
        v: KernelBank::randn(out, s, k, k, 0.5, r),
        pad: k / 2,
    }
}

fn decomposition(o: &CheckOptions, padding: Padding) -> Result<f64> {
    let base = rng(o, 1);
    (0..1000u64).try_fold(0.0f64, |acc, t| {
        let d = decomp_draw(&mut base.split(t));
        Ok(acc.max(lci_conv(&d.x, &d.c, &d.w, &d.v, padding, d.pad)?.residual))
    })
}

fn reflection_offset(o: &CheckOptions) -> Result<f64> {
    let base = rng(o, 2);
    (0..200u64).try_fold(0.0f64, |acc, t| {
        let d = decomp_draw(&mut base.split(t));
        let rep = lci_conv(&d.x, &d.c, &d.w, &d.v, Padding::Reflection, d.pad)?;
        Ok(rep.o_spread_full.iter().fold(acc, |a, &v| a.max(v)))
    })
}

fn small_generator(o: &CheckOptions, injection: Injection, padding: Padding, seed: u64) -> Result<crate::generator::Generator> {
    let spec = GeneratorSpec {
        base_width: 4,
        extent: 16,
        res_blocks: 2,
        injection,
        padding,
        init_std: 0.2,
        eps: o.eps,
        ..Default::default()
    };
    build_generator(&spec, &mut Prng::new(seed))
}

fn in_elimination(o: &CheckOptions, padding: Padding) -> Result<f64> {
    let g = small_generator(o, Injection::Lci, padding, o.seed)?;
    let mut r = rng(o, 5);
    let x = Tensor::randn(&[2, 3, 16, 16], 1.0, &mut r);
    let pairs = random_code_pairs(g.spec.latent_dim, 10, false, &mut r)?;
    demo_in_elimination(&g, &x, &pairs)
}

fn norm_layer(o: &CheckOptions, kind: NormKind, channels: usize, latent: usize, r: &mut Prng) -> Result<(NormLayer, ParamStore)> {
    let mut store = ParamStore::new();
    let opts = NormOptions {
        eps: o.eps,
        bias_init_std: 0.5,
        ..Default::default()
    };
    let s = kind.is_central_biasing().then_some(latent);
    let layer = NormLayer::new(kind, channels, s, &mut store, "check", opts, r)?;
    Ok((layer, store))
}

fn run_layer(layer: &NormLayer, store: &ParamStore, z: &Tensor, codes: Option<&Tensor>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let cv = codes.map(|c| tape.constant(c.clone()));
    let out = layer.forward(&mut tape, &bound, zv, cv, Mode::Train)?.out;
    Ok(tape.value(out).clone())
}

/// Worst deviation of the normalized per-channel std from 1 on inputs with
/// std between 1 and 3.
fn unit_std(o: &CheckOptions, kind: NormKind) -> Result<f64> {
    let mut r = rng(o, 6);
    let (layer, store) = norm_layer(o, kind, 3, 0, &mut r)?;
    let z = Tensor::randn(&[4, 3, 6, 6], 1.0, &mut r).map(|v| 2.0 * v + 0.7);
    let out = run_layer(&layer, &store, &z, None)?;
    let scope = if kind == NormKind::Bn { StatScope::Batch } else { StatScope::Instance };
    let st = channel_stats(&out, scope)?;
    Ok(st.stds.data().iter().fold(0.0, |a: f64, s| a.max((s - 1.0).abs())))
}

/// max |spatial mean of each output channel - b(c)|.
fn cbn_mean(o: &CheckOptions, kind: NormKind) -> Result<f64> {
    let mut r = rng(o, 7);
    let (layer, store) = norm_layer(o, kind, 5, 3, &mut r)?;
    let z = Tensor::randn(&[4, 5, 7, 7], 1.5, &mut r);
    let codes: Vec<LatentCode> = (0..4)
        .map(|_| LatentCode::continuous((0..3).map(|_| r.uniform_range(-1.0, 1.0)).collect()))
        .collect();
    let ct = codes_tensor(&codes.iter().collect::<Vec<_>>())?;
    let means = run_layer(&layer, &store, &z, Some(&ct))?.spatial_means()?;
    let net = layer.bias_net.as_ref().expect("central biasing layer");
    let mut worst = 0.0f64;
    for (i, c) in codes.iter().enumerate() {
        let b = bias_net_forward(net, &store, c.values())?;
        for (ch, bv) in b.iter().enumerate() {
            worst = worst.max((means.get(&[i, ch]) - bv).abs());
        }
    }
    Ok(worst)
}

fn cbn_criteria(o: &CheckOptions) -> Result<(f64, f64)> {
    let g = small_generator(o, Injection::Cbn, Padding::Reflection, o.seed + 1)?;
    let mut r = rng(o, 8);
    let x = Tensor::randn(&[3, 3, 16, 16], 1.0, &mut r);
    let codes: Vec<LatentCode> = (0..4).map(|k| LatentCode::one_hot(k, 4)).collect::<Result<_>>()?;
    let rep = check_criteria(&g, &x, &codes, None, CriterionThresholds::default())?;
    Ok((rep.consistency_gap, rep.diversity_gap))
}

fn probe_loss(tape: &mut Tape, out: Var, probe: &Tensor) -> Result<Var> {
    let p = tape.constant(probe.clone());
    let m = tape.mul(out, p)?;
    Ok(tape.sum(m))
}

fn grad_conv(o: &CheckOptions) -> Result<f64> {
    let mut r = rng(o, 9);
    let x = Tensor::randn(&[2, 2, 6, 6], 1.0, &mut r);
    let mut worst = 0.0f64;
    for (stride, k, padding) in [(1, 3, Padding::Zero), (1, 3, Padding::Reflection), (2, 4, Padding::Zero), (2, 4, Padding::Reflection)] {
        let w = Tensor::randn(&[3, 2, k, k], 0.4, &mut r);
        let oe = 6 / stride;
        let probe = Tensor::randn(&[2, 3, oe, oe], 1.0, &mut r);
        let rep = grad_check(&[x.clone(), w], &GradCheckOptions::default(), |t, v| {
            let y = t.conv2d(v[0], v[1], ConvGeometry::new(stride, 1, padding))?;
            probe_loss(t, y, &probe)
        })?;
        worst = worst.max(rep.max_rel_error);
    }
    Ok(worst)
}

fn grad_transposed(o: &CheckOptions) -> Result<f64> {
    let mut r = rng(o, 10);
    let x = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut r);
    let w = Tensor::randn(&[3, 2, 4, 4], 0.4, &mut r);
    let probe = Tensor::randn(&[2, 2, 8, 8], 1.0, &mut r);
    let rep = grad_check(&[x, w], &GradCheckOptions::default(), |t, v| {
        let y = t.transposed_conv2d(v[0], v[1], 2, 1)?;
        probe_loss(t, y, &probe)
    })?;
    Ok(rep.max_rel_error)
}

/// Gradients through a full layer with respect to its input, its learnable
/// parameters and, for central-biasing kinds, the codes.
fn grad_norm(o: &CheckOptions, kind: NormKind) -> Result<f64> {
    let mut r = rng(o, 11);
    let (layer, store) = norm_layer(o, kind, 3, 2, &mut r)?;
    let z = Tensor::randn(&[3, 3, 4, 4], 1.0, &mut r);
    let codes = Tensor::rand_uniform(&[3, 2], -1.0, 1.0, &mut r);
    let probe = Tensor::randn(&[3, 3, 4, 4], 1.0, &mut r);
    let mut params = store.tensors().to_vec();
    let n = params.len();
    params.push(z);
    params.push(codes);
    let cb = kind.is_central_biasing();
    let rep = grad_check(&params, &GradCheckOptions::default(), |t, v| {
        let bound = Bound::from_vars(v[..n].to_vec());
        let out = layer.forward(t, &bound, v[n], cb.then_some(v[n + 1]), Mode::Train)?.out;
        probe_loss(t, out, &probe)
    })?;
    Ok(rep.max_rel_error)
}

fn grad_bias_net(o: &CheckOptions) -> Result<f64> {
    let mut r = rng(o, 12);
    let mut worst = 0.0f64;
    for constraint in [BiasConstraint::Tanh, BiasConstraint::Sigmoid, BiasConstraint::None] {
        let mut store = ParamStore::new();
        let net = BiasNet::new(&mut store, "b", 3, 4, 0.7, constraint, &mut r);
        let codes = Tensor::rand_uniform(&[2, 3], -1.0, 1.0, &mut r);
        let probe = Tensor::randn(&[2, 4], 1.0, &mut r);
        let params = vec![store.tensors()[0].clone(), codes];
        let rep = grad_check(&params, &GradCheckOptions::default(), |t, v| {
            let bound = Bound::from_vars(vec![v[0]]);
            let b = net.forward(t, &bound, v[1])?;
            probe_loss(t, b, &probe)
        })?;
        worst = worst.max(rep.max_rel_error);
    }
    Ok(worst)
}

fn grad_encoder(o: &CheckOptions) -> Result<f64> {
    let mut r = rng(o, 13);
    let mut store = ParamStore::new();
    let enc = StyleEncoder::new(&mut store, 3, 2, 3, 0.5, &mut r);
    let x = Tensor::randn(&[2, 3, 8, 8], 1.0, &mut r);
    let probe = Tensor::randn(&[2, 3], 1.0, &mut r);
    let rep = grad_check(store.tensors(), &GradCheckOptions::default(), |t, v| {
        let bound = Bound::from_vars(v.to_vec());
        let xv = t.constant(x.clone());
        let c = enc.forward(t, &bound, xv)?;
        probe_loss(t, c, &probe)
    })?;
    Ok(rep.max_rel_error)
}

#[derive(Clone, Copy)]
enum Loss {
    L1,
    Latent,
    Lsgan,
}

fn grad_loss(o: &CheckOptions, loss: Loss) -> Result<f64> {
    let mut r = rng(o, 14);
    let shape: &[usize] = match loss {
        Loss::L1 => &[2, 3, 4, 4],
        Loss::Latent => &[4, 5],
        Loss::Lsgan => &[6, 1],
    };
    let a = Tensor::randn(shape, 1.0, &mut r);
    let b = Tensor::randn(shape, 1.0, &mut r);
    let rep = grad_check(&[a, b], &GradCheckOptions::default(), |t, v| match loss {
        Loss::L1 | Loss::Latent => t.mean_abs_diff(v[0], v[1]),
        Loss::Lsgan => {
            let real = t.mean_squared_to(v[0], 1.0);
            let fake = t.mean_squared_to(v[1], 0.0);
            t.weighted_sum(&[(real, 0.5), (fake, 0.5)])
        }
    })?;
    Ok(rep.max_rel_error)
}

/// Weights the central-biasing generator adds for an S-dimensional code.
pub fn cbn_added(s: usize) -> f64 {
    count_params(&GeneratorSpec {
        latent_dim: s,
        ..Default::default()
    })
    .injection_added as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        let recs = run_checks(|_| true, &CheckOptions::default());
        assert_eq!(recs.len(), CHECKS.len());
        let failed: Vec<_> = recs.iter().filter(|r| !r.pass).collect();
        assert!(failed.is_empty(), "{failed:#?}");
    }

    #[test]
    fn misconfigured_epsilon_is_caught() {
        let opts = CheckOptions {
            eps: 1.0,
            ..Default::default()
        };
        let recs = run_checks(|n| n.starts_with("normalization"), &opts);
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| !r.pass));
    }

    #[test]
    fn names_are_unique() {
        let mut n = check_names();
        n.sort();
        n.dedup();
        assert_eq!(n.len(), CHECKS.len());
    }
}
