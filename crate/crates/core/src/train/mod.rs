//! Adam, losses and the seed-deterministic training loop.

mod adam;
mod disc;
mod losses;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use disc::Discriminator;
pub use losses::{loss_l1, loss_latent_regression, loss_lsgan};

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::layers::{Mode, ParamStore};
use crate::synth::{Dataset, StyleEncoder, TaskKind};
use crate::tensor::{Prng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub w_l1: f64,
    pub w_latent: f64,
    pub w_adv: f64,
    pub seed: u64,
    pub encoder_width: usize,
    pub disc_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 16,
            adam: AdamConfig::default(),
            w_l1: 1.0,
            w_latent: 0.0,
            w_adv: 0.0,
            seed: 0,
            encoder_width: 8,
            disc_width: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub l1: f64,
    pub latent: f64,
    pub adv: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<String>,
}

impl TrainHistory {
    /// Mean reconstruction loss over steps (step - window, step].
    pub fn trailing_l1(&self, step: usize, window: usize) -> Option<f64> {
        let lo = step.saturating_sub(window);
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.step > lo && r.step <= step)
            .map(|r| r.l1)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn final_l1(&self) -> Option<f64> {
        self.records.last().map(|r| r.l1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,l1,latent,adv\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{:.17e},{:.17e},{:.17e},{:.17e}", r.step, r.loss, r.l1, r.latent, r.adv);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Style encoder with its own parameters.
#[derive(Clone, Debug)]
pub struct EncoderModel {
    pub encoder: StyleEncoder,
    pub store: ParamStore,
}

impl EncoderModel {
    pub fn new(in_channels: usize, width: usize, code_dim: usize, std: f64, rng: &mut Prng) -> Self {
        let mut store = ParamStore::new();
        let encoder = StyleEncoder::new(&mut store, in_channels, width, code_dim, std, rng);
        Self { encoder, store }
    }

    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        self.encoder.encode(&self.store, images)
    }
}

/// Models trained alongside the generator.
#[derive(Clone, Debug, Default)]
pub struct Auxiliary {
    pub encoder: Option<EncoderModel>,
    pub disc: Option<Discriminator>,
}

impl Auxiliary {
    /// Encoder for the continuous task, critic when the adversarial weight is
    /// positive.
    pub fn for_task(kind: TaskKind, g: &Generator, cfg: &TrainConfig) -> Self {
        let mut rng = Prng::new(cfg.seed).split(7);
        let s = g.spec.latent_dim;
        let encoder = (kind == TaskKind::Continuous)
            .then(|| EncoderModel::new(g.spec.out_channels, cfg.encoder_width, s, g.spec.init_std.max(0.1), &mut rng));
        let disc = (cfg.w_adv > 0.0)
            .then(|| Discriminator::new(g.spec.out_channels, s, cfg.disc_width, g.spec.init_std, &mut rng));
        Self { encoder, disc }
    }
}

/// Endless shuffled pass over a fixed index set.
struct Sampler {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: Prng,
}

impl Sampler {
    fn new(pool: &[usize], rng: Prng) -> Self {
        Self {
            pool: pool.to_vec(),
            order: Vec::new(),
            pos: 0,
            rng,
        }
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order = self.pool.clone();
                    for i in (1..self.order.len()).rev() {
                        let j = self.rng.below(i + 1);
                        self.order.swap(i, j);
                    }
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn all_finite(ts: &[Tensor]) -> bool {
    ts.iter().all(Tensor::is_finite)
}

/// Train `g` on `data[train_idx]`. `on_step` sees the generator after every
/// update.
pub fn train(
    g: &mut Generator,
    aux: &mut Auxiliary,
    data: &Dataset,
    train_idx: &[usize],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &Generator) -> Result<()>,
) -> Result<TrainHistory> {
    if train_idx.is_empty() && cfg.steps > 0 {
        return Err(Error::InvalidSpec("no training samples".into()));
    }
    if cfg.batch < 2 && g.spec.uses_batch_stats() {
        return Err(Error::InvalidSpec("batch statistics need a batch of at least 2".into()));
    }
    if data.spec.code_dim() != g.spec.latent_dim {
        return Err(Error::Dimension {
            expected: g.spec.latent_dim,
            got: data.spec.code_dim(),
        });
    }
    let start = Instant::now();
    let root = Prng::new(cfg.seed);
    let mut sampler = Sampler::new(train_idx, root.split(1));
    let mut drop_rng = root.split(2);
    let mut code_rng = root.split(3);
    let mut g_state = AdamState::new(g.store.tensors());
    let mut e_state = aux.encoder.as_ref().map(|e| AdamState::new(e.store.tensors()));
    let mut d_state = aux.disc.as_ref().map(|d| AdamState::new(d.store.tensors()));
    let mut hist = TrainHistory::default();

    for step in 1..=cfg.steps {
        let b = data.batch(&sampler.next_batch(cfg.batch))?;
        let mut tape = Tape::new();
        let gb = g.store.bind(&mut tape, true);
        let eb = aux.encoder.as_ref().map(|e| e.store.bind(&mut tape, true));
        let x = tape.constant(b.x.clone());
        let y = tape.constant(b.y.clone());
        let codes = match (&aux.encoder, &eb) {
            (Some(e), Some(eb)) => e.encoder.forward(&mut tape, eb, y)?,
            _ => tape.constant(b.codes.clone()),
        };
        let fwd = g.forward_tape(&mut tape, &gb, x, codes, Mode::Train, Some(&mut drop_rng))?;
        let l1 = tape.mean_abs_diff(fwd.out, y)?;
        let mut terms = vec![(l1, cfg.w_l1)];

        let mut latent = None;
        if let (Some(e), Some(eb)) = (&aux.encoder, &eb) {
            if cfg.w_latent > 0.0 {
                let s = g.spec.latent_dim;
                let c_rand = Tensor::rand_uniform(&[cfg.batch, s], -1.0, 1.0, &mut code_rng);
                let cv = tape.constant(c_rand);
                let out2 = g.forward_tape(&mut tape, &gb, x, cv, Mode::Train, Some(&mut drop_rng))?;
                let c_pred = e.encoder.forward(&mut tape, eb, out2.out)?;
                let l = tape.mean_abs_diff(c_pred, cv)?;
                terms.push((l, cfg.w_latent));
                latent = Some(l);
            }
        }
        let mut adv = None;
        if let Some(d) = &aux.disc {
            let db = d.store.bind(&mut tape, false);
            let score = d.forward(&mut tape, &db, fwd.out, codes)?;
            let l = tape.mean_squared_to(score, 1.0);
            terms.push((l, cfg.w_adv));
            adv = Some(l);
        }
        let loss = tape.weighted_sum(&terms)?;
        let val = |v: Option<crate::autograd::Var>| v.map_or(0.0, |v| tape.value(v).data()[0]);
        let rec = StepRecord {
            step,
            loss: tape.value(loss).data()[0],
            l1: tape.value(l1).data()[0],
            latent: val(latent),
            adv: val(adv),
        };
        if !rec.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("loss {} (l1 {}, latent {}, adv {})", rec.loss, rec.l1, rec.latent, rec.adv),
            });
        }
        let mut grads = tape.backward(loss)?;
        let gg = g.store.gradients(&mut grads, &gb);
        if !all_finite(&gg) {
            return Err(Error::NonFiniteLoss {
                step,
                detail: "non-finite generator gradient".into(),
            });
        }
        let eg = match (&aux.encoder, &eb) {
            (Some(e), Some(eb)) => Some(e.store.gradients(&mut grads, eb)),
            _ => None,
        };
        let fake = tape.value(fwd.out).clone();
        let code_val = tape.value(codes).clone();
        drop(tape);

        adam_step(g.store.tensors_mut(), &gg, &mut g_state, &cfg.adam)?;
        g.apply_updates(&fwd.updates);
        if let (Some(e), Some(eg), Some(st)) = (&mut aux.encoder, eg, &mut e_state) {
            adam_step(e.store.tensors_mut(), &eg, st, &cfg.adam)?;
        }
        if let (Some(d), Some(st)) = (&mut aux.disc, &mut d_state) {
            let mut t = Tape::new();
            let db = d.store.bind(&mut t, true);
            let c = t.constant(code_val);
            let real = t.constant(b.y);
            let fake = t.constant(fake);
            let sr = d.forward(&mut t, &db, real, c)?;
            let sf = d.forward(&mut t, &db, fake, c)?;
            let lr = t.mean_squared_to(sr, 1.0);
            let lf = t.mean_squared_to(sf, 0.0);
            let dl = t.weighted_sum(&[(lr, 0.5), (lf, 0.5)])?;
            let mut dg = t.backward(dl)?;
            let dgrads = d.store.gradients(&mut dg, &db);
            adam_step(d.store.tensors_mut(), &dgrads, st, &cfg.adam)?;
        }
        if !all_finite(g.store.tensors()) {
            return Err(Error::NonFiniteLoss {
                step,
                detail: "non-finite generator weights after update".into(),
            });
        }
        hist.records.push(rec);
        on_step(step, g)?;
    }
    hist.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_generator, GeneratorSpec, Injection};
    use crate::layers::NormKind;
    use crate::synth::{gen_dataset, TaskSpec};

    fn setup(kind: TaskKind) -> (Generator, Dataset) {
        let task = TaskSpec {
            kind,
            extent: 8,
            samples: 16,
            style_dim: 3,
            ..Default::default()
        };
        let spec = GeneratorSpec {
            base_width: 4,
            extent: 8,
            latent_dim: task.code_dim(),
            injection: Injection::Cbn,
            base_norm: NormKind::In,
            up_norm: NormKind::In,
            res_blocks: 1,
            ..Default::default()
        };
        (build_generator(&spec, &mut Prng::new(3)).unwrap(), gen_dataset(&task).unwrap())
    }

    #[test]
    fn zero_steps_leave_weights() {
        let (mut g, d) = setup(TaskKind::Discrete);
        let before = g.store.clone();
        let cfg = TrainConfig {
            steps: 0,
            ..Default::default()
        };
        let h = train(&mut g, &mut Auxiliary::default(), &d, &[0, 1], &cfg, |_, _| Ok(())).unwrap();
        assert!(h.records.is_empty());
        assert_eq!(g.store, before);
    }

    #[test]
    fn deterministic_with_all_terms() {
        let run = || {
            let (mut g, d) = setup(TaskKind::Continuous);
            let cfg = TrainConfig {
                steps: 3,
                batch: 4,
                w_latent: 0.5,
                w_adv: 0.1,
                ..Default::default()
            };
            let mut aux = Auxiliary::for_task(TaskKind::Continuous, &g, &cfg);
            let idx: Vec<usize> = (0..16).collect();
            let h = train(&mut g, &mut aux, &d, &idx, &cfg, |_, _| Ok(())).unwrap();
            (h.records, g.store)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert!(a.iter().all(|r| r.latent > 0.0 && r.adv > 0.0));
    }

    #[test]
    fn nan_aborts_with_step() {
        let (mut g, d) = setup(TaskKind::Discrete);
        g.store.tensors_mut()[0].data_mut()[0] = f64::NAN;
        let cfg = TrainConfig {
            steps: 2,
            batch: 2,
            ..Default::default()
        };
        let err = train(&mut g, &mut Auxiliary::default(), &d, &[0, 1, 2], &cfg, |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { step: 1, .. }));
    }

    #[test]
    fn csv_layout() {
        let h = TrainHistory {
            records: vec![StepRecord {
                step: 1,
                loss: 0.5,
                l1: 0.5,
                latent: 0.0,
                adv: 0.0,
            }],
            ..Default::default()
        };
        let csv = h.to_csv();
        assert!(csv.starts_with("step,loss,l1,latent,adv\n1,"));
        assert_eq!(h.trailing_l1(100, 100), Some(0.5));
    }
}
