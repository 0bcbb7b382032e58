//! Optimization of the negative ELBO: Adam, the training loop, checkpoints
//! and evaluation.

mod checkpoint;

pub use checkpoint::{Checkpoint, NamedArray, CKPT_F32, CKPT_F64, CKPT_MAGIC};

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::latents::AnnealSchedule;
use crate::metrics::{self, ContingencyTable, LabeledPoint, MetricsReport, MATCH_RADIUS};
use crate::model::{ElboTerms, EpisodeNoise, Mode, Model, ModelConfig, ParamStore};
use crate::noise::{NoiseStream, Role};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

pub const LOG_HEADER: &str = "step,nll,kl_where,kl_cat,kl_attr,kl_pres,tau";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub total_steps: u64,
    /// log interval in steps
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub anneal: AnnealSchedule,
    pub grad_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            total_steps: 30_000,
            eval_every: 100,
            checkpoint_every: 1000,
            seed: 1,
            anneal: AnnealSchedule::default(),
            grad_clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam_eps must be positive"));
        }
        if self.eval_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::invalid("eval_every and checkpoint_every must be positive"));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::invalid("grad_clip_norm must be positive"));
            }
        }
        self.anneal.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
        }
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "tau0" => self.anneal.tau0 = parse(key, value)?,
            "tau_min" => self.anneal.tau_min = parse(key, value)?,
            "anneal_rate" => self.anneal.rate = parse(key, value)?,
            "anneal_every" => self.anneal.anneal_every = parse(key, value)?,
            "grad_clip_norm" => {
                self.grad_clip_norm = match value.trim() {
                    "none" | "off" => None,
                    v => Some(parse(key, v)?),
                }
            }
            other => return Err(Error::invalid(format!("unknown training key {other:?}"))),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("beta1", format!("{:?}", self.beta1)),
            ("beta2", format!("{:?}", self.beta2)),
            ("adam_eps", format!("{:?}", self.adam_eps)),
            ("total_steps", self.total_steps.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("seed", self.seed.to_string()),
            ("tau0", format!("{:?}", self.anneal.tau0)),
            ("tau_min", format!("{:?}", self.anneal.tau_min)),
            ("anneal_rate", format!("{:?}", self.anneal.rate)),
            ("anneal_every", self.anneal.anneal_every.to_string()),
            (
                "grad_clip_norm",
                self.grad_clip_norm.map_or("none".to_string(), |c| format!("{c:?}")),
            ),
        ]
    }

    pub fn is_key(key: &str) -> bool {
        TrainConfig::default().entries().iter().any(|(k, _)| *k == key)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got {line:?}")))?;
            c.set(k.trim(), v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Adam first and second moments with the number of updates applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub updates: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            m: zeros(),
            v: zeros(),
            updates: 0,
        }
    }

    /// One bias-corrected Adam update, after optional global-norm clipping.
    /// A non-finite gradient aborts the step before anything changes.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], config: &TrainConfig) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        let mut norm2 = 0.0f64;
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.tensors()[i].shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: params.tensors()[i].shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if let Some(c) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient of {}", params.names()[i]),
                    coordinate: c,
                });
            }
            norm2 += g.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
        }
        let clip = match config.grad_clip_norm {
            Some(c) if norm2.sqrt() > c => T::lit(c / norm2.sqrt()),
            _ => T::one(),
        };
        self.updates += 1;
        let t = self.updates as i32;
        let (b1, b2) = (T::lit(config.beta1), T::lit(config.beta2));
        let (one, eps) = (T::one(), T::lit(config.adam_eps));
        let c1 = one - T::lit(config.beta1.powi(t));
        let c2 = one - T::lit(config.beta2.powi(t));
        let lr = T::lit(config.learning_rate);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let mut m = self.m[i].to_vec();
            let mut v = self.v[i].to_vec();
            let mut w = p.to_vec();
            for j in 0..w.len() {
                let gj = g[j] * clip;
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                w[j] -= lr * mh / (vh.sqrt() + eps);
            }
            let shape = p.shape().to_vec();
            *p = Tensor::from_vec(&shape, w)?;
            self.m[i] = Tensor::from_vec(&shape, m)?;
            self.v[i] = Tensor::from_vec(&shape, v)?;
        }
        Ok(())
    }
}

/// Loss terms of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub terms: ElboTerms<f64>,
    pub tau: f64,
}

impl StepLog {
    pub fn csv_row(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{},{},{},{},{}",
            self.step, t.nll, t.kl_where, t.kl_cat, t.kl_attr, t.kl_pres, self.tau
        )
    }
}

/// Model, optimizer state and step counter.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub config: TrainConfig,
    pub adam: Adam<T>,
    /// number of completed steps
    pub step: u64,
}

/// Dataset position of the `i`-th sample drawn overall: every epoch visits a
/// fresh permutation seeded by `(seed, epoch)`.
pub fn sample_order(seed: u64, len: usize, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut s = NoiseStream::new(seed, epoch, 0, Role::Shuffle);
    order.shuffle(s.rng());
    order
}

fn check_dims(model: &ModelConfig, data: &Dataset) -> Result<()> {
    let h = &data.header;
    if h.height as usize != model.canvas_h || h.width as usize != model.canvas_w {
        return Err(Error::ConfigMismatch(format!(
            "dataset is {}×{}, model canvas is {}×{}",
            h.height, h.width, model.canvas_h, model.canvas_w
        )));
    }
    if h.num_categories as usize > model.num_categories {
        return Err(Error::ConfigMismatch(format!(
            "dataset has {} categories, model {}",
            h.num_categories, model.num_categories
        )));
    }
    Ok(())
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(model.params());
        Ok(Trainer {
            model,
            config,
            adam,
            step: 0,
        })
    }

    pub fn tau(&self) -> f64 {
        self.config.anneal.tau(self.step)
    }

    /// Indices of the batch used at step `step`.
    pub fn batch_indices(&self, len: usize, step: u64) -> Vec<usize> {
        let b = self.config.batch_size as u64;
        let len64 = len as u64;
        let mut cache: Option<(u64, Vec<usize>)> = None;
        (0..b)
            .map(|i| {
                let g = step * b + i;
                let epoch = g / len64;
                if cache.as_ref().map(|c| c.0) != Some(epoch) {
                    cache = Some((epoch, sample_order(self.config.seed, len, epoch)));
                }
                cache.as_ref().expect("filled above").1[(g % len64) as usize]
            })
            .collect()
    }

    /// Forward, backward and update on one batch of `[B, H, W]` images.
    pub fn step_on(&mut self, x: &Tensor<T>) -> Result<StepLog> {
        let tau = self.tau();
        let b = x.shape()[0];
        let noise = EpisodeNoise::sample(self.model.config(), b, self.config.seed, self.step);
        let tape = Tape::new();
        let params = self.model.bind(&tape, true);
        let xv = tape.constant(x.clone());
        let trace = self.model.run_episode(&params, xv, &noise, T::lit(tau), Mode::Train, None)?;
        let terms = self.model.elbo(xv, &trace)?;
        let values = terms.values();
        if !values.total.is_finite() {
            return Err(Error::NonFinite {
                what: format!("loss at step {}", self.step),
                coordinate: 0,
            });
        }
        let grads = tape.backward(terms.total)?;
        let grads: Vec<Tensor<T>> = params
            .vars()
            .iter()
            .map(|v| grads.get(*v).cloned().expect("every parameter is a trainable leaf"))
            .collect();
        self.adam.step(self.model.params_mut(), &grads, &self.config)?;
        let log = StepLog {
            step: self.step,
            terms: ElboTerms {
                nll: values.nll.as_f64(),
                kl_where: values.kl_where.as_f64(),
                kl_cat: values.kl_cat.as_f64(),
                kl_attr: values.kl_attr.as_f64(),
                kl_pres: values.kl_pres.as_f64(),
                total: values.total.as_f64(),
            },
            tau,
        };
        self.step += 1;
        Ok(log)
    }

    /// One step on the next shuffled batch of `data`.
    pub fn train_step(&mut self, data: &Dataset) -> Result<StepLog> {
        if data.is_empty() {
            return Err(Error::invalid("training on an empty dataset"));
        }
        let idx = self.batch_indices(data.len(), self.step);
        let x = data.batch(&idx)?;
        self.step_on(&x)
    }

    /// Trains until `config.total_steps`, appending CSV rows to `log` every
    /// `eval_every` steps and saving to `checkpoint` every
    /// `checkpoint_every` steps and at the end. `on_log` sees each logged row.
    pub fn run(
        &mut self,
        data: &Dataset,
        mut log: Option<&mut dyn Write>,
        checkpoint: Option<&Path>,
        mut on_log: impl FnMut(&StepLog),
    ) -> Result<()> {
        check_dims(self.model.config(), data)?;
        while self.step < self.config.total_steps {
            let record = self.train_step(data)?;
            if record.step % self.config.eval_every == 0 {
                if let Some(w) = log.as_mut() {
                    writeln!(w, "{}", record.csv_row())?;
                    w.flush()?;
                }
                on_log(&record);
            }
            if let Some(path) = checkpoint {
                if self.step % self.config.checkpoint_every == 0 || self.step == self.config.total_steps {
                    self.save(path)?;
                }
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let p = self.model.params();
        let mut arrays: Vec<NamedArray> = p
            .names()
            .iter()
            .zip(p.tensors())
            .map(|(n, t)| NamedArray::from_tensor(n.clone(), t))
            .collect();
        for (i, n) in p.names().iter().enumerate() {
            arrays.push(NamedArray::from_tensor(format!("{n}.m"), &self.adam.m[i]));
            arrays.push(NamedArray::from_tensor(format!("{n}.v"), &self.adam.v[i]));
        }
        arrays.push(NamedArray::from_u64("train.step", self.step));
        arrays.push(NamedArray::from_u64("train.updates", self.adam.updates));
        arrays.push(NamedArray {
            name: "train.tau".into(),
            shape: vec![1],
            data: vec![self.tau()],
        });
        arrays.push(NamedArray::from_text("model.config", &self.model.config().to_text()));
        arrays.push(NamedArray::from_text("train.config", &self.config.to_text()));
        Checkpoint {
            version: if T::BYTES == 8 { CKPT_F64 } else { CKPT_F32 },
            arrays,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let model_cfg = ModelConfig::from_text(&c.get("model.config")?.to_text()?)?;
        let config = TrainConfig::from_text(&c.get("train.config")?.to_text()?)?;
        let mut model = Model::<T>::new(model_cfg, 0)?;
        let names = model.params().names().to_vec();
        let load = |name: &str| -> Result<Tensor<T>> { c.get(name)?.to_tensor() };
        let params = names.iter().map(|n| load(n)).collect::<Result<Vec<_>>>()?;
        model.params_mut().assign(&names, params)?;
        let m = names.iter().map(|n| load(&format!("{n}.m"))).collect::<Result<Vec<_>>>()?;
        let v = names.iter().map(|n| load(&format!("{n}.v"))).collect::<Result<Vec<_>>>()?;
        for (i, n) in names.iter().enumerate() {
            let want = model.params().tensors()[i].shape();
            if m[i].shape() != want || v[i].shape() != want {
                return Err(Error::ConfigMismatch(format!("moments of {n} have the wrong shape")));
            }
        }
        Ok(Trainer {
            model,
            config,
            adam: Adam {
                m,
                v,
                updates: c.get("train.updates")?.to_u64()?,
            },
            step: c.get("train.step")?.to_u64()?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Trainer::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// Evaluates `model` on `data` with hard decisions (deterministic).
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset, batch_size: usize) -> Result<MetricsReport> {
    let cfg = model.config();
    check_dims(cfg, data)?;
    if data.is_empty() {
        return Err(Error::invalid("evaluation on an empty dataset"));
    }
    let k = cfg.num_categories.max(data.header.num_categories as usize);
    let mut table = ContingencyTable::new(k);
    let (mut predicted, mut truth) = (Vec::new(), Vec::new());
    let (mut sq, mut pixels) = (0.0f64, 0usize);
    let mut true_objects = 0u64;
    for start in (0..data.len()).step_by(batch_size.max(1)) {
        let idx: Vec<usize> = (start..(start + batch_size.max(1)).min(data.len())).collect();
        let x = data.batch::<T>(&idx)?;
        let tape = Tape::new();
        let params = model.bind(&tape, false);
        let xv = tape.constant(x.clone());
        let noise = EpisodeNoise::zeros(cfg, idx.len());
        let trace = model.run_episode(&params, xv, &noise, T::one(), Mode::Eval, None)?;
        let y = trace.reconstruction().value().map(|v| v.max(T::zero()).min(T::one()));
        sq += metrics::mse(&x, &y)?.as_f64() * x.numel() as f64;
        pixels += x.numel();
        let detections = trace.detections(cfg);
        for (b, &i) in idx.iter().enumerate() {
            let rec = &data.records[i];
            predicted.push(detections[b].len());
            truth.push(rec.objects.len());
            true_objects += rec.objects.len() as u64;
            let pred: Vec<LabeledPoint> = detections[b]
                .iter()
                .map(|d| LabeledPoint {
                    category: d.category,
                    x: d.center_x.as_f64(),
                    y: d.center_y.as_f64(),
                })
                .collect();
            let gt: Vec<LabeledPoint> = rec
                .objects
                .iter()
                .map(|o| LabeledPoint {
                    category: o.category as usize,
                    x: o.center_x as f64,
                    y: o.center_y as f64,
                })
                .collect();
            for (p, t) in metrics::match_objects(&pred, &gt, MATCH_RADIUS) {
                table.add(pred[p].category, gt[t].category)?;
            }
        }
    }
    let (r_corr, assignment) = metrics::correspondence_rate(&table, true_objects)?;
    Ok(MetricsReport {
        images: data.len(),
        mse: sq / pixels as f64,
        count_accuracy: metrics::count_accuracy(&predicted, &truth)?,
        r_corr,
        true_objects,
        matched: table.total(),
        mapping: assignment.mapping,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trip() {
        let mut c = TrainConfig::default();
        c.grad_clip_norm = None;
        c.seed = 99;
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::default();
        store.push("w".into(), Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
        let mut adam = Adam::new(&store);
        let cfg = TrainConfig {
            grad_clip_norm: None,
            ..TrainConfig::default()
        };
        let g = Tensor::from_f64(&[3], &[0.5, -2.0, 1e-3]).unwrap();
        adam.step(&mut store, &[g], &cfg).unwrap();
        let w = store.tensors()[0].data();
        for (i, (&after, sign)) in w.iter().zip([1.0, -1.0, 1.0]).enumerate() {
            let want = [1.0, 2.0, 3.0][i] - 1e-4 * sign;
            assert!(((after - want) / 1e-4).abs() < 1e-4, "{after} vs {want}");
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut store = ParamStore::<f64>::default();
        store.push("w".into(), Tensor::from_f64(&[2], &[1.0, -1.0]).unwrap());
        let mut adam = Adam::new(&store);
        adam.m[0] = Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap();
        let before = store.clone();
        adam.step(&mut store, &[Tensor::zeros(&[2])], &TrainConfig::default()).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = ParamStore::<f64>::default();
        store.push("layer.w".into(), Tensor::zeros(&[2]));
        let mut adam = Adam::new(&store);
        let err = adam
            .step(&mut store, &[Tensor::from_f64(&[2], &[0.0, f64::NAN]).unwrap()], &TrainConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("layer.w"), "{err}");
        assert_eq!(adam.updates, 0);
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let model = Model::<f64>::new(
            ModelConfig {
                canvas_h: 8,
                canvas_w: 8,
                glimpse_h: 4,
                glimpse_w: 4,
                rnn_hidden: 4,
                enc_hidden: 4,
                dec_hidden: 4,
                ..ModelConfig::default()
            },
            0,
        )
        .unwrap();
        let t = Trainer::new(
            model,
            TrainConfig {
                batch_size: 4,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let mut seen: Vec<usize> = (0..3).flat_map(|s| t.batch_indices(12, s)).collect();
        seen.sort();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }
}
