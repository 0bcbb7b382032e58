//! The recurrent scene model: inference over difference images, the
//! template/attribute decoder, additive canvas compositing and the ELBO.

mod config;
pub mod layers;

pub use config::{Combiner, ModelConfig, CONV_KERNEL};
pub use layers::{Bound, Init, Linear, Lstm, LstmState, Mlp, ParamStore};

use crate::attention::{AffinePose, PoseVars};
use crate::error::{Error, Result};
use crate::latents::{
    kl_gaussian_standard, kl_pres_step, kl_relaxed_categorical_mc, sample_gaussian, sample_gumbel_sigmoid,
    sample_gumbel_softmax, BinarySample, GaussianParams, RelaxedBernoulliParams, RelaxedCategoricalParams,
    SimplexSample,
};
use crate::noise::{NoiseStream, Role};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use layers::Builder;

/// Training samples relaxed latents; evaluation takes hard decisions
/// (thresholded presence, argmax category, posterior means).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Injected noise for one inference step of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise<T> {
    /// `[B, pose_dims]` standard normal
    pub where_eps: Tensor<T>,
    /// `[B, attr_dim]` standard normal, absent when `attr_dim = 0`
    pub attr_eps: Option<Tensor<T>>,
    /// `[B, k]` Gumbel
    pub cat_gumbel: Tensor<T>,
    /// `[B, 1]` logistic
    pub pres_logistic: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeNoise<T> {
    pub steps: Vec<StepNoise<T>>,
}

impl<T: Scalar> EpisodeNoise<T> {
    /// All-zero noise: every sampler returns its location parameter.
    pub fn zeros(config: &ModelConfig, batch: usize) -> Self {
        let step = StepNoise {
            where_eps: Tensor::zeros(&[batch, config.pose_dims()]),
            attr_eps: (config.attr_dim > 0).then(|| Tensor::zeros(&[batch, config.attr_dim])),
            cat_gumbel: Tensor::zeros(&[batch, config.num_categories]),
            pres_logistic: Tensor::zeros(&[batch, 1]),
        };
        EpisodeNoise {
            steps: vec![step; config.max_steps],
        }
    }

    /// Draws the noise of training step `step`; batch item `b` uses the
    /// streams keyed by `(step, b, role)`.
    pub fn sample(config: &ModelConfig, batch: usize, seed: u64, step: u64) -> Self {
        let n = config.max_steps;
        let (p, a, k) = (config.pose_dims(), config.attr_dim, config.num_categories);
        // per item, per role: all inference steps drawn in sequence
        let draw = |role: Role, per_step: usize, f: fn(&mut NoiseStream) -> T| -> Vec<Vec<T>> {
            (0..batch)
                .map(|b| NoiseStream::new(seed, step, b as u64, role).fill(n * per_step, f))
                .collect()
        };
        let wh = draw(Role::Where, p, |s| s.normal());
        let at = draw(Role::Attr, a, |s| s.normal());
        let ct = draw(Role::Category, k, |s| s.gumbel());
        let pr = draw(Role::Presence, 1, |s| s.logistic());
        let gather = |src: &[Vec<T>], t: usize, width: usize| {
            Tensor::from_fn(&[batch, width], |i| src[i / width][t * width + i % width])
        };
        let steps = (0..n)
            .map(|t| StepNoise {
                where_eps: gather(&wh, t, p),
                attr_eps: (a > 0).then(|| gather(&at, t, a)),
                cat_gumbel: gather(&ct, t, k),
                pres_logistic: gather(&pr, t, 1),
            })
            .collect();
        EpisodeNoise { steps }
    }
}

/// Latents of one inference step for a whole batch.
#[derive(Debug, Clone)]
pub struct LatentStep<'t, T: Scalar> {
    pub pres_logit: Var<'t, T>,
    /// `[B, 1]` presence value in [0, 1]
    pub pres: Var<'t, T>,
    pub pres_params: RelaxedBernoulliParams<'t, T>,
    /// relaxed sample (training mode only)
    pub pres_relaxed: Option<BinarySample<'t, T>>,
    pub where_params: GaussianParams<'t, T>,
    /// `[B, pose_dims]` unconstrained pose sample
    pub where_raw: Var<'t, T>,
    pub pose: PoseVars<'t, T>,
    /// `[B, 6]` rows of the glimpse-to-canvas placement
    pub theta_d: Var<'t, T>,
    /// `[B, 6]` rows of its inverse
    pub theta_e: Var<'t, T>,
    pub cat_params: RelaxedCategoricalParams<'t, T>,
    /// `[B, k]` point on the simplex (one-hot in evaluation)
    pub cat: Var<'t, T>,
    pub cat_relaxed: Option<SimplexSample<'t, T>>,
    pub attr_params: Option<GaussianParams<'t, T>>,
    pub attr: Option<Var<'t, T>>,
    /// `[B, gh, gw]` glimpse read from the input
    pub glimpse: Var<'t, T>,
    /// `[B, gh, gw]` decoded object
    pub object: Var<'t, T>,
    /// `[B, 1]` running product of presence values
    pub gate: Var<'t, T>,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace<'t, T: Scalar> {
    pub mode: Mode,
    pub steps: Vec<LatentStep<'t, T>>,
    /// `C_0 .. C_N`, each `[B, H, W]`
    pub canvases: Vec<Var<'t, T>>,
}

/// One object found by an episode, in canvas pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    pub step: usize,
    pub category: usize,
    pub center_x: T,
    pub center_y: T,
    /// extent of the object frame in pixels (width, height)
    pub extent: (T, T),
    pub pose: AffinePose<T>,
}

impl<'t, T: Scalar> EpisodeTrace<'t, T> {
    pub fn reconstruction(&self) -> Var<'t, T> {
        *self.canvases.last().expect("an episode has at least one canvas")
    }

    pub fn batch(&self) -> usize {
        self.reconstruction().shape()[0]
    }

    /// Objects per item: the leading run of steps whose presence exceeds 0.5.
    pub fn counts(&self) -> Vec<usize> {
        let pres: Vec<Tensor<T>> = self.steps.iter().map(|s| s.pres.value()).collect();
        let half = T::lit(0.5);
        (0..self.batch())
            .map(|b| pres.iter().take_while(|p| p.data()[b] > half).count())
            .collect()
    }

    /// Counted objects per item with argmax category and placement.
    pub fn detections(&self, config: &ModelConfig) -> Vec<Vec<Detection<T>>> {
        let counts = self.counts();
        let cats: Vec<Tensor<T>> = self.steps.iter().map(|s| s.cat.value()).collect();
        let poses: Vec<Vec<AffinePose<T>>> = self.steps.iter().map(|s| s.pose.values()).collect();
        let k = config.num_categories;
        let (h, w) = (config.canvas_h as f64, config.canvas_w as f64);
        counts
            .iter()
            .enumerate()
            .map(|(b, &n)| {
                (0..n)
                    .map(|t| {
                        let row = &cats[t].data()[b * k..(b + 1) * k];
                        let category = argmax(row);
                        let pose = poses[t][b];
                        let (cx, cy) = crate::attention::to_pixels(pose.t_x, pose.t_y, config.canvas_h, config.canvas_w);
                        Detection {
                            step: t,
                            category,
                            center_x: cx,
                            center_y: cy,
                            extent: (pose.s_x * T::lit(w), pose.s_y * T::lit(h)),
                            pose,
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Batch-mean terms of the negative ELBO.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms<V> {
    pub nll: V,
    pub kl_where: V,
    pub kl_cat: V,
    pub kl_attr: V,
    pub kl_pres: V,
    pub total: V,
}

impl<'t, T: Scalar> ElboTerms<Var<'t, T>> {
    pub fn values(&self) -> ElboTerms<T> {
        let v = |x: &Var<'t, T>| x.value().item();
        ElboTerms {
            nll: v(&self.nll),
            kl_where: v(&self.kl_where),
            kl_cat: v(&self.kl_cat),
            kl_attr: v(&self.kl_attr),
            kl_pres: v(&self.kl_pres),
            total: v(&self.total),
        }
    }
}

/// One object for [`Model::generate_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec<T> {
    pub category: usize,
    pub attr: Vec<T>,
    pub pose: AffinePose<T>,
}

/// Network layout; indices refer into the model's [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
struct Net {
    rnn: Lstm,
    pres_head: Linear,
    where_head: Linear,
    encoder: Mlp,
    template: Mlp,
    attribute: Option<Mlp>,
    render: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    net: Net,
}

impl<T: Scalar> Model<T> {
    /// Builds a model with reproducible initial weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        let mut b = Builder {
            store: &mut store,
            seed,
        };
        let (p, k, a) = (config.pose_dims(), config.num_categories, config.attr_dim);
        let g = config.glimpse_pixels();
        let rnn_in = config.canvas_pixels() + 1 + p + k + a;
        let rnn = b.lstm("rnn", rnn_in, config.rnn_hidden);
        let pres_head = b.linear("pres_head", config.rnn_hidden, 1, Init::Zero);
        let where_head = b.linear("where_head", config.rnn_hidden, 2 * p, Init::Zero);
        let encoder = b.mlp("encoder", g, config.enc_hidden, k + 2 * a, Init::Zero);
        let template = b.mlp("template", k, config.dec_hidden, g, Init::FanIn);
        let attr_out = match config.combiner {
            Combiner::Convolutional => CONV_KERNEL * CONV_KERNEL,
            _ => g,
        };
        let attribute = (a > 0).then(|| b.mlp("attribute", a, config.dec_hidden, attr_out, Init::FanIn));
        let render = b.mlp("render", g, config.dec_hidden, g, Init::FanIn);
        Ok(Model {
            config,
            params: store,
            net: Net {
                rnn,
                pres_head,
                where_head,
                encoder,
                template,
                attribute,
                render,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Same layout, different element type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut store = ParamStore::default();
        for (n, t) in self.params.names().iter().zip(self.params.tensors()) {
            store.push(n.clone(), t.cast());
        }
        Model {
            config: self.config.clone(),
            params: store,
            net: self.net.clone(),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        self.params.bind(tape, trainable)
    }

    fn check_images(&self, x: &[usize]) -> Result<usize> {
        let c = &self.config;
        if x.len() != 3 || x[1] != c.canvas_h || x[2] != c.canvas_w || x[0] == 0 {
            return Err(Error::Shape {
                op: "episode input (expected [batch, canvas_h, canvas_w])",
                lhs: x.to_vec(),
                rhs: vec![c.canvas_h, c.canvas_w],
            });
        }
        Ok(x[0])
    }

    /// Decodes `[B, k]` category codes (and `[B, attr_dim]` attributes) into
    /// `[B, gh, gw]` objects in [0, 1].
    pub fn decode_object<'t>(
        &self,
        p: &Bound<'t, T>,
        cat: Var<'t, T>,
        attr: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let c = &self.config;
        let b = cat.shape()[0];
        let (gh, gw) = (c.glimpse_h, c.glimpse_w);
        let template = self.net.template.forward(p, cat)?;
        let attr_out = match (self.net.attribute, attr) {
            (Some(net), Some(z)) => Some(net.forward(p, z)?),
            (None, None) => None,
            _ => return Err(Error::invalid("attribute code does not match attr_dim")),
        };
        let tape = cat.tape();
        let combined = match c.combiner {
            Combiner::Additive => match attr_out {
                Some(a) => template.add(a)?,
                None => template,
            },
            Combiner::Multiplicative => match attr_out {
                Some(a) => template.mul(a)?,
                None => template,
            },
            Combiner::Convolutional => {
                let kernels = match attr_out {
                    Some(a) => a.reshape(&[b, 1, CONV_KERNEL, CONV_KERNEL])?,
                    None => {
                        let centre = CONV_KERNEL * CONV_KERNEL / 2;
                        tape.constant(Tensor::from_fn(&[b, 1, CONV_KERNEL, CONV_KERNEL], |i| {
                            if i % (CONV_KERNEL * CONV_KERNEL) == centre {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }))
                    }
                };
                template
                    .reshape(&[b, 1, gh, gw])?
                    .conv2d_depthwise(kernels)?
                    .reshape(&[b, gh * gw])?
            }
        };
        self.net.render.forward(p, combined)?.sigmoid().reshape(&[b, gh, gw])
    }

    /// `canvas + gate ⊙ write(object)`, where the object is resampled onto the
    /// canvas through `theta_e` (canvas to object coordinates).
    pub fn compose_canvas<'t>(
        &self,
        canvas: Var<'t, T>,
        object: Var<'t, T>,
        theta_e: Var<'t, T>,
        gate: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        compose_canvas(canvas, object, theta_e, gate)
    }

    /// One inference/decoding step. `prev` holds the previous step's sampled
    /// latents as a `[B, 1 + pose_dims + k + attr_dim]` block.
    #[allow(clippy::too_many_arguments)]
    pub fn infer_step<'t>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        canvas: Var<'t, T>,
        prev: Var<'t, T>,
        state: LstmState<'t, T>,
        noise: &StepNoise<T>,
        tau: T,
        mode: Mode,
        forced_pres: Option<&Tensor<T>>,
    ) -> Result<(LatentStep<'t, T>, LstmState<'t, T>)> {
        let c = &self.config;
        let tape = x.tape();
        let b = self.check_images(&x.shape())?;
        let (pd, k, a) = (c.pose_dims(), c.num_categories, c.attr_dim);
        let diff = x.sub(canvas)?.reshape(&[b, c.canvas_pixels()])?;
        let rnn_in = tape.concat(&[diff, prev], 1)?;
        let state = self.net.rnn.step(p, rnn_in, state)?;

        // presence
        let pres_logit = self.net.pres_head.forward(p, state.h)?;
        let pres_params = RelaxedBernoulliParams::new(pres_logit, tau)?;
        let (mut pres, pres_relaxed) = match mode {
            Mode::Train => {
                let s = sample_gumbel_sigmoid(&pres_params, tape.constant(noise.pres_logistic.clone()))?;
                (s.value, Some(s))
            }
            Mode::Eval => {
                let hard = pres_logit.value().map(|v| if v > T::zero() { T::one() } else { T::zero() });
                (tape.constant(hard), None)
            }
        };
        if let Some(f) = forced_pres {
            pres = tape.constant(f.clone());
        }

        // pose
        let wh = self.net.where_head.forward(p, state.h)?;
        let where_params = GaussianParams::new(wh.slice(1, 0, pd)?, wh.slice(1, pd, pd)?)?;
        let where_raw = match mode {
            Mode::Train => sample_gaussian(&where_params, tape.constant(noise.where_eps.clone()))?,
            Mode::Eval => where_params.mu,
        };
        let pose = PoseVars::from_raw(where_raw, c.pose_flags())?;
        let theta_d = pose.forward_rows()?;
        let theta_e = pose.inverse_rows()?;

        // read attention and glimpse encoder
        let glimpse = x.grid_sample(theta_d, c.glimpse_h, c.glimpse_w)?;
        let enc = self
            .net
            .encoder
            .forward(p, glimpse.reshape(&[b, c.glimpse_pixels()])?)?;
        let cat_params = RelaxedCategoricalParams::new(enc.slice(1, 0, k)?, tau)?;
        let (cat, cat_relaxed) = match mode {
            Mode::Train => {
                let s = sample_gumbel_softmax(&cat_params, tape.constant(noise.cat_gumbel.clone()))?;
                (s.value, Some(s))
            }
            Mode::Eval => {
                let logits = cat_params.logits.value();
                let mut hot = vec![T::zero(); b * k];
                for (i, row) in logits.data().chunks(k).enumerate() {
                    hot[i * k + argmax(row)] = T::one();
                }
                (tape.constant(Tensor::from_vec(&[b, k], hot)?), None)
            }
        };
        let (attr_params, attr) = if a > 0 {
            let params = GaussianParams::new(enc.slice(1, k, a)?, enc.slice(1, k + a, a)?)?;
            let eps = noise
                .attr_eps
                .as_ref()
                .ok_or_else(|| Error::invalid("attribute noise missing"))?;
            let z = match mode {
                Mode::Train => sample_gaussian(&params, tape.constant(eps.clone()))?,
                Mode::Eval => params.mu,
            };
            (Some(params), Some(z))
        } else {
            (None, None)
        };

        let object = self.decode_object(p, cat, attr)?;
        let step = LatentStep {
            pres_logit,
            pres,
            pres_params,
            pres_relaxed,
            where_params,
            where_raw,
            pose,
            theta_d,
            theta_e,
            cat_params,
            cat,
            cat_relaxed,
            attr_params,
            attr,
            glimpse,
            object,
            // replaced by the episode loop with the running product
            gate: pres,
        };
        Ok((step, state))
    }

    /// Runs `max_steps` inference steps on `x` (`[B, H, W]`, values in [0, 1]).
    ///
    /// The gate of step i is the product of the presence values up to i, so
    /// once a step switches off every later write is suppressed.
    /// `forced_pres` overrides the presence value of each step.
    pub fn run_episode<'t>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        noise: &EpisodeNoise<T>,
        tau: T,
        mode: Mode,
        forced_pres: Option<&[Tensor<T>]>,
    ) -> Result<EpisodeTrace<'t, T>> {
        let c = &self.config;
        let b = self.check_images(&x.shape())?;
        if noise.steps.len() != c.max_steps {
            return Err(Error::invalid(format!(
                "noise for {} steps, model runs {}",
                noise.steps.len(),
                c.max_steps
            )));
        }
        if let Some(f) = forced_pres {
            if f.len() != c.max_steps {
                return Err(Error::invalid("forced presence needs one tensor per step"));
            }
        }
        if !(tau > T::zero()) {
            return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
        }
        let tape = x.tape();
        let latent_width = 1 + c.pose_dims() + c.num_categories + c.attr_dim;
        let mut prev = tape.constant(Tensor::zeros(&[b, latent_width]));
        let mut state = self.net.rnn.zero_state(tape, b);
        let mut canvas = tape.constant(Tensor::zeros(&[b, c.canvas_h, c.canvas_w]));
        let mut gate = tape.constant(Tensor::ones(&[b, 1]));
        let mut steps = Vec::with_capacity(c.max_steps);
        let mut canvases = vec![canvas];
        for t in 0..c.max_steps {
            let forced = forced_pres.map(|f| &f[t]);
            let (mut step, next) =
                self.infer_step(p, x, canvas, prev, state, &noise.steps[t], tau, mode, forced)?;
            state = next;
            gate = gate.mul(step.pres)?;
            step.gate = gate;
            canvas = compose_canvas(canvas, step.object, step.theta_e, gate)?;
            canvases.push(canvas);
            let mut parts = vec![step.pres, step.where_raw, step.cat];
            parts.extend(step.attr);
            prev = tape.concat(&parts, 1)?;
            steps.push(step);
        }
        Ok(EpisodeTrace {
            mode,
            steps,
            canvases,
        })
    }

    /// Negative ELBO of a training-mode trace, averaged over the batch.
    ///
    /// Pose and attribute KL terms of each step are weighted by its gate;
    /// category and presence terms use the single-sample relaxed estimates.
    pub fn elbo<'t>(&self, x: Var<'t, T>, trace: &EpisodeTrace<'t, T>) -> Result<ElboTerms<Var<'t, T>>> {
        if trace.mode != Mode::Train {
            return Err(Error::invalid("the ELBO needs relaxed samples from a training-mode episode"));
        }
        let c = &self.config;
        let b = self.check_images(&x.shape())?;
        let tape = x.tape();
        let nll = negative_log_likelihood(x, trace.reconstruction(), T::lit(c.sigma_x))?;
        let zero = || tape.constant(Tensor::zeros(&[b, 1]));
        let (mut kw, mut kc, mut ka, mut kp) = (zero(), zero(), zero(), zero());
        let prior = vec![T::one() / T::lit(c.num_categories as f64); c.num_categories];
        for s in &trace.steps {
            kw = kw.add(kl_gaussian_standard(&s.where_params)?.mul(s.gate)?)?;
            if let Some(ap) = &s.attr_params {
                ka = ka.add(kl_gaussian_standard(ap)?.mul(s.gate)?)?;
            }
            let cat = s.cat_relaxed.as_ref().expect("training mode");
            kc = kc.add(kl_relaxed_categorical_mc(&s.cat_params, &prior, cat)?)?;
            let pres = s.pres_relaxed.as_ref().expect("training mode");
            kp = kp.add(kl_pres_step(&s.pres_params, pres, T::lit(c.continue_prob))?)?;
        }
        let (nll, kl_where, kl_cat, kl_attr, kl_pres) = (nll.mean(), kw.mean(), kc.mean(), ka.mean(), kp.mean());
        let total = nll.add(kl_where)?.add(kl_cat)?.add(kl_attr)?.add(kl_pres)?;
        Ok(ElboTerms {
            nll,
            kl_where,
            kl_cat,
            kl_attr,
            kl_pres,
            total,
        })
    }

    /// Renders objects at given poses with presence 1. Any number of objects
    /// is accepted, independently of `max_steps`.
    pub fn generate_scene(&self, objects: &[ObjectSpec<T>]) -> Result<Tensor<T>> {
        let c = &self.config;
        if objects.is_empty() {
            return Ok(Tensor::zeros(&[c.canvas_h, c.canvas_w]));
        }
        let n = objects.len();
        let (k, a) = (c.num_categories, c.attr_dim);
        for (i, o) in objects.iter().enumerate() {
            if o.category >= k {
                return Err(Error::invalid(format!("object {i}: category {} not below {k}", o.category)));
            }
            if o.attr.len() != a {
                return Err(Error::invalid(format!(
                    "object {i}: {} attribute values, model has {a}",
                    o.attr.len()
                )));
            }
            if !o.pose.is_finite() || o.pose.s_x <= T::zero() || o.pose.s_y <= T::zero() {
                return Err(Error::invalid(format!("object {i}: invalid pose {:?}", o.pose)));
            }
        }
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let cat = tape.constant(Tensor::from_fn(&[n, k], |i| {
            if objects[i / k].category == i % k {
                T::one()
            } else {
                T::zero()
            }
        }));
        let attr = (a > 0).then(|| tape.constant(Tensor::from_fn(&[n, a], |i| objects[i / a].attr[i % a])));
        let obj = self.decode_object(&p, cat, attr)?;
        let poses: Vec<AffinePose<T>> = objects.iter().map(|o| o.pose).collect();
        let theta_e = PoseVars::from_poses(&tape, &poses, c.pose_flags())?.inverse_rows()?;
        let written = obj.grid_sample(theta_e, c.canvas_h, c.canvas_w)?.value();
        let hw = c.canvas_pixels();
        let mut out = vec![T::zero(); hw];
        for item in written.data().chunks(hw) {
            for (o, v) in out.iter_mut().zip(item) {
                *o += *v;
            }
        }
        Tensor::from_vec(&[c.canvas_h, c.canvas_w], out)
    }
}

/// `canvas + gate ⊙ grid_sample(object, theta_e)` for `[B, H, W]` canvases,
/// `[B, gh, gw]` objects, `[B, 6]` matrices and `[B, 1]` gates.
pub fn compose_canvas<'t, T: Scalar>(
    canvas: Var<'t, T>,
    object: Var<'t, T>,
    theta_e: Var<'t, T>,
    gate: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let cs = canvas.shape();
    if cs.len() != 3 {
        return Err(Error::Shape {
            op: "compose_canvas",
            lhs: cs,
            rhs: object.shape(),
        });
    }
    let written = object.grid_sample(theta_e, cs[1], cs[2])?;
    let g = gate.reshape(&[cs[0], 1, 1])?;
    canvas.add(written.mul(g)?)
}

/// Per-item `Σ (x − y)² / (2σ²) + log σ + ½ log 2π` over pixels, as `[B, 1]`.
pub fn negative_log_likelihood<'t, T: Scalar>(x: Var<'t, T>, y: Var<'t, T>, sigma: T) -> Result<Var<'t, T>> {
    let s = x.shape();
    let b = s[0];
    let pixels: usize = s[1..].iter().product();
    let per_pixel = sigma.ln() + T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    let sq = x.sub(y)?.square().reshape(&[b, pixels])?.sum_axis(1)?;
    Ok(sq
        .scale(T::one() / (T::lit(2.0) * sigma * sigma))
        .add_scalar(per_pixel * T::lit(pixels as f64)))
}
