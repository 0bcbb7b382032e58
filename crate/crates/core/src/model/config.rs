use std::fmt;
use std::str::FromStr;

use crate::attention::PoseFlags;
use crate::error::{Error, Result};

/// How attribute codes modify the category template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Combiner {
    #[default]
    Additive,
    Multiplicative,
    Convolutional,
}

impl FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(Combiner::Additive),
            "multiplicative" => Ok(Combiner::Multiplicative),
            "convolutional" => Ok(Combiner::Convolutional),
            other => Err(Error::invalid(format!("unknown combiner {other:?}"))),
        }
    }
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combiner::Additive => "additive",
            Combiner::Multiplicative => "multiplicative",
            Combiner::Convolutional => "convolutional",
        })
    }
}

/// Side of the per-sample kernels of the convolutional combiner.
pub const CONV_KERNEL: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub canvas_h: usize,
    pub canvas_w: usize,
    pub glimpse_h: usize,
    pub glimpse_w: usize,
    pub max_steps: usize,
    pub num_categories: usize,
    pub attr_dim: usize,
    pub rnn_hidden: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub combiner: Combiner,
    pub enable_shear: bool,
    pub merge_rot_shear: bool,
    /// Standard deviation of the pixel likelihood.
    pub sigma_x: f64,
    /// Continuation probability of the geometric prior on the object count.
    pub continue_prob: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::multi_sprites()
    }
}

impl ModelConfig {
    /// 64×64 canvases, up to 3 objects of 3 shapes, no attributes, no shear.
    pub fn multi_sprites() -> Self {
        ModelConfig {
            canvas_h: 64,
            canvas_w: 64,
            glimpse_h: 28,
            glimpse_w: 28,
            max_steps: 3,
            num_categories: 3,
            attr_dim: 0,
            rnn_hidden: 256,
            enc_hidden: 512,
            dec_hidden: 512,
            combiner: Combiner::Additive,
            enable_shear: false,
            merge_rot_shear: false,
            sigma_x: 0.3,
            continue_prob: 0.5,
        }
    }

    /// 50×50 canvases, up to 2 digits, one attribute, merged rotation/shear.
    pub fn multi_mnist() -> Self {
        ModelConfig {
            canvas_h: 50,
            canvas_w: 50,
            max_steps: 2,
            num_categories: 10,
            attr_dim: 1,
            enable_shear: true,
            merge_rot_shear: true,
            ..ModelConfig::multi_sprites()
        }
    }

    pub fn pose_flags(&self) -> PoseFlags {
        PoseFlags {
            enable_shear: self.enable_shear,
            merge_rot_shear: self.merge_rot_shear,
        }
    }

    pub fn pose_dims(&self) -> usize {
        self.pose_flags().dims()
    }

    pub fn canvas_pixels(&self) -> usize {
        self.canvas_h * self.canvas_w
    }

    pub fn glimpse_pixels(&self) -> usize {
        self.glimpse_h * self.glimpse_w
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(m.to_string()));
        if self.max_steps < 1 {
            return fail("max_steps must be at least 1");
        }
        if self.num_categories < 2 {
            return fail("num_categories must be at least 2");
        }
        if [self.canvas_h, self.canvas_w, self.glimpse_h, self.glimpse_w].contains(&0) {
            return fail("image sizes must be positive");
        }
        if self.glimpse_h > self.canvas_h || self.glimpse_w > self.canvas_w {
            return fail("glimpse must not exceed the canvas");
        }
        if [self.rnn_hidden, self.enc_hidden, self.dec_hidden].contains(&0) {
            return fail("layer widths must be positive");
        }
        if !(self.sigma_x > 0.0 && self.sigma_x.is_finite()) {
            return fail("sigma_x must be positive");
        }
        if !(self.continue_prob > 0.0 && self.continue_prob < 1.0) {
            return fail("continue_prob must lie in (0, 1)");
        }
        if self.combiner == Combiner::Convolutional
            && (self.glimpse_h < CONV_KERNEL || self.glimpse_w < CONV_KERNEL)
        {
            return fail("convolutional combiner needs glimpses of at least 5×5");
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
        }
        match key {
            "canvas_h" => self.canvas_h = parse(key, value)?,
            "canvas_w" => self.canvas_w = parse(key, value)?,
            "glimpse_h" => self.glimpse_h = parse(key, value)?,
            "glimpse_w" => self.glimpse_w = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "num_categories" => self.num_categories = parse(key, value)?,
            "attr_dim" => self.attr_dim = parse(key, value)?,
            "rnn_hidden" => self.rnn_hidden = parse(key, value)?,
            "enc_hidden" => self.enc_hidden = parse(key, value)?,
            "dec_hidden" => self.dec_hidden = parse(key, value)?,
            "combiner" => self.combiner = value.trim().parse()?,
            "enable_shear" => self.enable_shear = parse(key, value)?,
            "merge_rot_shear" => self.merge_rot_shear = parse(key, value)?,
            "sigma_x" => self.sigma_x = parse(key, value)?,
            "continue_prob" => self.continue_prob = parse(key, value)?,
            other => return Err(Error::invalid(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)` in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("canvas_h", self.canvas_h.to_string()),
            ("canvas_w", self.canvas_w.to_string()),
            ("glimpse_h", self.glimpse_h.to_string()),
            ("glimpse_w", self.glimpse_w.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("num_categories", self.num_categories.to_string()),
            ("attr_dim", self.attr_dim.to_string()),
            ("rnn_hidden", self.rnn_hidden.to_string()),
            ("enc_hidden", self.enc_hidden.to_string()),
            ("dec_hidden", self.dec_hidden.to_string()),
            ("combiner", self.combiner.to_string()),
            ("enable_shear", self.enable_shear.to_string()),
            ("merge_rot_shear", self.merge_rot_shear.to_string()),
            ("sigma_x", format!("{:?}", self.sigma_x)),
            ("continue_prob", format!("{:?}", self.continue_prob)),
        ]
    }

    pub fn is_key(key: &str) -> bool {
        ModelConfig::default().entries().iter().any(|(k, _)| *k == key)
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Parses the output of [`ModelConfig::to_text`] on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = ModelConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got {line:?}")))?;
            c.set(k.trim(), v)?;
        }
        c.validate()?;
        Ok(c)
    }
}
