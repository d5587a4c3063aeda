use super::params::{decoder_levels, encoder_levels, ModelParams, KERNEL};
use super::{LossParts, ModelConfig, Variant, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Var};

/// Mean and clamped log-variance of a batch of diagonal Gaussians, `[B, L]`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVar {
    pub mean: Var,
    pub log_var: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    /// Batch mean of the per-example KL; `None` for `Det`.
    pub kl: Option<Var>,
}

impl LossVars {
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> LossParts {
        let get = |v: Var| tape.value(v).data()[0].as_f64();
        LossParts {
            total: get(self.total),
            recon: get(self.recon),
            kl: self.kl.map_or(0.0, get),
        }
    }
}

/// Model parameters bound to tape leaves.
pub struct Network<'a, T: Scalar> {
    cfg: &'a ModelConfig,
    params: &'a ModelParams<T>,
    vars: Vec<Var>,
}

impl<'a, T: Scalar> Network<'a, T> {
    /// Records every parameter on `tape`; `trainable` decides whether they
    /// receive gradients.
    pub fn bind(
        tape: &mut Tape<T>,
        cfg: &'a ModelConfig,
        params: &'a ModelParams<T>,
        trainable: bool,
    ) -> Self {
        let vars = params
            .tensors()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Network { cfg, params, vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn p(&self, name: &str) -> Var {
        let i = self
            .params
            .position(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not declared"));
        self.vars[i]
    }

    fn conv_act(&self, tape: &mut Tape<T>, name: &str, x: Var, stride: &[usize]) -> Result<Var> {
        let pad = vec![KERNEL / 2; stride.len()];
        let h = tape.conv(x, self.p(&format!("{name}/w")), self.p(&format!("{name}/b")), stride, &pad)?;
        Ok(tape.leaky_relu(h, T::lit(self.cfg.slope as f64)))
    }

    fn conv_linear(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var> {
        let dims = tape.value(x).rank() - 2;
        tape.conv(
            x,
            self.p(&format!("{name}/w")),
            self.p(&format!("{name}/b")),
            &vec![1; dims],
            &vec![KERNEL / 2; dims],
        )
    }

    fn dense(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var> {
        tape.dense(x, self.p(&format!("{name}/w")), self.p(&format!("{name}/b")))
    }

    fn check_input(&self, tape: &Tape<T>, v: Var, expected: &[usize], what: &str) -> Result<usize> {
        let s = tape.value(v).shape();
        if s.len() != expected.len() + 1 || s[1..] != *expected {
            return Err(Error::shape(
                "model",
                format!("{what} is {s:?}, expected [batch] + {expected:?}"),
            ));
        }
        Ok(s[0])
    }

    fn encode(&self, tape: &mut Tape<T>, prefix: &str, input: Var, spatial: &[usize]) -> Result<GaussianVar> {
        let levels = encoder_levels(spatial, self.cfg.enc_channels.len());
        let mut h = input;
        for (i, level) in levels.iter().enumerate() {
            h = self.conv_act(tape, &format!("{prefix}/conv{i}"), h, &level.stride)?;
        }
        let s = tape.value(h).shape().to_vec();
        let flat = tape.reshape(h, &[s[0], s[1..].iter().product()])?;
        let mean = self.dense(tape, &format!("{prefix}/mean"), flat)?;
        let lv = self.dense(tape, &format!("{prefix}/logvar"), flat)?;
        let log_var = tape.clamp(lv, T::lit(LOG_VAR_MIN as f64), T::lit(LOG_VAR_MAX as f64));
        Ok(GaussianVar { mean, log_var })
    }

    /// `q(z|y)` for `y: [B] + signal_shape`.
    pub fn posterior(&self, tape: &mut Tape<T>, y: Var) -> Result<GaussianVar> {
        self.require_latent()?;
        self.check_input(tape, y, &self.cfg.signal_shape, "signal")?;
        self.encode(tape, "post", y, &self.cfg.signal_shape[1..])
    }

    /// `p(z|x)` for `x: [B] + projection_shape`.
    pub fn prior(&self, tape: &mut Tape<T>, x: Var) -> Result<GaussianVar> {
        self.require_latent()?;
        let proj = self.cfg.projection_shape();
        self.check_input(tape, x, &proj, "projection")?;
        self.encode(tape, "prior", x, &proj[1..])
    }

    fn require_latent(&self) -> Result<()> {
        if self.cfg.variant == Variant::Det {
            return Err(Error::invalid("the det variant has no latent encoders"));
        }
        Ok(())
    }

    /// `mean + exp(log_var / 2) * eps`.
    pub fn reparam(&self, tape: &mut Tape<T>, g: GaussianVar, eps: Var) -> Result<Var> {
        let half = tape.scale(g.log_var, T::lit(0.5));
        let std = tape.exp(half);
        let noise = tape.mul(std, eps)?;
        tape.add(g.mean, noise)
    }

    /// Batch mean of `KL(q || p)` summed over latent dimensions.
    pub fn kl(&self, tape: &mut Tape<T>, q: GaussianVar, p: GaussianVar) -> Result<Var> {
        let batch = tape.value(q.mean).shape()[0];
        let dlv = tape.sub(p.log_var, q.log_var)?;
        let t1 = tape.scale(dlv, T::lit(0.5));
        let dm = tape.sub(q.mean, p.mean)?;
        let dm2 = tape.square(dm);
        let var_q = tape.exp(q.log_var);
        let num = tape.add(var_q, dm2)?;
        let neg = tape.scale(p.log_var, T::lit(-1.0));
        let inv_var_p = tape.exp(neg);
        let ratio = tape.mul(num, inv_var_p)?;
        let t2 = tape.scale(ratio, T::lit(0.5));
        let terms = tape.add(t1, t2)?;
        let terms = tape.offset(terms, T::lit(-0.5));
        let total = tape.sum(terms);
        Ok(tape.scale(total, T::lit(1.0 / batch as f64)))
    }

    /// `g(x, z)`; `z: [B, L]` is required for `Cvae` and must be `None` for `Det`.
    pub fn decode(&self, tape: &mut Tape<T>, x: Var, z: Option<Var>) -> Result<Var> {
        let cfg = self.cfg;
        let proj = cfg.projection_shape();
        let batch = self.check_input(tape, x, &proj, "projection")?;
        let spatial = &proj[1..];
        let dims = spatial.len();
        let levels = decoder_levels(spatial, cfg.dec_channels.len());

        let mut skips = Vec::with_capacity(levels.len());
        let mut h = x;
        for (i, level) in levels.iter().enumerate() {
            h = self.conv_act(tape, &format!("dec/down{i}"), h, &level.stride)?;
            skips.push(h);
        }
        match (cfg.variant, z) {
            (Variant::Cvae, Some(z)) => {
                let zs = tape.value(z).shape();
                if zs != [batch, cfg.latent_dim] {
                    return Err(Error::shape(
                        "deproject",
                        format!("latent is {zs:?}, expected [{batch}, {}]", cfg.latent_dim),
                    ));
                }
                let zd = self.dense(tape, "dec/z", z)?;
                let zd = tape.leaky_relu(zd, T::lit(cfg.slope as f64));
                let mut shape = vec![batch, cfg.z_channels];
                shape.extend_from_slice(&levels.last().expect("non-empty ladder").extent);
                let zimg = tape.reshape(zd, &shape)?;
                h = tape.concat(h, zimg, 1)?;
            }
            (Variant::Det, None) => {}
            (Variant::Cvae, None) => return Err(Error::invalid("cvae decoder needs a latent")),
            (Variant::Det, Some(_)) => return Err(Error::invalid("det decoder takes no latent")),
        }
        h = self.conv_act(tape, "dec/mid", h, &vec![1; dims])?;
        for i in (1..levels.len()).rev() {
            h = tape.upsample_nearest(h, &levels[i].stride)?;
            h = tape.concat(h, skips[i - 1], 1)?;
            h = self.conv_act(tape, &format!("dec/up{i}"), h, &vec![1; dims])?;
        }
        h = self.conv_act(tape, "dec/expand", h, &vec![1; dims])?;

        let (t, f) = (cfg.collapsed_extent(), cfg.expand_features);
        let mut shape = vec![batch, f, t];
        shape.extend_from_slice(spatial);
        h = tape.reshape(h, &shape)?;
        let q = cfg.collapse_axis - 1;
        if q > 0 {
            let mut perm = vec![0, 1];
            perm.extend((0..=dims).map(|j| match j.cmp(&q) {
                std::cmp::Ordering::Equal => 2,
                std::cmp::Ordering::Less => 3 + j,
                std::cmp::Ordering::Greater => 2 + j,
            }));
            h = tape.permute(h, &perm)?;
        }
        for j in 0..cfg.refine_channels.len() {
            h = self.conv_act(tape, &format!("dec/refine{j}"), h, &vec![1; dims + 1])?;
        }
        h = self.conv_linear(tape, "dec/out", h)?;
        Ok(tape.sigmoid(h))
    }

    /// One-sample objective `mse(g(x, z), y) + beta * KL(q || p)` with
    /// `z = reparam(q(z|y), eps)`. `Det` ignores `eps` and `beta`.
    pub fn loss(&self, tape: &mut Tape<T>, x: Var, y: Var, eps: Option<Var>, beta: f32) -> Result<LossVars> {
        match self.cfg.variant {
            Variant::Cvae => {
                let eps = eps.ok_or_else(|| Error::invalid("cvae loss needs noise"))?;
                let q = self.posterior(tape, y)?;
                let p = self.prior(tape, x)?;
                let z = self.reparam(tape, q, eps)?;
                self.loss_given(tape, x, y, z, q, p, beta)
            }
            Variant::Det => {
                let yhat = self.decode(tape, x, None)?;
                let recon = tape.mse(yhat, y)?;
                Ok(LossVars {
                    total: recon,
                    recon,
                    kl: None,
                })
            }
        }
    }

    /// The objective for an already drawn latent `z`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_given(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        y: Var,
        z: Var,
        q: GaussianVar,
        p: GaussianVar,
        beta: f32,
    ) -> Result<LossVars> {
        let yhat = self.decode(tape, x, Some(z))?;
        let recon = tape.mse(yhat, y)?;
        let kl = self.kl(tape, q, p)?;
        let weighted = tape.scale(kl, T::lit(beta as f64));
        let total = tape.add(recon, weighted)?;
        Ok(LossVars {
            total,
            recon,
            kl: Some(kl),
        })
    }
}
