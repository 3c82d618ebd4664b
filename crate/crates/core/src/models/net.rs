//! Two-branch convolutional network shared by the quality and displacement
//! models: an image tower, an action branch and a merged head.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::rng;
use crate::tensor::ops::{
    conv2d_backward, conv2d_forward, dropout, dropout_backward, linear_backward, linear_forward, relu,
    relu_backward, Mode,
};
use crate::tensor::Tensor;

/// Layer sizes. Convolutions use no padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetSpec {
    pub image_side: usize,
    pub conv: [(usize, usize, usize); 3],
    pub fc_image: usize,
    pub fc_action: usize,
    pub fc_merge: usize,
    pub action_dim: usize,
    pub head_dim: usize,
}

impl NetSpec {
    /// 5×5×16/2, 5×5×32/2, 3×3×64/2 on a 64×64 input; FC 128, action FC 16, merge FC 64.
    pub fn standard(action_dim: usize, head_dim: usize) -> NetSpec {
        NetSpec {
            image_side: 64,
            conv: [(16, 5, 2), (32, 5, 2), (64, 3, 2)],
            fc_image: 128,
            fc_action: 16,
            fc_merge: 64,
            action_dim,
            head_dim,
        }
    }

    /// Same topology at a size small enough for exhaustive finite differences.
    pub fn shrunken(action_dim: usize, head_dim: usize) -> NetSpec {
        NetSpec {
            image_side: 32,
            conv: [(2, 5, 2), (3, 5, 2), (4, 3, 2)],
            fc_image: 8,
            fc_action: 4,
            fc_merge: 6,
            action_dim,
            head_dim,
        }
    }

    /// Spatial side after each convolution, or None if a kernel does not fit.
    pub fn feature_sides(&self) -> Option<[usize; 3]> {
        let mut side = self.image_side;
        let mut out = [0; 3];
        for (i, &(_, k, s)) in self.conv.iter().enumerate() {
            if side < k || s == 0 {
                return None;
            }
            side = (side - k) / s + 1;
            out[i] = side;
        }
        Some(out)
    }

    pub fn flat_len(&self) -> usize {
        let sides = self.feature_sides().expect("validated spec");
        self.conv[2].0 * sides[2] * sides[2]
    }

    fn validate(&self) -> Result<()> {
        let dims = [self.fc_image, self.fc_action, self.fc_merge, self.action_dim, self.head_dim];
        if self.feature_sides().is_none() || dims.contains(&0) || self.conv.iter().any(|c| c.0 == 0) {
            return Err(Error::Shape(format!("invalid network spec {self:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut cin = 1;
        for &(f, k, _) in &self.conv {
            n += f * cin * k * k + f;
            cin = f;
        }
        n += self.flat_len() * self.fc_image + self.fc_image;
        n += self.action_dim * self.fc_action + self.fc_action;
        n += (self.fc_image + self.fc_action) * self.fc_merge + self.fc_merge;
        n + self.fc_merge * self.head_dim + self.head_dim
    }
}

pub const DROPOUT_RATE: f64 = 0.5;

pub const PARAM_NAMES: [&str; 14] = [
    "conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b", "fc_image.w", "fc_image.b", "fc_action.w",
    "fc_action.b", "fc_merge.w", "fc_merge.b", "head.w", "head.b",
];

/// Number of leading entries of [`PARAM_NAMES`] that belong to the conv stack.
pub const CONV_PARAMS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct GraspNet {
    spec: NetSpec,
    /// Ordered as [`PARAM_NAMES`].
    params: Vec<Tensor>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    x: Tensor,
    actions: Tensor,
    a1: Tensor,
    a2: Tensor,
    a3: Tensor,
    flat: Tensor,
    h_img: Tensor,
    h_act: Tensor,
    merged_in: Tensor,
    h_merge: Tensor,
    mask: Vec<f64>,
    dropped: Tensor,
}

impl GraspNet {
    /// He-normal weights, zero biases.
    pub fn new(spec: NetSpec, seed: u64) -> Result<GraspNet> {
        spec.validate()?;
        let mut r = rng(seed);
        let mut params = Vec::with_capacity(PARAM_NAMES.len());
        let he = |shape: &[usize], fan_in: usize, r: &mut rand_chacha::ChaCha8Rng| {
            let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            Tensor::from_fn(shape, |_| n.sample(r))
        };
        let mut cin = 1;
        for &(f, k, _) in &spec.conv {
            params.push(he(&[f, cin, k, k], cin * k * k, &mut r));
            params.push(Tensor::zeros(&[f]));
            cin = f;
        }
        let flat = spec.flat_len();
        for (o, i) in [
            (spec.fc_image, flat),
            (spec.fc_action, spec.action_dim),
            (spec.fc_merge, spec.fc_image + spec.fc_action),
        ] {
            params.push(he(&[o, i], i, &mut r));
            params.push(Tensor::zeros(&[o]));
        }
        let n = Normal::new(0.0, (1.0 / spec.fc_merge as f64).sqrt()).expect("positive std");
        params.push(Tensor::from_fn(&[spec.head_dim, spec.fc_merge], |_| 0.1 * n.sample(&mut r)));
        params.push(Tensor::zeros(&[spec.head_dim]));
        Ok(GraspNet { spec, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        PARAM_NAMES
            .iter()
            .zip(&self.params)
            .map(|(n, t)| (n.to_string(), Tensor::new(t.shape(), t.data().to_vec()).expect("same shape")))
            .collect()
    }

    /// Replaces parameters from a named table; names and shapes must match.
    pub fn load_named(&mut self, table: &[(String, Tensor)]) -> Result<()> {
        if table.len() != PARAM_NAMES.len() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", PARAM_NAMES.len(), table.len())));
        }
        for ((name, t), (expect, p)) in table.iter().zip(PARAM_NAMES.iter().zip(&self.params)) {
            if name != expect || t.shape() != p.shape() {
                return Err(Error::Shape(format!("parameter {name} {:?} does not fit {expect} {:?}", t.shape(), p.shape())));
            }
        }
        for ((_, t), p) in table.iter().zip(self.params.iter_mut()) {
            *p = Tensor::new(t.shape(), t.data().to_vec())?;
        }
        Ok(())
    }

    /// Copies the convolution stack from `other`; shapes must agree.
    pub fn copy_conv_from(&mut self, other: &GraspNet) -> Result<()> {
        for i in 0..CONV_PARAMS {
            if self.params[i].shape() != other.params[i].shape() {
                return Err(Error::Transfer(format!(
                    "{} shape {:?} vs {:?}",
                    PARAM_NAMES[i],
                    self.params[i].shape(),
                    other.params[i].shape()
                )));
            }
            self.params[i] = Tensor::new(other.params[i].shape(), other.params[i].data().to_vec())?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad_mut();
            p.zero_grad();
        }
    }

    /// Forward pass over `n` images (`n·side²` values) and actions.
    pub fn forward(&self, images: &[f64], actions: &[f64], mode: Mode, r: &mut impl Rng) -> Result<(Tensor, Cache)> {
        let s = &self.spec;
        let side = s.image_side;
        if images.len() % (side * side) != 0 || images.is_empty() {
            return Err(Error::Shape(format!("{} image values for side {side}", images.len())));
        }
        let n = images.len() / (side * side);
        if actions.len() != n * s.action_dim {
            return Err(Error::Shape(format!("{} action values for {n} samples of {}", actions.len(), s.action_dim)));
        }
        let p = &self.params;
        let x = Tensor::new(&[n, 1, side, side], images.to_vec())?;
        let a1 = relu(&conv2d_forward(&x, &p[0], &p[1], s.conv[0].2, 0)?);
        let a2 = relu(&conv2d_forward(&a1, &p[2], &p[3], s.conv[1].2, 0)?);
        let a3 = relu(&conv2d_forward(&a2, &p[4], &p[5], s.conv[2].2, 0)?);
        let flat = a3.clone().reshape(&[n, s.flat_len()])?;
        let h_img = relu(&linear_forward(&flat, &p[6], &p[7])?);
        let act = Tensor::new(&[n, s.action_dim], actions.to_vec())?;
        let h_act = relu(&linear_forward(&act, &p[8], &p[9])?);
        let width = s.fc_image + s.fc_action;
        let mut cat = Vec::with_capacity(n * width);
        for i in 0..n {
            cat.extend_from_slice(&h_img.data()[i * s.fc_image..(i + 1) * s.fc_image]);
            cat.extend_from_slice(&h_act.data()[i * s.fc_action..(i + 1) * s.fc_action]);
        }
        let merged_in = Tensor::new(&[n, width], cat)?;
        let h_merge = relu(&linear_forward(&merged_in, &p[10], &p[11])?);
        let (dropped, mask) = dropout(&h_merge, DROPOUT_RATE, mode, r)?;
        let out = linear_forward(&dropped, &p[12], &p[13])?;
        out.check_finite("network output")?;
        let cache = Cache {
            x,
            actions: act,
            a1,
            a2,
            a3,
            flat,
            h_img,
            h_act,
            merged_in,
            h_merge,
            mask,
            dropped,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients for the head-output gradient `d_out`.
    pub fn backward(&mut self, cache: &Cache, d_out: &Tensor) -> Result<()> {
        let s = self.spec;
        let n = cache.x.shape()[0];
        let mut grads: Vec<Tensor> = Vec::with_capacity(PARAM_NAMES.len());
        let p = &self.params;

        let g_head = linear_backward(&cache.dropped, &p[12], &p[13], d_out)?;
        let d_merge = relu_backward(&cache.h_merge, &dropout_backward(&cache.mask, &g_head.input)?)?;
        let g_merge = linear_backward(&cache.merged_in, &p[10], &p[11], &d_merge)?;
        let width = s.fc_image + s.fc_action;
        let (mut d_img, mut d_act) = (Vec::with_capacity(n * s.fc_image), Vec::with_capacity(n * s.fc_action));
        for row in g_merge.input.data().chunks(width) {
            d_img.extend_from_slice(&row[..s.fc_image]);
            d_act.extend_from_slice(&row[s.fc_image..]);
        }
        let d_act = relu_backward(&cache.h_act, &Tensor::new(&[n, s.fc_action], d_act)?)?;
        let g_act = linear_backward(&cache.actions, &p[8], &p[9], &d_act)?;
        let d_img = relu_backward(&cache.h_img, &Tensor::new(&[n, s.fc_image], d_img)?)?;
        let g_img = linear_backward(&cache.flat, &p[6], &p[7], &d_img)?;
        let d_a3 = relu_backward(&cache.a3, &g_img.input.reshape(cache.a3.shape())?)?;
        let g3 = conv2d_backward(&cache.a2, &p[4], &p[5], &d_a3, s.conv[2].2, 0, true)?;
        let d_a2 = relu_backward(&cache.a2, g3.input.as_ref().expect("requested"))?;
        let g2 = conv2d_backward(&cache.a1, &p[2], &p[3], &d_a2, s.conv[1].2, 0, true)?;
        let d_a1 = relu_backward(&cache.a1, g2.input.as_ref().expect("requested"))?;
        let g1 = conv2d_backward(&cache.x, &p[0], &p[1], &d_a1, s.conv[0].2, 0, false)?;

        grads.extend([g1.filters, g1.bias, g2.filters, g2.bias, g3.filters, g3.bias]);
        grads.extend([g_img.weight, g_img.bias, g_act.weight, g_act.bias, g_merge.weight, g_merge.bias]);
        grads.extend([g_head.weight, g_head.bias]);
        for (param, g) in self.params.iter_mut().zip(&grads) {
            g.check_finite("parameter gradient")?;
            param.accumulate_grad(g.data())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_sizes() {
        let s = NetSpec::standard(3, 1);
        assert_eq!(s.feature_sides(), Some([30, 13, 6]));
        assert_eq!(s.flat_len(), 2304);
        // 416 + 12832 + 18496 + 295040 + 64 + 9280 + 65
        assert_eq!(s.param_count(), 336_193);
        assert_eq!(GraspNet::new(s, 0).unwrap().param_count(), 336_193);
        assert_eq!(NetSpec::standard(4, 8).param_count(), 336_193 - 65 + 520 + 16);
    }

    #[test]
    fn rejects_bad_specs_and_inputs() {
        let mut s = NetSpec::shrunken(3, 1);
        s.image_side = 8;
        assert!(GraspNet::new(s, 0).is_err());
        let net = GraspNet::new(NetSpec::shrunken(3, 1), 0).unwrap();
        assert!(net.forward(&[0.0; 32 * 32], &[0.0; 2], Mode::Eval, &mut rng(0)).is_err());
        assert!(net.forward(&[0.0; 100], &[0.0; 3], Mode::Eval, &mut rng(0)).is_err());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = GraspNet::new(NetSpec::shrunken(3, 1), 7).unwrap();
        let b = GraspNet::new(NetSpec::shrunken(3, 1), 7).unwrap();
        let c = GraspNet::new(NetSpec::shrunken(3, 1), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn named_table_round_trip() {
        let a = GraspNet::new(NetSpec::shrunken(3, 8), 1).unwrap();
        let mut b = GraspNet::new(NetSpec::shrunken(3, 8), 2).unwrap();
        b.load_named(&a.named_params()).unwrap();
        assert_eq!(a, b);
        let mut c = GraspNet::new(NetSpec::shrunken(3, 1), 2).unwrap();
        assert!(c.load_named(&a.named_params()).is_err());
    }
}
