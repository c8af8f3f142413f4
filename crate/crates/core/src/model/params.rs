//! The learnable tensor set, generic over what each slot holds: a
//! [`Tensor`] for parameters, gradients and optimizer moments, or a graph
//! [`Var`](crate::autodiff::Var) during a forward pass.

use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};
use crate::rng::{self, purpose};
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

macro_rules! param_group {
    ($(#[$meta:meta])* $name:ident { $($field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<T> {
            $(pub $field: T,)+
        }

        impl<T> $name<T> {
            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
                $(f(format!("{prefix}.{}", stringify!($field)), &self.$field);)+
            }

            fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut T)) {
                $(f(&mut self.$field);)+
            }

            fn map<'a, U>(&'a self, f: &mut dyn FnMut(&'a T) -> U) -> $name<U> {
                $name { $($field: f(&self.$field),)+ }
            }
        }
    };
}

param_group!(
    /// Q/K/V/O projections, stored `[in, out]`.
    Attention { q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b }
);
param_group!(FeedForward { w1, b1, w2, b2 });
param_group!(Norm { gain, bias });

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub self_attn: Attention<T>,
    pub self_norm: Norm<T>,
    pub ffn: FeedForward<T>,
    pub ffn_norm: Norm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<T> {
    pub self_attn: Attention<T>,
    pub self_norm: Norm<T>,
    pub cross_attn: Attention<T>,
    pub cross_norm: Norm<T>,
    pub ffn: FeedForward<T>,
    pub ffn_norm: Norm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    /// Shared by encoder input, decoder input and the output projection.
    pub token_embedding: T,
    pub positions: T,
    pub encoder: Vec<EncoderLayer<T>>,
    pub decoder: Vec<DecoderLayer<T>>,
    pub encoder_norm: Option<Norm<T>>,
    pub decoder_norm: Option<Norm<T>>,
}

pub type Parameters = Weights<Tensor>;

impl<T> Weights<T> {
    /// Visits every slot with its dotted name, in the canonical order used
    /// for initialization, optimizer state and checkpoints.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a T)) {
        f("token_embedding".into(), &self.token_embedding);
        f("positions".into(), &self.positions);
        for (i, layer) in self.encoder.iter().enumerate() {
            let p = format!("encoder.{i}");
            layer.self_attn.visit(&format!("{p}.self_attn"), f);
            layer.self_norm.visit(&format!("{p}.self_norm"), f);
            layer.ffn.visit(&format!("{p}.ffn"), f);
            layer.ffn_norm.visit(&format!("{p}.ffn_norm"), f);
        }
        for (i, layer) in self.decoder.iter().enumerate() {
            let p = format!("decoder.{i}");
            layer.self_attn.visit(&format!("{p}.self_attn"), f);
            layer.self_norm.visit(&format!("{p}.self_norm"), f);
            layer.cross_attn.visit(&format!("{p}.cross_attn"), f);
            layer.cross_norm.visit(&format!("{p}.cross_norm"), f);
            layer.ffn.visit(&format!("{p}.ffn"), f);
            layer.ffn_norm.visit(&format!("{p}.ffn_norm"), f);
        }
        if let Some(n) = &self.encoder_norm {
            n.visit("encoder_norm", f);
        }
        if let Some(n) = &self.decoder_norm {
            n.visit("decoder_norm", f);
        }
    }

    /// Same order as [`Weights::visit`].
    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut T)) {
        f(&mut self.token_embedding);
        f(&mut self.positions);
        for layer in &mut self.encoder {
            layer.self_attn.visit_mut(f);
            layer.self_norm.visit_mut(f);
            layer.ffn.visit_mut(f);
            layer.ffn_norm.visit_mut(f);
        }
        for layer in &mut self.decoder {
            layer.self_attn.visit_mut(f);
            layer.self_norm.visit_mut(f);
            layer.cross_attn.visit_mut(f);
            layer.cross_norm.visit_mut(f);
            layer.ffn.visit_mut(f);
            layer.ffn_norm.visit_mut(f);
        }
        if let Some(n) = &mut self.encoder_norm {
            n.visit_mut(f);
        }
        if let Some(n) = &mut self.decoder_norm {
            n.visit_mut(f);
        }
    }

    pub fn map<'a, U>(&'a self, f: &mut dyn FnMut(&'a T) -> U) -> Weights<U> {
        Weights {
            token_embedding: f(&self.token_embedding),
            positions: f(&self.positions),
            encoder: self
                .encoder
                .iter()
                .map(|l| EncoderLayer {
                    self_attn: l.self_attn.map(f),
                    self_norm: l.self_norm.map(f),
                    ffn: l.ffn.map(f),
                    ffn_norm: l.ffn_norm.map(f),
                })
                .collect(),
            decoder: self
                .decoder
                .iter()
                .map(|l| DecoderLayer {
                    self_attn: l.self_attn.map(f),
                    self_norm: l.self_norm.map(f),
                    cross_attn: l.cross_attn.map(f),
                    cross_norm: l.cross_norm.map(f),
                    ffn: l.ffn.map(f),
                    ffn_norm: l.ffn_norm.map(f),
                })
                .collect(),
            encoder_norm: self.encoder_norm.as_ref().map(|n| n.map(f)),
            decoder_norm: self.decoder_norm.as_ref().map(|n| n.map(f)),
        }
    }

    pub fn slots(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.push(t));
        out
    }

    pub fn slots_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        self.visit_mut(&mut |t| out.push(t));
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |name, _| out.push(name));
        out
    }
}

fn attention_shapes(d: usize) -> Attention<Vec<usize>> {
    Attention {
        q_w: vec![d, d],
        q_b: vec![d],
        k_w: vec![d, d],
        k_b: vec![d],
        v_w: vec![d, d],
        v_b: vec![d],
        o_w: vec![d, d],
        o_b: vec![d],
    }
}

fn norm_shapes(d: usize) -> Norm<Vec<usize>> {
    Norm {
        gain: vec![d],
        bias: vec![d],
    }
}

/// Tensor shapes for `cfg`, in the canonical layout.
pub fn shapes(cfg: &ModelConfig) -> Weights<Vec<usize>> {
    let (d, f) = (cfg.d_model, cfg.d_ffn);
    let ffn = FeedForward {
        w1: vec![d, f],
        b1: vec![f],
        w2: vec![f, d],
        b2: vec![d],
    };
    Weights {
        token_embedding: vec![cfg.vocab_size, d],
        positions: vec![cfg.max_positions, d],
        encoder: (0..cfg.enc_layers)
            .map(|_| EncoderLayer {
                self_attn: attention_shapes(d),
                self_norm: norm_shapes(d),
                ffn: ffn.clone(),
                ffn_norm: norm_shapes(d),
            })
            .collect(),
        decoder: (0..cfg.dec_layers)
            .map(|_| DecoderLayer {
                self_attn: attention_shapes(d),
                self_norm: norm_shapes(d),
                cross_attn: attention_shapes(d),
                cross_norm: norm_shapes(d),
                ffn: ffn.clone(),
                ffn_norm: norm_shapes(d),
            })
            .collect(),
        encoder_norm: cfg.final_layernorm.then(|| norm_shapes(d)),
        decoder_norm: cfg.final_layernorm.then(|| norm_shapes(d)),
    }
}

impl Parameters {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        shapes(cfg).map(&mut |s| Tensor::zeros(s))
    }

    pub fn zeros_like(&self) -> Self {
        self.map(&mut |t| Tensor::zeros(t.shape()))
    }

    pub fn num_scalars(&self) -> u64 {
        self.slots().iter().map(|t| t.len() as u64).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slots().iter().all(|t| t.is_finite())
    }

    /// `self += other * scale`, slot by slot.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        for (a, b) in self.slots_mut().into_iter().zip(other.slots()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y * scale;
            }
        }
    }
}

/// Normal(0, 0.02) matrices and embeddings, unit norm gains, zero biases.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<Parameters, ModelError> {
    init_params_with_std(cfg, seed, INIT_STD)
}

pub fn init_params_with_std(cfg: &ModelConfig, seed: u64, std: f64) -> Result<Parameters, ModelError> {
    cfg.validate()?;
    let mut rng = rng::stream(rng::derive_seed(seed, purpose::INIT), 0);
    let normal = Normal::new(0.0, std).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
    let shapes = shapes(cfg);
    let mut names = shapes.names().into_iter();
    Ok(shapes.map(&mut |shape| {
        let name = names.next().expect("one name per slot");
        if name.ends_with(".gain") {
            Tensor::full(shape, 1.0)
        } else if shape.len() == 1 {
            Tensor::zeros(shape)
        } else {
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| normal.sample(&mut rng)).collect())
        }
    }))
}
