use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::tensor::{InitScheme, Rng, Tensor};

/// Role of a named tensor inside a bundle; decides its shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// H x I
    Input,
    /// H x H
    Hidden,
    /// H
    Bias,
}

impl Slot {
    pub fn of(name: &str) -> Slot {
        if name.starts_with("W_i") {
            Slot::Input
        } else if name.starts_with("W_") {
            Slot::Hidden
        } else {
            Slot::Bias
        }
    }

    pub fn shape(self, input: usize, hidden: usize) -> Vec<usize> {
        match self {
            Slot::Input => vec![hidden, input],
            Slot::Hidden => vec![hidden, hidden],
            Slot::Bias => vec![hidden],
        }
    }

    pub fn count(self, input: usize, hidden: usize) -> usize {
        self.shape(input, hidden).iter().product()
    }
}

macro_rules! param_bundle {
    (
        $(#[$meta:meta])*
        $name:ident { $($field:ident),+ $(,)? } $(optional { $($opt:ident),+ $(,)? })?
    ) => {
        $(#[$meta])*
        #[allow(non_snake_case)]
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name<T = Tensor> {
            $(pub $field: T,)+
            $($(
                #[serde(default = "Option::default", skip_serializing_if = "Option::is_none")]
                pub $opt: Option<T>,
            )+)?
        }

        impl<T> $name<T> {
            /// Names of the always-present members, in declaration order.
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),+];

            pub fn try_map<U, E>(
                &self,
                mut f: impl FnMut(&'static str, &T) -> std::result::Result<U, E>,
            ) -> std::result::Result<$name<U>, E> {
                Ok($name {
                    $($field: f(stringify!($field), &self.$field)?,)+
                    $($($opt: match &self.$opt {
                        Some(v) => Some(f(stringify!($opt), v)?),
                        None => None,
                    },)+)?
                })
            }

            pub fn map<U>(&self, mut f: impl FnMut(&'static str, &T) -> U) -> $name<U> {
                match self.try_map(|n, v| Ok::<U, std::convert::Infallible>(f(n, v))) {
                    Ok(m) => m,
                    Err(never) => match never {},
                }
            }

            /// Visits every present member in declaration order.
            pub fn for_each<'s>(&'s self, mut f: impl FnMut(&'static str, &'s T)) {
                $(f(stringify!($field), &self.$field);)+
                $($(if let Some(v) = &self.$opt { f(stringify!($opt), v); })+)?
            }

            pub fn for_each_mut(&mut self, mut f: impl FnMut(&'static str, &mut T)) {
                $(f(stringify!($field), &mut self.$field);)+
                $($(if let Some(v) = &mut self.$opt { f(stringify!($opt), v); })+)?
            }
        }

        impl $name<Tensor> {
            /// Checks every member against the shape its name implies.
            pub fn validate(&self, input: usize, hidden: usize) -> Result<()> {
                let mut bad = None;
                self.for_each(|n, t| {
                    let want = Slot::of(n).shape(input, hidden);
                    if bad.is_none() && t.shape() != want.as_slice() {
                        bad = Some(format!("{n}: expected {want:?}, got {:?}", t.shape()));
                    }
                });
                match bad {
                    Some(msg) => dim_err(msg),
                    None => Ok(()),
                }
            }

            /// Biases as `H x 1` columns, the layout the kernels consume.
            pub fn as_columns(&self) -> Result<Self> {
                self.try_map(|_, t| if t.rank() == 1 { t.reshape([t.len(), 1]) } else { Ok(t.clone()) })
            }

            /// Trainable scalar count of the members present.
            pub fn scalar_count(&self) -> usize {
                let mut n = 0;
                self.for_each(|_, t| n += t.len());
                n
            }

            /// Independent uniform draws in ±1/sqrt(H) for every member.
            pub fn random(rng: &mut Rng, input: usize, hidden: usize) -> Result<Self> {
                let scheme = InitScheme::ScaledUniform { fan_in: hidden };
                Ok($name {
                    $($field: Tensor::rand_init(rng, Slot::of(stringify!($field)).shape(input, hidden), scheme)?,)+
                    $($($opt: Some(Tensor::rand_init(rng, vec![hidden], scheme)?),)+)?
                })
            }

            /// All-zero bundle.
            pub fn zeros(input: usize, hidden: usize) -> Result<Self> {
                Ok($name {
                    $($field: Tensor::zeros(Slot::of(stringify!($field)).shape(input, hidden))?,)+
                    $($($opt: Some(Tensor::zeros(vec![hidden])?),)+)?
                })
            }
        }
    };
}

param_bundle! {
    /// Forward BRU weights. `p_logits` absent means the prior is frozen at 0.5.
    BruParams { W_iz, W_hz, b_z, W_ir, W_hr, b_r, W_ih, b_ih, W_hh, b_hh } optional { p_logits }
}

param_bundle! {
    /// Layer-wise backward smoother.
    SmootherParams { W_is, W_hs, b_is, b_hs, W_hhb, b_hhb }
}

param_bundle! {
    GruParams { W_iz, W_hz, b_z, W_ir, W_hr, b_r, W_in, b_in, W_hn, b_hn }
}

param_bundle! {
    /// Gate blocks: input `i`, forget `f`, cell candidate `g`, output `o`.
    LstmParams { W_ii, W_hi, b_i, W_if, W_hf, b_f, W_ig, W_hg, b_g, W_io, W_ho, b_o }
}

param_bundle! {
    /// MGU and Li-GRU: one sigmoid gate plus a tanh candidate.
    SingleGateParams { W_iz, W_hz, b_z, W_in, b_in, W_hn, b_hn }
}

impl BruParams<Tensor> {
    /// Drops the trainable prior.
    pub fn frozen(mut self) -> Self {
        self.p_logits = None;
        self
    }
}
