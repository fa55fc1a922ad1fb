use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::brain::glorot;
use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::SeededRng;

const LN_EPS: f64 = 1e-5;

/// How encoded phenotypes are combined with graph features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Graph features only.
    None,
    /// `LN(ReLU(H + P′))`.
    Add,
    /// `LN(ReLU([H‖P′] W + b))`.
    Concat,
    /// Per-node softmax over two scores `[H‖P′] W_att`, then the weighted sum.
    Attention,
    /// Elementwise sigmoid gate between `H` and `P′`.
    #[default]
    Gated,
}

/// Phenotype projection plus the mode-specific mixing block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionLayer {
    pub mode: FusionMode,
    pub dim: usize,
    pub pheno_dim: usize,
    /// `D_p × F` projection and its `1 × F` bias.
    pub encoder_weight: ParamId,
    pub encoder_bias: ParamId,
    /// `2F × F` (gated, concat) or `2F × 2` (attention).
    pub mix_weight: Option<ParamId>,
    pub mix_bias: Option<ParamId>,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundFusion {
    pub encoder_weight: Var,
    pub encoder_bias: Var,
    pub mix_weight: Option<Var>,
    pub mix_bias: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    pub out: Var,
    pub projected: Option<Var>,
    /// Gate `g` in gated mode, per-node mixing weights in attention mode.
    pub gate: Option<Var>,
}

impl FusionLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        mode: FusionMode,
        dim: usize,
        pheno_dim: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let encoder_weight = store.add(
            format!("{name}.enc_w"),
            glorot(rng, pheno_dim.max(1), dim, pheno_dim, dim),
        );
        let encoder_bias = store.add(format!("{name}.enc_b"), Tensor::zeros(1, dim));
        let mix_cols = match mode {
            FusionMode::Gated | FusionMode::Concat => Some(dim),
            FusionMode::Attention => Some(2),
            FusionMode::None | FusionMode::Add => None,
        };
        let (mix_weight, mix_bias) = match mix_cols {
            Some(c) => (
                Some(store.add(format!("{name}.mix_w"), glorot(rng, 2 * dim, c, 2 * dim, c))),
                Some(store.add(format!("{name}.mix_b"), Tensor::zeros(1, c))),
            ),
            None => (None, None),
        };
        FusionLayer {
            mode,
            dim,
            pheno_dim,
            encoder_weight,
            encoder_bias,
            mix_weight,
            mix_bias,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundFusion {
        BoundFusion {
            encoder_weight: tape.param(store, self.encoder_weight),
            encoder_bias: tape.param(store, self.encoder_bias),
            mix_weight: self.mix_weight.map(|w| tape.param(store, w)),
            mix_bias: self.mix_bias.map(|b| tape.param(store, b)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundFusion, h: Var, pheno: Var) -> Result<FusionOutput> {
        if self.mode == FusionMode::None {
            return Ok(FusionOutput {
                out: h,
                projected: None,
                gate: None,
            });
        }
        let pw = tape.matmul(pheno, p.encoder_weight)?;
        let pp = tape.add_row(pw, p.encoder_bias)?;
        let (mixed, gate) = match self.mode {
            FusionMode::Add => (tape.add(h, pp)?, None),
            FusionMode::Concat => {
                let cat = tape.hconcat(&[h, pp])?;
                (self.affine(tape, p, cat)?, None)
            }
            FusionMode::Gated => {
                let cat = tape.hconcat(&[h, pp])?;
                let pre = self.affine(tape, p, cat)?;
                let g = tape.sigmoid(pre);
                let gh = tape.mul(g, h)?;
                let one_minus = {
                    let neg = tape.scale(g, -1.0);
                    tape.add_scalar(neg, 1.0)
                };
                let gp = tape.mul(one_minus, pp)?;
                (tape.add(gh, gp)?, Some(g))
            }
            FusionMode::Attention => {
                let cat = tape.hconcat(&[h, pp])?;
                let scores = self.affine(tape, p, cat)?;
                let alpha = tape.softmax_rows(scores);
                let pick_h = tape.constant(&Tensor::column_vector(&[1.0, 0.0]));
                let pick_p = tape.constant(&Tensor::column_vector(&[0.0, 1.0]));
                let ah = tape.matmul(alpha, pick_h)?;
                let ap = tape.matmul(alpha, pick_p)?;
                let wh = tape.mul_col(h, ah)?;
                let wp = tape.mul_col(pp, ap)?;
                (tape.add(wh, wp)?, Some(alpha))
            }
            FusionMode::None => unreachable!(),
        };
        let act = tape.relu(mixed);
        let out = tape.layer_norm_rows(act, LN_EPS);
        Ok(FusionOutput {
            out,
            projected: Some(pp),
            gate,
        })
    }

    fn affine(&self, tape: &mut Tape, p: &BoundFusion, x: Var) -> Result<Var> {
        let w = p.mix_weight.expect("mixing weight bound for this mode");
        let b = p.mix_bias.expect("mixing bias bound for this mode");
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}
