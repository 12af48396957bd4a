use sleepformer_autodiff::{Real, Tape, Tensor, Var};

use super::{ModelConfig, ModelError, ModelParams};

/// Parameters registered on a tape, addressable by name.
pub struct ParamVars<'t, T: Real> {
    params: &'t ModelParams<T>,
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> ParamVars<'t, T> {
    /// Registers every tensor as a gradient-tracked leaf.
    pub fn register(tape: &'t Tape<T>, params: &'t ModelParams<T>) -> Self {
        let vars = params.tensors().iter().map(|t| tape.param(t.clone())).collect();
        Self { params, vars }
    }

    /// Registers every tensor as a constant (inference only).
    pub fn constants(tape: &'t Tape<T>, params: &'t ModelParams<T>) -> Self {
        let vars = params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        Self { params, vars }
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Result<Var<'t, T>, ModelError> {
        self.params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| ModelError::LayoutMismatch(format!("no parameter `{name}`")))
    }

    fn config(&self) -> &ModelConfig {
        self.params.config()
    }
}

pub struct ForwardOut<'t, T: Real> {
    /// `[B, classes]`
    pub logits: Var<'t, T>,
    /// `[B, classifier_in]`, the penultimate representation.
    pub features: Var<'t, T>,
    /// Shape after each pipeline stage, for inspection.
    pub trace: Vec<(&'static str, Vec<usize>)>,
    /// Row-softmaxed attention weights `[B, n, n]`, per block then per head.
    pub attention: Vec<Var<'t, T>>,
}

fn expect_shape<T: Real>(stage: &'static str, v: &Var<'_, T>, want: &[usize]) -> Result<(), ModelError> {
    let got = v.shape();
    if got != want {
        return Err(ModelError::Shape(format!("{stage}: expected {want:?}, got {got:?}")));
    }
    Ok(())
}

fn dense<'t, T: Real>(p: &ParamVars<'t, T>, name: &str, x: Var<'t, T>) -> Result<Var<'t, T>, ModelError> {
    Ok(x.matmul(p.get(&format!("{name}.w"))?)?.add(p.get(&format!("{name}.b"))?)?)
}

fn norm<'t, T: Real>(
    tape: &'t Tape<T>,
    p: &ParamVars<'t, T>,
    name: &str,
    x: Var<'t, T>,
) -> Result<Var<'t, T>, ModelError> {
    let (g, b) = if p.config().affine_norm {
        (p.get(&format!("{name}.g"))?, p.get(&format!("{name}.b"))?)
    } else {
        let d = p.config().model_dim;
        (tape.constant(Tensor::ones(&[d])), tape.constant(Tensor::zeros(&[d])))
    };
    Ok(x.layer_norm(g, b)?)
}

/// Scaled dot-product attention for `[B, n, d]` queries, keys and values:
/// `softmax(Q Kᵀ / √d_q) V`. Returns the output and the attention weights.
pub fn attention<'t, T: Real>(
    q: Var<'t, T>,
    k: Var<'t, T>,
    v: Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>), ModelError> {
    let dq = *q.shape().last().ok_or_else(|| ModelError::Shape("attention: scalar query".into()))?;
    let scores = q.bmm(k, true)?.scale(T::of(1.0 / (dq as f64).sqrt()));
    let weights = scores.softmax()?;
    Ok((weights.bmm(v, false)?, weights))
}

/// One attention head of block `b` applied to `x: [B, n, d]`.
fn head<'t, T: Real>(
    p: &ParamVars<'t, T>,
    b: usize,
    h: usize,
    x: Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>), ModelError> {
    let q = dense(p, &format!("block{b}.head{h}.q"), x)?;
    let k = dense(p, &format!("block{b}.head{h}.k"), x)?;
    let v = dense(p, &format!("block{b}.head{h}.v"), x)?;
    attention(q, k, v)
}

/// `Concat(head_1, …, head_H) W_O` for block `b`.
pub fn multi_head_attention<'t, T: Real>(
    tape: &'t Tape<T>,
    p: &ParamVars<'t, T>,
    b: usize,
    x: Var<'t, T>,
) -> Result<(Var<'t, T>, Vec<Var<'t, T>>), ModelError> {
    let mut outs = Vec::new();
    let mut weights = Vec::new();
    for h in 0..p.config().heads {
        let (o, w) = head(p, b, h, x)?;
        outs.push(o);
        weights.push(w);
    }
    let cat = if outs.len() == 1 { outs[0] } else { tape.concat(&outs)? };
    Ok((dense(p, &format!("block{b}.attn.o"), cat)?, weights))
}

/// Pre-norm residual block: `x + MHA(LN₁ x)`, then `x + MLP(LN₂ x)`.
pub fn encoder_block<'t, T: Real>(
    tape: &'t Tape<T>,
    p: &ParamVars<'t, T>,
    b: usize,
    x: Var<'t, T>,
) -> Result<(Var<'t, T>, Vec<Var<'t, T>>), ModelError> {
    let (a, weights) = multi_head_attention(tape, p, b, norm(tape, p, &format!("block{b}.ln1"), x)?)?;
    let x = x.add(a)?;
    let h = norm(tape, p, &format!("block{b}.ln2"), x)?;
    let h = dense(p, &format!("block{b}.mlp.fc1"), h)?.gelu();
    let h = dense(p, &format!("block{b}.mlp.fc2"), h)?;
    Ok((x.add(h)?, weights))
}

/// Full network on `[B, T, C]` raw epochs.
///
/// instance norm → patches `[B, n, P·C]` → patch encoder + positional table
/// → blocks → (final norm) → token mean → (feature head) → classifier.
pub fn forward<'t, T: Real>(
    tape: &'t Tape<T>,
    p: &ParamVars<'t, T>,
    input: Var<'t, T>,
) -> Result<ForwardOut<'t, T>, ModelError> {
    let cfg = p.config();
    let shape = input.shape();
    if shape.len() != 3 || shape[0] == 0 {
        return Err(ModelError::Shape(format!(
            "input: expected [B, {}, {}], got {shape:?}",
            cfg.samples_per_epoch(),
            cfg.channels
        )));
    }
    let bsz = shape[0];
    let (n, d) = (cfg.tokens(), cfg.model_dim);
    let mut trace = Vec::new();
    expect_shape("input", &input, &[bsz, cfg.samples_per_epoch(), cfg.channels])?;
    trace.push(("input", input.shape()));

    let x = input.instance_norm()?;
    let x = x.reshape(&[bsz, n, cfg.patch_width()])?;
    trace.push(("patches", x.shape()));

    let x = dense(p, "patch", x)?.add(p.get("pos")?)?;
    expect_shape("tokens", &x, &[bsz, n, d])?;
    trace.push(("tokens", x.shape()));

    let mut x = x;
    let mut attention = Vec::new();
    for b in 0..cfg.blocks {
        let (y, w) = encoder_block(tape, p, b, x)?;
        expect_shape("block", &y, &[bsz, n, d])?;
        x = y;
        attention.extend(w);
    }
    trace.push(("encoded", x.shape()));
    if cfg.final_norm {
        x = norm(tape, p, "final_ln", x)?;
    }
    let pooled = x.mean_axis(1)?;
    expect_shape("pooled", &pooled, &[bsz, d])?;
    trace.push(("pooled", pooled.shape()));

    let features = if cfg.feature_head { dense(p, "feature", pooled)?.gelu() } else { pooled };
    expect_shape("features", &features, &[bsz, cfg.classifier_in()])?;
    trace.push(("features", features.shape()));

    let logits = dense(p, "classifier", features)?;
    expect_shape("logits", &logits, &[bsz, cfg.classes])?;
    trace.push(("logits", logits.shape()));
    Ok(ForwardOut { logits, features, trace, attention })
}

/// Token view of one `[T, C]` epoch: `[n, P·C]`, token `t` holding rows
/// `[P·t, P·(t+1))` flattened time-major.
pub fn patchify<T: Real>(epoch: &Tensor<T>, patch_size: usize) -> Result<Tensor<T>, ModelError> {
    let s = epoch.shape();
    if s.len() != 2 || patch_size == 0 || !s[0].is_multiple_of(patch_size) {
        return Err(ModelError::Shape(format!("patchify: {s:?} with patch {patch_size}")));
    }
    Ok(epoch.clone().reshape(&[s[0] / patch_size, patch_size * s[1]])?)
}

pub fn unpatchify<T: Real>(tokens: &Tensor<T>, channels: usize) -> Result<Tensor<T>, ModelError> {
    let s = tokens.shape();
    if s.len() != 2 || channels == 0 || !s[1].is_multiple_of(channels) {
        return Err(ModelError::Shape(format!("unpatchify: {s:?} with {channels} channels")));
    }
    Ok(tokens.clone().reshape(&[s[0] * s[1] / channels, channels])?)
}

/// Index of the largest logit per row; ties go to the lowest class.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(k.max(1))
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Inference without gradient tracking: logits and features as tensors.
pub fn predict<T: Real>(params: &ModelParams<T>, inputs: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    let tape = Tape::new();
    let p = ParamVars::constants(&tape, params);
    let out = forward(&tape, &p, tape.constant(inputs.clone()))?;
    Ok((out.logits.to_tensor(), out.features.to_tensor()))
}
