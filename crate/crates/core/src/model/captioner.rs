use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{lstm_step, LstmState, StateVars};
use super::{ModelKind, Sentence, VideoFeatures};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tape, Tensor, Var};

pub(crate) const EMBEDDING: &str = "embedding";
pub(crate) const W_WORD: &str = "lstm.w_word";
pub(crate) const W_VIDEO: &str = "lstm.w_video";
pub(crate) const A_CONTEXT: &str = "lstm.a_context";
pub(crate) const U: &str = "lstm.u";
pub(crate) const B: &str = "lstm.b";
pub(crate) const ATT_CLIP: &str = "attn.clip";
pub(crate) const ATT_HIDDEN: &str = "attn.hidden";
pub(crate) const ATT_BIAS: &str = "attn.bias";
pub(crate) const ATT_SCORE: &str = "attn.score";
pub(crate) const OUT_W: &str = "out.w";
pub(crate) const OUT_B: &str = "out.b";

/// Sizes shared by every tensor of a captioner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub video_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Width of the attention scorer (SA only).
    pub attention_dim: usize,
    pub vocab_size: usize,
}

impl ModelDims {
    /// Desk-scale sizes used by the CLI and tests.
    pub fn compact(video_dim: usize, vocab_size: usize, hidden_dim: usize) -> Self {
        Self {
            video_dim,
            embed_dim: hidden_dim,
            hidden_dim,
            attention_dim: hidden_dim.div_ceil(2).max(1),
            vocab_size,
        }
    }

    /// Sizes of the original captioners: 500 for S2VT, 1024 for SA.
    pub fn full_scale(kind: ModelKind, video_dim: usize, vocab_size: usize) -> Self {
        let width = match kind {
            ModelKind::S2vt => 500,
            ModelKind::Sa => 1024,
        };
        Self {
            video_dim,
            embed_dim: width,
            hidden_dim: width,
            attention_dim: width / 2,
            vocab_size,
        }
    }

    fn validate(&self) -> Result<()> {
        let d = [
            self.video_dim,
            self.embed_dim,
            self.hidden_dim,
            self.attention_dim,
            self.vocab_size,
        ];
        if d.contains(&0) {
            return Err(Error::InvalidArgument(format!("all model dims must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

/// Begin-of-sentence and terminator indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub bos: usize,
    pub eos: usize,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self { bos: 0, eos: 1 }
    }
}

/// Attention weights over clips and the resulting convex combination.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionContext {
    pub alpha: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Parameters and configuration of one captioner.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionModel {
    kind: ModelKind,
    dims: ModelDims,
    tokens: SpecialTokens,
    params: ParamSet,
}

fn expected_shapes(kind: ModelKind, d: &ModelDims) -> Vec<(&'static str, Vec<usize>)> {
    let g = 4 * d.hidden_dim;
    let mut shapes = vec![
        (EMBEDDING, vec![d.vocab_size, d.embed_dim]),
        (W_WORD, vec![g, d.embed_dim]),
    ];
    match kind {
        ModelKind::S2vt => shapes.push((W_VIDEO, vec![g, d.video_dim])),
        ModelKind::Sa => shapes.push((A_CONTEXT, vec![g, d.video_dim])),
    }
    shapes.push((U, vec![g, d.hidden_dim]));
    shapes.push((B, vec![g]));
    if kind == ModelKind::Sa {
        shapes.push((ATT_CLIP, vec![d.video_dim, d.attention_dim]));
        shapes.push((ATT_HIDDEN, vec![d.attention_dim, d.hidden_dim]));
        shapes.push((ATT_BIAS, vec![d.attention_dim]));
        shapes.push((ATT_SCORE, vec![d.attention_dim]));
    }
    shapes.push((OUT_W, vec![d.vocab_size, d.hidden_dim]));
    shapes.push((OUT_B, vec![d.vocab_size]));
    shapes
}

impl CaptionModel {
    /// Small uniform weights, zero biases except a forget-gate bias of 1.
    pub fn init<R: Rng + ?Sized>(
        kind: ModelKind,
        dims: ModelDims,
        tokens: SpecialTokens,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        let h = dims.hidden_dim;
        let mut params = ParamSet::new();
        for (name, shape) in expected_shapes(kind, &dims) {
            let t = match name {
                B => {
                    let mut b = vec![0.0; 4 * h];
                    b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                    Tensor::vector(b)?
                }
                ATT_BIAS | OUT_B => Tensor::zeros(&shape),
                _ => Tensor::uniform(&shape, 0.08, rng),
            };
            params.push(name, t);
        }
        Self::from_params(kind, dims, tokens, params)
    }

    /// Every tensor, biases included, uniform in `[-scale, scale]`.
    pub fn init_uniform<R: Rng + ?Sized>(
        kind: ModelKind,
        dims: ModelDims,
        tokens: SpecialTokens,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        let mut params = ParamSet::new();
        for (name, shape) in expected_shapes(kind, &dims) {
            params.push(name, Tensor::uniform(&shape, scale, rng));
        }
        Self::from_params(kind, dims, tokens, params)
    }

    pub fn from_params(
        kind: ModelKind,
        dims: ModelDims,
        tokens: SpecialTokens,
        params: ParamSet,
    ) -> Result<Self> {
        dims.validate()?;
        if tokens.bos >= dims.vocab_size || tokens.eos >= dims.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "special tokens {tokens:?} outside vocabulary of {}",
                dims.vocab_size
            )));
        }
        let shapes = expected_shapes(kind, &dims);
        if shapes.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{kind} model needs {} tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, shape), (got_name, t)) in shapes.iter().zip(params.iter()) {
            if *name != got_name {
                return Err(Error::InvalidArgument(format!(
                    "expected tensor {name}, found {got_name}"
                )));
            }
            if t.shape() != shape.as_slice() {
                return Err(Error::dim("caption_model", shape, t.shape()));
            }
        }
        Ok(Self {
            kind,
            dims,
            tokens,
            params,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn tokens(&self) -> SpecialTokens {
        self.tokens
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    fn require(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::WrongKind {
                expected: kind.name(),
                found: self.kind.name(),
            });
        }
        Ok(())
    }

    /// Teacher-forced `-ln p(S | V)`, terminator step included.
    pub fn sentence_nll(&self, video: &VideoFeatures, sentence: &Sentence) -> Result<f64> {
        let mut tape = Tape::new();
        let mut run = Runner::new(self, &mut tape, false);
        let loss = run.nll(video, sentence)?.0;
        Ok(tape.value(loss).item())
    }

    /// Per-step cross-entropies of the teacher-forced unrolling.
    pub fn step_losses(&self, video: &VideoFeatures, sentence: &Sentence) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut run = Runner::new(self, &mut tape, false);
        let steps = run.nll(video, sentence)?.1;
        Ok(steps.iter().map(|v| tape.value(*v).item()).collect())
    }

    /// Loss and one gradient per parameter tensor, in parameter order.
    pub fn nll_with_grads(
        &self,
        video: &VideoFeatures,
        sentence: &Sentence,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let mut run = Runner::new(self, &mut tape, true);
        let leaves = run.p.all.clone();
        let loss = run.nll(video, sentence)?.0;
        let grads = tape.backward(loss)?;
        let value = tape.value(loss).item();
        Ok((value, leaves.iter().map(|v| grads.get(*v)).collect()))
    }

    /// Loss summed over the steps where `mask` is set, with gradients.
    /// `targets` is a padded target row (content, terminator, then padding);
    /// masked-out steps add nothing to the loss or the gradients.
    pub fn masked_nll_with_grads(
        &self,
        video: &VideoFeatures,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<(f64, Vec<Tensor>)> {
        if targets.len() != mask.len() {
            return Err(Error::dim("masked_nll", &[targets.len()], &[mask.len()]));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Empty { op: "masked_nll" });
        }
        let mut tape = Tape::new();
        let mut run = Runner::new(self, &mut tape, true);
        let leaves = run.p.all.clone();
        let steps = run.step_targets(video, targets)?;
        let kept: Vec<Var> = steps
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .collect();
        let loss = tape.add_n(&kept)?;
        let grads = tape.backward(loss)?;
        let value = tape.value(loss).item();
        Ok((value, leaves.iter().map(|v| grads.get(*v)).collect()))
    }

    /// Builds the loss on an external tape from caller-provided parameter
    /// leaves (in parameter order); used for gradient checking.
    pub fn nll_on_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        video: &VideoFeatures,
        sentence: &Sentence,
    ) -> Result<Var> {
        let mut run = Runner::with_vars(self, tape, params.to_vec());
        Ok(run.nll(video, sentence)?.0)
    }

    /// Runs the encoder over all clips from the zero state.
    pub fn encode_video_s2vt(&self, video: &VideoFeatures) -> Result<LstmState> {
        self.require(ModelKind::S2vt)?;
        let mut tape = Tape::new();
        let mut run = Runner::new(self, &mut tape, false);
        run.load_video(video)?;
        let s = run.encode()?;
        Ok(s.read(&tape))
    }

    /// Soft attention of hidden state `h_prev` over the clips.
    pub fn attend(&self, h_prev: &[f64], video: &VideoFeatures) -> Result<AttentionContext> {
        self.require(ModelKind::Sa)?;
        let mut tape = Tape::new();
        let mut run = Runner::new(self, &mut tape, false);
        run.load_video(video)?;
        let h = run.tape.constant(Tensor::vector(h_prev.to_vec())?);
        let (alpha, phi) = run.attend(h)?;
        Ok(AttentionContext {
            alpha: tape.value(alpha).to_vec(),
            phi: tape.value(phi).to_vec(),
        })
    }

    /// The candidate-memory rows of the context embedding, `A_c phi(V)`.
    pub fn embedded_context(&self, h_prev: &[f64], video: &VideoFeatures) -> Result<Vec<f64>> {
        let ctx = self.attend(h_prev, video)?;
        let a = self.params.expect(A_CONTEXT)?;
        let h = self.dims.hidden_dim;
        let mut tape = Tape::new();
        let a_c = tape.constant(a.row_range(3 * h, h)?);
        let phi = tape.constant(Tensor::vector(ctx.phi)?);
        let out = tape.matmul(a_c, phi)?;
        Ok(tape.value(out).to_vec())
    }

    /// Decoder state before the first word.
    pub fn initial_state(&self, video: &VideoFeatures) -> Result<LstmState> {
        match self.kind {
            ModelKind::S2vt => self.encode_video_s2vt(video),
            ModelKind::Sa => {
                check_video_dim(self, video)?;
                Ok(LstmState::zeros(self.dims.hidden_dim))
            }
        }
    }

    /// One decoding step: consumes `prev_word`, returns the next-word
    /// distribution and the new state. The video is read only by SA.
    pub fn decode_step(
        &self,
        prev_word: usize,
        state: &LstmState,
        video: &VideoFeatures,
    ) -> Result<(Vec<f64>, LstmState)> {
        let mut tape = Tape::new();
        let mut run = Runner::new(self, &mut tape, false);
        if self.kind == ModelKind::Sa {
            run.load_video(video)?;
        }
        if state.hidden() != self.dims.hidden_dim || state.c.len() != self.dims.hidden_dim {
            return Err(Error::dim("decode_step", &[self.dims.hidden_dim], &[state.hidden()]));
        }
        let s = StateVars::constant(run.tape, state)?;
        let (dist, next) = run.step(prev_word, s)?;
        Ok((tape.value(dist).to_vec(), next.read(&tape)))
    }
}

fn check_video_dim(model: &CaptionModel, video: &VideoFeatures) -> Result<()> {
    if video.dim() != model.dims.video_dim {
        return Err(Error::dim(
            "video_features",
            &[model.dims.video_dim],
            &[video.dim()],
        ));
    }
    Ok(())
}

/// Parameter handles resolved by name.
pub(crate) struct Bound {
    pub all: Vec<Var>,
    embedding: Var,
    w_word: Var,
    w_video: Var,
    u: Var,
    b: Var,
    attn: Option<[Var; 4]>,
    out_w: Var,
    out_b: Var,
}

impl Bound {
    fn resolve(model: &CaptionModel, all: Vec<Var>) -> Self {
        let at = |name: &str| all[model.params.index_of(name).expect("validated layout")];
        let w_video = match model.kind {
            ModelKind::S2vt => at(W_VIDEO),
            ModelKind::Sa => at(A_CONTEXT),
        };
        let attn = (model.kind == ModelKind::Sa)
            .then(|| [at(ATT_CLIP), at(ATT_HIDDEN), at(ATT_BIAS), at(ATT_SCORE)]);
        Self {
            embedding: at(EMBEDDING),
            w_word: at(W_WORD),
            w_video,
            u: at(U),
            b: at(B),
            attn,
            out_w: at(OUT_W),
            out_b: at(OUT_B),
            all,
        }
    }
}

struct VideoVars {
    clips: Var,
    clips_t: Var,
    /// `clips * attn.clip + attn.bias`, shared across decoding steps.
    proj: Option<Var>,
    n: usize,
}

/// Unrolls a captioner on a tape.
pub(crate) struct Runner<'m, 't> {
    model: &'m CaptionModel,
    pub tape: &'t mut Tape,
    pub p: Bound,
    video: Option<VideoVars>,
}

impl<'m, 't> Runner<'m, 't> {
    pub fn new(model: &'m CaptionModel, tape: &'t mut Tape, grad: bool) -> Self {
        let all = model.params.bind(tape, grad);
        Self::with_vars(model, tape, all)
    }

    pub fn with_vars(model: &'m CaptionModel, tape: &'t mut Tape, all: Vec<Var>) -> Self {
        let p = Bound::resolve(model, all);
        Self {
            model,
            tape,
            p,
            video: None,
        }
    }

    pub fn load_video(&mut self, video: &VideoFeatures) -> Result<()> {
        check_video_dim(self.model, video)?;
        let clips = self.tape.constant(video.as_tensor().clone());
        let clips_t = self.tape.constant(video.as_tensor().transpose()?);
        let proj = match self.p.attn {
            Some([att_clip, _, att_bias, _]) => {
                let m = self.tape.matmul(clips, att_clip)?;
                Some(self.tape.add(m, att_bias)?)
            }
            None => None,
        };
        self.video = Some(VideoVars {
            clips,
            clips_t,
            proj,
            n: video.len(),
        });
        Ok(())
    }

    fn zero_state(&mut self) -> StateVars {
        let h = self.model.dims.hidden_dim;
        StateVars {
            h: self.tape.constant(Tensor::zeros(&[h])),
            c: self.tape.constant(Tensor::zeros(&[h])),
        }
    }

    pub fn encode(&mut self) -> Result<StateVars> {
        let v = self.video.as_ref().ok_or(Error::Empty { op: "encode" })?;
        let (clips, n) = (v.clips, v.n);
        let mut s = self.zero_state();
        for k in 0..n {
            let x = self.tape.row(clips, k)?;
            s = lstm_step(
                self.tape,
                &[(self.p.w_video, x)],
                self.p.u,
                self.p.b,
                s,
                self.model.dims.hidden_dim,
            )?;
        }
        Ok(s)
    }

    pub fn initial(&mut self) -> Result<StateVars> {
        match self.model.kind {
            ModelKind::S2vt => self.encode(),
            ModelKind::Sa => Ok(self.zero_state()),
        }
    }

    /// Returns `(alpha, phi)`.
    pub fn attend(&mut self, h: Var) -> Result<(Var, Var)> {
        let [_, att_hidden, _, att_score] = self.p.attn.ok_or(Error::WrongKind {
            expected: "sa",
            found: "s2vt",
        })?;
        let v = self.video.as_ref().ok_or(Error::Empty { op: "attend" })?;
        let (proj, clips_t) = (v.proj.expect("sa video projection"), v.clips_t);
        let hq = self.tape.matmul(att_hidden, h)?;
        let pre = self.tape.add(proj, hq)?;
        let act = self.tape.tanh(pre)?;
        let scores = self.tape.matmul(act, att_score)?;
        let alpha = self.tape.softmax(scores)?;
        let phi = self.tape.matmul(clips_t, alpha)?;
        Ok((alpha, phi))
    }

    /// Returns the next-word distribution and the new state.
    pub fn step(&mut self, prev_word: usize, state: StateVars) -> Result<(Var, StateVars)> {
        let hidden = self.model.dims.hidden_dim;
        let word = self.tape.row(self.p.embedding, prev_word)?;
        let next = match self.model.kind {
            ModelKind::S2vt => lstm_step(
                self.tape,
                &[(self.p.w_word, word)],
                self.p.u,
                self.p.b,
                state,
                hidden,
            )?,
            ModelKind::Sa => {
                let (_, phi) = self.attend(state.h)?;
                lstm_step(
                    self.tape,
                    &[(self.p.w_word, word), (self.p.w_video, phi)],
                    self.p.u,
                    self.p.b,
                    state,
                    hidden,
                )?
            }
        };
        let logits = self.tape.matmul(self.p.out_w, next.h)?;
        let logits = self.tape.add(logits, self.p.out_b)?;
        let dist = self.tape.softmax(logits)?;
        Ok((dist, next))
    }

    /// Total loss and the per-step losses.
    pub fn nll(&mut self, video: &VideoFeatures, sentence: &Sentence) -> Result<(Var, Vec<Var>)> {
        let mut targets = sentence.tokens().to_vec();
        targets.push(self.model.tokens.eos);
        let steps = self.step_targets(video, &targets)?;
        let total = self.tape.add_n(&steps)?;
        Ok((total, steps))
    }

    /// Cross-entropy node for each target, teacher-forced from `bos`.
    pub fn step_targets(&mut self, video: &VideoFeatures, targets: &[usize]) -> Result<Vec<Var>> {
        self.load_video(video)?;
        let mut state = self.initial()?;
        let mut prev = self.model.tokens.bos;
        let mut steps = Vec::with_capacity(targets.len());
        for &target in targets {
            let (dist, next) = self.step(prev, state)?;
            steps.push(self.tape.cross_entropy(dist, target)?);
            state = next;
            prev = target;
        }
        Ok(steps)
    }
}
