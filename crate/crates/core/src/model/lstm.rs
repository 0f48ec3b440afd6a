use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Hidden and memory vectors of an LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.h.len()
    }
}

/// State handles on a tape.
#[derive(Clone, Copy, Debug)]
pub(crate) struct StateVars {
    pub h: Var,
    pub c: Var,
}

impl StateVars {
    pub fn constant(tape: &mut Tape, state: &LstmState) -> Result<Self> {
        Ok(Self {
            h: tape.constant(Tensor::vector(state.h.clone())?),
            c: tape.constant(Tensor::vector(state.c.clone())?),
        })
    }

    pub fn read(&self, tape: &Tape) -> LstmState {
        LstmState {
            h: tape.value(self.h).to_vec(),
            c: tape.value(self.c).to_vec(),
        }
    }
}

/// One LSTM update. Gate rows are stacked as `[input, forget, output, candidate]`,
/// each `hidden` long; every `(weight, x)` pair adds `weight * x` to the
/// pre-activation `U h + b`.
pub(crate) fn lstm_step(
    tape: &mut Tape,
    inputs: &[(Var, Var)],
    u: Var,
    b: Var,
    state: StateVars,
    hidden: usize,
) -> Result<StateVars> {
    let uh = tape.matmul(u, state.h)?;
    let mut pre = tape.add(uh, b)?;
    for &(w, x) in inputs {
        let wx = tape.matmul(w, x)?;
        pre = tape.add(pre, wx)?;
    }
    let i_pre = tape.slice(pre, 0, hidden)?;
    let f_pre = tape.slice(pre, hidden, hidden)?;
    let o_pre = tape.slice(pre, 2 * hidden, hidden)?;
    let g_pre = tape.slice(pre, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i_pre)?;
    let f = tape.sigmoid(f_pre)?;
    let o = tape.sigmoid(o_pre)?;
    let g = tape.tanh(g_pre)?;
    let keep = tape.mul(f, state.c)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok(StateVars { h, c })
}

/// Free-standing LSTM cell over plain tensors.
#[derive(Clone, Debug)]
pub struct LstmCell {
    /// One `4h x d_k` matrix per input stream.
    pub input_weights: Vec<Tensor>,
    /// `4h x h` recurrent weights.
    pub recurrent: Tensor,
    /// `4h` bias.
    pub bias: Tensor,
}

impl LstmCell {
    pub fn hidden(&self) -> usize {
        self.recurrent.cols()
    }

    pub fn step(&self, inputs: &[Tensor], state: &LstmState) -> Result<LstmState> {
        if inputs.len() != self.input_weights.len() {
            return Err(Error::dim(
                "lstm_step",
                &[self.input_weights.len()],
                &[inputs.len()],
            ));
        }
        let hidden = self.hidden();
        if self.recurrent.shape() != [4 * hidden, hidden] || self.bias.shape() != [4 * hidden] {
            return Err(Error::dim("lstm_step", self.recurrent.shape(), self.bias.shape()));
        }
        if state.h.len() != hidden || state.c.len() != hidden {
            return Err(Error::dim("lstm_step", &[hidden], &[state.h.len(), state.c.len()]));
        }
        let mut tape = Tape::new();
        let u = tape.constant(self.recurrent.clone());
        let b = tape.constant(self.bias.clone());
        let pairs: Vec<(Var, Var)> = self
            .input_weights
            .iter()
            .zip(inputs)
            .map(|(w, x)| (tape.constant(w.clone()), tape.constant(x.clone())))
            .collect();
        let s = StateVars::constant(&mut tape, state)?;
        let out = lstm_step(&mut tape, &pairs, u, b, s, hidden)?;
        Ok(out.read(&tape))
    }
}
