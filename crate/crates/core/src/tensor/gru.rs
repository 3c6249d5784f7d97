use super::{Tape, Var};
use crate::error::{Error, Result};

/// Tape handles for the parameters of one GRU layer.
///
/// Input weights are `[hidden, input]`, recurrent weights `[hidden, hidden]`,
/// biases `[hidden]`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_update: Var,
    pub w_reset: Var,
    pub w_candidate: Var,
    pub u_update: Var,
    pub u_reset: Var,
    pub u_candidate: Var,
    pub b_update: Var,
    pub b_reset: Var,
    pub b_candidate: Var,
}

/// One GRU step:
///
/// ```text
/// z = sigmoid(W_z x + U_z h + b_z)
/// r = sigmoid(W_r x + U_r h + b_r)
/// c = tanh(W_c x + U_c (r * h) + b_c)
/// h' = (1 - z) * h + z * c
/// ```
pub fn gru_step(tape: &mut Tape, x: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    let hidden = tape.value(p.b_update).numel();
    if tape.value(h_prev).shape() != [hidden] {
        return Err(Error::dim(
            "gru_step",
            "hidden state length",
            hidden,
            format!("{:?}", tape.value(h_prev).shape()),
        ));
    }
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, h: Var| -> Result<Var> {
        let wx = tape.dense(x, w, b)?;
        let uh = tape.matvec(u, h)?;
        tape.add(wx, uh)
    };
    let z_pre = gate(tape, p.w_update, p.u_update, p.b_update, h_prev)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, p.w_reset, p.u_reset, p.b_reset, h_prev)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h_prev)?;
    let c_pre = gate(tape, p.w_candidate, p.u_candidate, p.b_candidate, rh)?;
    let cand = tape.tanh(c_pre);
    // h + z * (c - h)
    let diff = tape.sub(cand, h_prev)?;
    let step = tape.mul(z, diff)?;
    tape.add(h_prev, step)
}
