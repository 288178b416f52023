//! Gate blocks of the composition encoder, recorded on a [`Tape`].
//!
//! Every function works on a batch of rows: hidden and cell inputs are
//! `[n × d_h]`, and row `r` of each output depends only on row `r` of the
//! inputs.

use super::BoundAffine;
use crate::error::{shape_err, Result};
use crate::tensor::{Tape, Var};

/// A latent `(h, c)` state batch on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateVars {
    pub h: Var,
    pub c: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct CompositionVars {
    pub gates: BoundAffine,
    pub update: BoundAffine,
}

#[derive(Clone, Copy, Debug)]
pub struct RefineVars {
    pub gates: BoundAffine,
    pub update: BoundAffine,
}

#[derive(Clone, Copy, Debug)]
pub struct EmbedVars {
    pub io: BoundAffine,
    pub u: BoundAffine,
}

#[derive(Clone, Copy, Debug)]
pub struct TwoStateGates {
    pub f1: Var,
    pub f2: Var,
    pub i: Var,
    pub o: Var,
    pub u: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct OneStateGates {
    pub f1: Var,
    pub i: Var,
    pub o: Var,
    pub u: Var,
}

fn width(tape: &Tape, v: Var) -> usize {
    tape.value(v).last_dim()
}

fn expect_width(tape: &Tape, op: &'static str, v: Var, want: usize) -> Result<()> {
    let got = tape.value(v).shape();
    if got.len() != 2 || got[1] != want {
        return shape_err(op, format!("expected [n × {want}], got {got:?}"));
    }
    Ok(())
}

/// Hidden size implied by a gate block with `blocks` fused gates.
fn hidden_of(tape: &Tape, gates: BoundAffine, blocks: usize) -> usize {
    tape.value(gates.w).shape()[0] / blocks
}

/// `[f₁, f₂, i, o] = σ(W_g2 h′ + b_g2)`, `u = tanh(W_u2 h′ + b_u2)` with
/// `h′ = [h_left; h_right]`.
pub fn two_state_gates(tape: &mut Tape, h_left: Var, h_right: Var, p: &CompositionVars) -> Result<TwoStateGates> {
    let d = hidden_of(tape, p.gates, 4);
    expect_width(tape, "two_state_gates", h_left, d)?;
    expect_width(tape, "two_state_gates", h_right, d)?;
    let joined = tape.concat_last(&[h_left, h_right])?;
    let pre = tape.linear(joined, p.gates.w, p.gates.b)?;
    let act = tape.sigmoid(pre);
    let g = tape.split_last(act, &[d, d, d, d])?;
    let pre_u = tape.linear(joined, p.update.w, p.update.b)?;
    let u = tape.tanh(pre_u);
    Ok(TwoStateGates { f1: g[0], f2: g[1], i: g[2], o: g[3], u })
}

/// `[f₁, i, o] = σ(W_g1 h + b_g1)`, `u = tanh(W_u1 h + b_u1)`.
pub fn one_state_gates(tape: &mut Tape, h: Var, p: &RefineVars) -> Result<OneStateGates> {
    let d = hidden_of(tape, p.gates, 3);
    expect_width(tape, "one_state_gates", h, d)?;
    let pre = tape.linear(h, p.gates.w, p.gates.b)?;
    let act = tape.sigmoid(pre);
    let g = tape.split_last(act, &[d, d, d])?;
    let pre_u = tape.linear(h, p.update.w, p.update.b)?;
    let u = tape.tanh(pre_u);
    Ok(OneStateGates { f1: g[0], i: g[1], o: g[2], u })
}

/// `c = i ⊙ u + Σⱼ fⱼ ⊙ cⱼ`, `h = o ⊙ tanh(c)`.
pub fn forget_add_activate(tape: &mut Tape, gated: &[(Var, Var)], i: Var, u: Var, o: Var) -> Result<StateVars> {
    let mut c = tape.mul(i, u)?;
    for &(f, cj) in gated {
        let kept = tape.mul(f, cj)?;
        c = tape.add(c, kept)?;
    }
    let squashed = tape.tanh(c);
    let h = tape.mul(o, squashed)?;
    Ok(StateVars { h, c })
}

/// Leaf state from a one-hot (or any) input row batch `x: [n × d_x]`:
/// `c = i ⊙ u`, `h = o ⊙ tanh(c)`.
pub fn state_embed(tape: &mut Tape, x: Var, p: &EmbedVars) -> Result<StateVars> {
    let d = tape.value(p.u.w).shape()[0];
    let pre = tape.linear(x, p.io.w, p.io.b)?;
    let act = tape.sigmoid(pre);
    let io = tape.split_last(act, &[d, d])?;
    let pre_u = tape.linear(x, p.u.w, p.u.b)?;
    let u = tape.tanh(pre_u);
    let c = tape.mul(io[0], u)?;
    let squashed = tape.tanh(c);
    let h = tape.mul(io[1], squashed)?;
    Ok(StateVars { h, c })
}

/// Binary composition followed by one refinement per entry of `refine`.
pub fn compose(
    tape: &mut Tape,
    left: StateVars,
    right: StateVars,
    comp: &CompositionVars,
    refine: &[RefineVars],
) -> Result<StateVars> {
    let d = hidden_of(tape, comp.gates, 4);
    for s in [left, right] {
        expect_width(tape, "compose", s.h, d)?;
        expect_width(tape, "compose", s.c, d)?;
    }
    let g = two_state_gates(tape, left.h, right.h, comp)?;
    let mut state = forget_add_activate(tape, &[(g.f1, left.c), (g.f2, right.c)], g.i, g.u, g.o)?;
    for stage in refine {
        let g = one_state_gates(tape, state.h, stage)?;
        state = forget_add_activate(tape, &[(g.f1, state.c)], g.i, g.u, g.o)?;
    }
    Ok(state)
}

/// `relu(W [h_left; h_right] + b)`.
pub fn fc_compose(tape: &mut Tape, h_left: Var, h_right: Var, p: &BoundAffine) -> Result<Var> {
    let d = tape.value(p.w).shape()[0];
    expect_width(tape, "fc_compose", h_left, d)?;
    expect_width(tape, "fc_compose", h_right, d)?;
    let joined = tape.concat_last(&[h_left, h_right])?;
    let pre = tape.linear(joined, p.w, p.b)?;
    Ok(tape.relu(pre))
}

/// `relu(W h + b)`.
pub fn fc_refine(tape: &mut Tape, h: Var, p: &BoundAffine) -> Result<Var> {
    let d = tape.value(p.w).shape()[0];
    expect_width(tape, "fc_refine", h, d)?;
    let pre = tape.linear(h, p.w, p.b)?;
    Ok(tape.relu(pre))
}

/// PR-RNN node: `fc_compose` followed by each `fc_refine` stage.
pub fn fc_compose_refined(
    tape: &mut Tape,
    h_left: Var,
    h_right: Var,
    comp: &BoundAffine,
    refine: &[BoundAffine],
) -> Result<Var> {
    let mut h = fc_compose(tape, h_left, h_right, comp)?;
    for stage in refine {
        h = fc_refine(tape, h, stage)?;
    }
    debug_assert_eq!(width(tape, h), tape.value(comp.w).shape()[0]);
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Affine;
    use crate::tensor::Tensor;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn row(tape: &mut Tape, v: &[f32]) -> Var {
        tape.leaf(&Tensor::row(v).unwrap())
    }

    fn close(a: f32, b: f64, tol: f64) -> bool {
        (a as f64 - b).abs() < tol
    }

    fn comp_vars(tape: &mut Tape, gates: &Affine, update: &Affine) -> CompositionVars {
        CompositionVars { gates: gates.bind(tape), update: update.bind(tape) }
    }

    #[test]
    fn zero_composition_gates() {
        let mut tape = Tape::new();
        let p = comp_vars(&mut tape, &Affine::zeros(8, 4), &Affine::zeros(2, 4));
        let (l, r) = (row(&mut tape, &[0.3, -1.0]), row(&mut tape, &[2.0, 0.1]));
        let g = two_state_gates(&mut tape, l, r, &p).unwrap();
        for v in [g.f1, g.f2, g.i, g.o] {
            assert_eq!(tape.value(v).data(), &[0.5, 0.5]);
        }
        assert_eq!(tape.value(g.u).data(), &[0.0, 0.0]);
    }

    #[test]
    fn composition_gate_biases_land_in_order() {
        let mut gates = Affine::zeros(4, 2);
        gates.b.data_mut().copy_from_slice(&[2.0, -2.0, 0.0, 0.0]);
        let mut tape = Tape::new();
        let p = comp_vars(&mut tape, &gates, &Affine::zeros(1, 2));
        let (l, r) = (row(&mut tape, &[0.7]), row(&mut tape, &[-0.4]));
        let g = two_state_gates(&mut tape, l, r, &p).unwrap();
        assert!(close(tape.value(g.f1).data()[0], sig(2.0), 1e-6));
        assert!(close(tape.value(g.f2).data()[0], sig(-2.0), 1e-6));
        assert!((sig(2.0) - 0.8808).abs() < 1e-4 && (sig(-2.0) - 0.1192).abs() < 1e-4);
        assert_eq!(tape.value(g.i).data(), &[0.5]);
        assert_eq!(tape.value(g.o).data(), &[0.5]);
    }

    #[test]
    fn composition_rows_map_to_gate_blocks() {
        let d = 2;
        for block in 0..4 {
            let mut gates = Affine::zeros(4 * d, 2 * d);
            for r in block * d..(block + 1) * d {
                for c in 0..2 * d {
                    gates.w.data_mut()[r * 2 * d + c] = 0.9;
                }
            }
            let mut tape = Tape::new();
            let p = comp_vars(&mut tape, &gates, &Affine::zeros(d, 2 * d));
            let (l, r) = (row(&mut tape, &[1.0, 0.5]), row(&mut tape, &[0.25, -0.5]));
            let g = two_state_gates(&mut tape, l, r, &p).unwrap();
            for (k, v) in [g.f1, g.f2, g.i, g.o].into_iter().enumerate() {
                let moved = tape.value(v).data().iter().any(|&x| x != 0.5);
                assert_eq!(moved, k == block, "block {block}, gate {k}");
            }
        }
    }

    #[test]
    fn forget_add_activate_cases() {
        let mut tape = Tape::new();
        let one = row(&mut tape, &[1.0]);
        let zero = row(&mut tape, &[0.0]);
        let c1 = row(&mut tape, &[0.6]);
        let c2 = row(&mut tape, &[-3.0]);
        let o = row(&mut tape, &[0.8]);
        let u = row(&mut tape, &[0.3]);
        let s = forget_add_activate(&mut tape, &[(one, c1), (zero, c2)], zero, u, o).unwrap();
        assert_eq!(tape.value(s.c).data(), &[0.6]);
        assert!(close(tape.value(s.h).data()[0], 0.8 * 0.6f64.tanh(), 1e-6));

        let s = forget_add_activate(&mut tape, &[(zero, c1), (zero, c2)], one, u, o).unwrap();
        assert_eq!(tape.value(s.c).data(), &[0.3]);

        let half = row(&mut tape, &[0.5]);
        let c1 = row(&mut tape, &[2.0]);
        let c2 = row(&mut tape, &[-2.0]);
        let u = row(&mut tape, &[0.8]);
        let s = forget_add_activate(&mut tape, &[(half, c1), (half, c2)], half, u, one).unwrap();
        assert!(close(tape.value(s.c).data()[0], 0.4, 1e-7));
        assert!(close(tape.value(s.h).data()[0], 0.4f64.tanh(), 1e-6));
        assert!((0.4f64.tanh() - 0.3799).abs() < 1e-4);

        let wide = tape.leaf(&Tensor::row(&[1.0, 2.0]).unwrap());
        assert!(forget_add_activate(&mut tape, &[(half, wide)], half, u, one).is_err());
    }

    #[test]
    fn one_state_gate_cases() {
        let mut tape = Tape::new();
        let p = RefineVars { gates: Affine::zeros(6, 2).bind(&mut tape), update: Affine::zeros(2, 2).bind(&mut tape) };
        let h = row(&mut tape, &[0.2, -0.9]);
        let g = one_state_gates(&mut tape, h, &p).unwrap();
        for v in [g.f1, g.i, g.o] {
            assert_eq!(tape.value(v).data(), &[0.5, 0.5]);
        }
        assert_eq!(tape.value(g.u).data(), &[0.0, 0.0]);

        let mut gates = Affine::zeros(3, 1);
        gates.b.data_mut().copy_from_slice(&[0.0, 0.0, 4.0]);
        let mut tape = Tape::new();
        let p = RefineVars { gates: gates.bind(&mut tape), update: Affine::zeros(1, 1).bind(&mut tape) };
        let h = row(&mut tape, &[0.5]);
        let g = one_state_gates(&mut tape, h, &p).unwrap();
        assert!(close(tape.value(g.o).data()[0], sig(4.0), 1e-6));
        assert!((sig(4.0) - 0.9820).abs() < 1e-4);

        // rows 2d..3d feed o only
        let d = 2;
        let mut gates = Affine::zeros(3 * d, d);
        for v in &mut gates.w.data_mut()[2 * d * d..] {
            *v = 1.5;
        }
        let mut tape = Tape::new();
        let p = RefineVars { gates: gates.bind(&mut tape), update: Affine::zeros(d, d).bind(&mut tape) };
        let h = row(&mut tape, &[0.5, 0.25]);
        let g = one_state_gates(&mut tape, h, &p).unwrap();
        assert_eq!(tape.value(g.f1).data(), &[0.5, 0.5]);
        assert_eq!(tape.value(g.i).data(), &[0.5, 0.5]);
        assert!(tape.value(g.o).data().iter().all(|&v| v > 0.5));

        let wrong = row(&mut tape, &[1.0, 2.0, 3.0]);
        assert!(one_state_gates(&mut tape, wrong, &p).is_err());
    }

    #[test]
    fn embedding_cases() {
        let mut tape = Tape::new();
        let p = EmbedVars { io: Affine::zeros(4, 3).bind(&mut tape), u: Affine::zeros(2, 3).bind(&mut tape) };
        let x = row(&mut tape, &[0.0, 1.0, 0.0]);
        let s = state_embed(&mut tape, x, &p).unwrap();
        assert_eq!(tape.value(s.c).data(), &[0.0, 0.0]);
        assert_eq!(tape.value(s.h).data(), &[0.0, 0.0]);

        let mut u = Affine::zeros(1, 1);
        u.w.data_mut()[0] = 1.0;
        let mut tape = Tape::new();
        let p = EmbedVars { io: Affine::zeros(2, 1).bind(&mut tape), u: u.bind(&mut tape) };
        let x = row(&mut tape, &[1.0]);
        let s = state_embed(&mut tape, x, &p).unwrap();
        let (uu, c) = (1.0f64.tanh(), 0.5 * 1.0f64.tanh());
        let h = 0.5 * c.tanh();
        assert!((uu - 0.7616).abs() < 1e-4 && (c - 0.3808).abs() < 1e-4 && (h - 0.1817).abs() < 1e-4);
        assert!(close(tape.value(s.c).data()[0], c, 1e-6));
        assert!(close(tape.value(s.h).data()[0], h, 1e-6));

        let bad = row(&mut tape, &[1.0, 0.0]);
        assert!(state_embed(&mut tape, bad, &p).is_err());
    }

    /// Scalar walk through the composition and one refinement stage at `d_h = 1`.
    #[allow(clippy::too_many_arguments)]
    fn scalar_compose(
        (hl, cl): (f64, f64),
        (hr, cr): (f64, f64),
        wg2: &[f64],
        bg2: &[f64],
        wu2: &[f64],
        bu2: f64,
        wg1: &[f64],
        bg1: &[f64],
        wu1: f64,
        bu1: f64,
    ) -> (f64, f64) {
        let gate = |k: usize| sig(wg2[2 * k] * hl + wg2[2 * k + 1] * hr + bg2[k]);
        let (f1, f2, i, o) = (gate(0), gate(1), gate(2), gate(3));
        let u = (wu2[0] * hl + wu2[1] * hr + bu2).tanh();
        let c = i * u + f1 * cl + f2 * cr;
        let h = o * c.tanh();
        let g1 = |k: usize| sig(wg1[k] * h + bg1[k]);
        let (f1, i, o) = (g1(0), g1(1), g1(2));
        let u = (wu1 * h + bu1).tanh();
        let c = i * u + f1 * c;
        (o * c.tanh(), c)
    }

    #[test]
    fn compose_matches_scalar_walk() {
        let wg2 = [0.3, -0.7, 1.1, 0.2, -0.5, 0.9, 0.4, -1.2];
        let bg2 = [0.1, -0.3, 0.25, 0.05];
        let wu2 = [0.8, -0.6];
        let (bu2, wu1, bu1) = (0.15, -0.9, 0.2);
        let wg1 = [0.5, -0.4, 1.3];
        let bg1 = [-0.2, 0.3, 0.1];
        let to32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();

        let mut tape = Tape::new();
        let mk = |tape: &mut Tape, shape: &[usize], v: &[f64]| tape.leaf(&Tensor::new(shape.to_vec(), to32(v)).unwrap());
        let comp = CompositionVars {
            gates: BoundAffine { w: mk(&mut tape, &[4, 2], &wg2), b: mk(&mut tape, &[4], &bg2) },
            update: BoundAffine { w: mk(&mut tape, &[1, 2], &wu2), b: mk(&mut tape, &[1], &[bu2]) },
        };
        let refine = RefineVars {
            gates: BoundAffine { w: mk(&mut tape, &[3, 1], &wg1), b: mk(&mut tape, &[3], &bg1) },
            update: BoundAffine { w: mk(&mut tape, &[1, 1], &[wu1]), b: mk(&mut tape, &[1], &[bu1]) },
        };
        let left = StateVars { h: mk(&mut tape, &[1, 1], &[0.4]), c: mk(&mut tape, &[1, 1], &[-1.5]) };
        let right = StateVars { h: mk(&mut tape, &[1, 1], &[-0.25]), c: mk(&mut tape, &[1, 1], &[0.75]) };

        let s = compose(&mut tape, left, right, &comp, &[refine]).unwrap();
        let (h, c) = scalar_compose((0.4, -1.5), (-0.25, 0.75), &wg2, &bg2, &wu2, bu2, &wg1, &bg1, wu1, bu1);
        assert!(close(tape.value(s.h).data()[0], h, 1e-6));
        assert!(close(tape.value(s.c).data()[0], c, 1e-6));

        // Without refinement the result is the composition stage alone.
        let s0 = compose(&mut tape, left, right, &comp, &[]).unwrap();
        let g = two_state_gates(&mut tape, left.h, right.h, &comp).unwrap();
        let direct = forget_add_activate(&mut tape, &[(g.f1, left.c), (g.f2, right.c)], g.i, g.u, g.o).unwrap();
        assert_eq!(tape.value(s0.h).data(), tape.value(direct.h).data());
        assert_eq!(tape.value(s0.c).data(), tape.value(direct.c).data());

        // Swapping the operands changes the result.
        let swapped = compose(&mut tape, right, left, &comp, &[refine]).unwrap();
        assert_ne!(tape.value(swapped.h).data(), tape.value(s.h).data());
    }

    #[test]
    fn zero_parameter_composition_averages_cells() {
        let mut tape = Tape::new();
        let comp = CompositionVars { gates: Affine::zeros(4, 2).bind(&mut tape), update: Affine::zeros(1, 2).bind(&mut tape) };
        let left = StateVars { h: row(&mut tape, &[0.3]), c: row(&mut tape, &[1.0]) };
        let right = StateVars { h: row(&mut tape, &[-0.2]), c: row(&mut tape, &[0.2]) };
        let s = compose(&mut tape, left, right, &comp, &[]).unwrap();
        // u = 0, every gate 0.5: c = 0.5·(c_l + c_r), h = 0.5·tanh(c)
        assert!(close(tape.value(s.c).data()[0], 0.6, 1e-7));
        assert!(close(tape.value(s.h).data()[0], 0.5 * 0.6f64.tanh(), 1e-6));
    }

    #[test]
    fn fc_blocks() {
        let mut tape = Tape::new();
        let zero = Affine::zeros(2, 4).bind(&mut tape);
        let (l, r) = (row(&mut tape, &[0.3, -1.0]), row(&mut tape, &[2.0, 0.1]));
        let h = fc_compose(&mut tape, l, r, &zero).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0, 0.0]);

        let mut neg = Affine::zeros(2, 2);
        neg.b.data_mut().copy_from_slice(&[-1.0, 0.5]);
        let neg = neg.bind(&mut tape);
        let h = fc_refine(&mut tape, l, &neg).unwrap();
        assert_eq!(tape.value(h).data()[0], 0.0);
        assert_eq!(tape.value(h).data()[1], 0.5);

        // d_h = 1 scalar instance
        let w = [0.7f32, -0.4];
        let mut comp = Affine::zeros(1, 2);
        comp.w.data_mut().copy_from_slice(&w);
        comp.b.data_mut()[0] = 0.1;
        let mut refine = Affine::zeros(1, 1);
        refine.w.data_mut()[0] = -1.3;
        refine.b.data_mut()[0] = 0.9;
        let (comp, refine) = (comp.bind(&mut tape), refine.bind(&mut tape));
        let (a, b) = (row(&mut tape, &[0.5]), row(&mut tape, &[-0.8]));
        let h = fc_compose_refined(&mut tape, a, b, &comp, &[refine]).unwrap();
        let hc = (0.7f64 * 0.5 + (-0.4) * (-0.8) + 0.1).max(0.0);
        let want = (-1.3 * hc + 0.9f64).max(0.0);
        assert!(close(tape.value(h).data()[0], want, 1e-6));

        let bad = row(&mut tape, &[1.0]);
        assert!(fc_compose(&mut tape, bad, r, &zero).is_err());
    }
}
