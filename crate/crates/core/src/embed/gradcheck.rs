use std::collections::BTreeSet;

use super::space::{EmbeddingSpace, SoftmaxMode};
use super::train::{cbow_step, Scratch, WeightAccess};
use crate::error::{Error, Result};

/// Finite-difference step.
pub const STEP: f64 = 1e-4;

/// Captures the updates of one SGD step at unit learning rate. Since the
/// step adds `-dE/dθ`, the recorded deltas are negated gradients.
struct Recorder<'a> {
    space: &'a EmbeddingSpace,
    input: Vec<f64>,
    output: Vec<f64>,
}

impl WeightAccess for Recorder<'_> {
    fn read_input(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(self.space.row(i));
    }

    fn read_output(&self, j: usize, out: &mut [f64]) {
        out.copy_from_slice(self.space.output_row(j));
    }

    fn add_input(&mut self, i: usize, delta: &[f64], scale: f64) {
        let d = self.space.dim;
        for (g, x) in self.input[i * d..(i + 1) * d].iter_mut().zip(delta) {
            *g += scale * x;
        }
    }

    fn add_output(&mut self, j: usize, delta: &[f64], scale: f64) {
        let d = self.space.dim;
        for (g, x) in self.output[j * d..(j + 1) * d].iter_mut().zip(delta) {
            *g += scale * x;
        }
    }
}

/// Analytic gradients of the loss with respect to the input and output
/// weight matrices, as produced by the training kernel.
pub fn analytic_gradients(
    space: &EmbeddingSpace,
    context: &[usize],
    target: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    // validates indices
    space.loss(context, target)?;
    let mut rec = Recorder {
        space,
        input: vec![0.0; space.input_weights.len()],
        output: vec![0.0; space.output_weights.len()],
    };
    let mut scratch = Scratch::new(space.dim, space.output_len());
    cbow_step(
        &mut rec,
        space.mode,
        &space.huffman,
        space.output_len(),
        context,
        target,
        1.0,
        &mut scratch,
    );
    let neg = |v: Vec<f64>| v.into_iter().map(|x| -x).collect();
    Ok((neg(rec.input), neg(rec.output)))
}

/// Largest relative error between the kernel's gradients and central finite
/// differences, over every weight the sample touches: the context rows and
/// either the target's path nodes or every output row. The relative error
/// is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(space: &EmbeddingSpace, context: &[usize], target: usize) -> Result<f64> {
    if space.len() > 100 || space.output_len() > 100 {
        return Err(Error::arg("gradient check is limited to vocabularies of at most 100"));
    }
    let (g_in, g_out) = analytic_gradients(space, context, target)?;
    let dim = space.dim;
    let mut probe = space.clone();
    let mut worst: f64 = 0.0;

    let in_rows: BTreeSet<usize> = context.iter().copied().collect();
    for &r in &in_rows {
        for d in 0..dim {
            let idx = r * dim + d;
            let num = central_difference(&mut probe, context, target, Param::Input(idx))?;
            worst = worst.max(rel_err(g_in[idx], num));
        }
    }
    let out_rows: Vec<usize> = match space.mode {
        SoftmaxMode::Hierarchical => space.huffman.path(target).iter().map(|&n| n as usize).collect(),
        SoftmaxMode::Exact => (0..space.output_rows()).collect(),
    };
    for r in out_rows {
        for d in 0..dim {
            let idx = r * dim + d;
            let num = central_difference(&mut probe, context, target, Param::Output(idx))?;
            worst = worst.max(rel_err(g_out[idx], num));
        }
    }
    Ok(worst)
}

enum Param {
    Input(usize),
    Output(usize),
}

fn central_difference(
    s: &mut EmbeddingSpace,
    context: &[usize],
    target: usize,
    p: Param,
) -> Result<f64> {
    let orig = *weight_mut(s, &p);
    *weight_mut(s, &p) = orig + STEP;
    let plus = s.loss(context, target)?;
    *weight_mut(s, &p) = orig - STEP;
    let minus = s.loss(context, target)?;
    *weight_mut(s, &p) = orig;
    Ok((plus - minus) / (2.0 * STEP))
}

fn weight_mut<'a>(s: &'a mut EmbeddingSpace, p: &Param) -> &'a mut f64 {
    match *p {
        Param::Input(i) => &mut s.input_weights[i],
        Param::Output(i) => &mut s.output_weights[i],
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}
