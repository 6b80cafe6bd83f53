//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;

use crate::error::Result;
use crate::model::{ModelParams, ParamGroup};
use crate::rng::seeded;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: String,
    pub group: ParamGroup,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    /// `|a - n| / max(|a|, |n|, floor)`; the floor keeps vanishing gradients
    /// from turning rounding noise into large ratios.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / scale
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self, floor: f64) -> f64 {
        self.entries.iter().map(|e| e.relative_error(floor)).fold(0.0, f64::max)
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut g: Vec<ParamGroup> = self.entries.iter().map(|e| e.group).collect();
        g.sort();
        g.dedup();
        g
    }

    /// Groups with at least one sampled entry whose gradient is nonzero.
    pub fn live_groups(&self) -> Vec<ParamGroup> {
        let mut g: Vec<ParamGroup> =
            self.entries.iter().filter(|e| e.analytic != 0.0 || e.numeric != 0.0).map(|e| e.group).collect();
        g.sort();
        g.dedup();
        g
    }

    pub fn worst(&self, floor: f64) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.relative_error(floor).total_cmp(&b.relative_error(floor)))
    }
}

/// Compares the tape gradient of `loss` with central differences on up to
/// `per_tensor` seeded elements of every parameter tensor the loss reaches.
pub fn check_gradients<F>(params: &ModelParams, per_tensor: usize, eps: f64, seed: u64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ModelParams) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::new(&params.tensors);
        let l = loss(&mut tape, params)?;
        tape.backward(l).into_params()
    };
    let eval = |p: &ModelParams| -> Result<f64> {
        let mut tape = Tape::new(&p.tensors);
        let l = loss(&mut tape, p)?;
        Ok(tape.value(l).item())
    };
    let mut rng = seeded(seed, 0);
    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let n = g.len();
        for e in sample(&mut rng, n, per_tensor.min(n)).into_iter() {
            let orig = work.tensors[i].data()[e];
            work.tensors[i].data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            work.tensors[i].data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            work.tensors[i].data_mut()[e] = orig;
            report.entries.push(GradCheckEntry {
                param: params.specs[i].name.clone(),
                group: params.specs[i].group,
                element: e,
                analytic: g.data()[e],
                numeric: (plus - minus) / (2.0 * eps),
            });
        }
    }
    Ok(report)
}
