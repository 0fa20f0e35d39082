use crate::{ParamId, Result, Tape, Tensor, Var};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (input index, flat element index) of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

const REL_FLOOR: f64 = 1e-6;

fn eval<F>(f: &F, point: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(ParamId(i), t))
        .collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).data()[0])
}

/// Checks the gradient of scalar-valued `f` at `point` against central
/// finite differences `(f(x+h) - f(x-h)) / 2h`, one coordinate at a time.
///
/// Input `i` of `point` is recorded as `ParamId(i)`.
pub fn grad_check<F>(f: F, point: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(ParamId(i), t))
        .collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut probe: Vec<Tensor> = point.to_vec();
    for (i, t) in point.iter().enumerate() {
        for j in 0..t.len() {
            let analytic = grads.get(ParamId(i)).map_or(0.0, |g| g.data()[j]);
            let orig = t.data()[j];
            probe[i].data_mut()[j] = orig + h;
            let plus = eval(&f, &probe)?;
            probe[i].data_mut()[j] = orig - h;
            let minus = eval(&f, &probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);

            let abs = (analytic - numeric).abs();
            let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coordinates += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, j);
            }
        }
    }
    Ok(report)
}
