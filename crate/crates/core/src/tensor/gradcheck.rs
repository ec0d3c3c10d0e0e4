//! Central finite-difference gradient checking.

/// One named, flat block of differentiable values with its analytic gradient.
#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: String,
    pub values: Vec<f64>,
    pub analytic: Vec<f64>,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, values: Vec<f64>, analytic: Vec<f64>) -> Self {
        assert_eq!(values.len(), analytic.len(), "gradient length must match values");
        ParamBlock {
            name: name.into(),
            values,
            analytic,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is ~0 are judged on absolute error instead.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            abs_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_block: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max rel err {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e}; {} coords)",
            self.max_rel_err,
            self.worst_block,
            self.worst_index,
            self.worst_analytic,
            self.worst_numeric,
            self.checked
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Perturbs every coordinate of every block by ±eps, evaluates `loss` on the
/// full set of blocks, and compares the central difference with the stored
/// analytic gradient.
pub fn grad_check<F>(mut blocks: Vec<ParamBlock>, opts: GradCheckOptions, mut loss: F) -> GradCheckReport
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    let mut values: Vec<Vec<f64>> = blocks.iter_mut().map(|b| std::mem::take(&mut b.values)).collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_block: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
    };
    for (bi, block) in blocks.iter().enumerate() {
        for i in 0..values[bi].len() {
            let orig = values[bi][i];
            values[bi][i] = orig + opts.eps;
            let plus = loss(&values);
            values[bi][i] = orig - opts.eps;
            let minus = loss(&values);
            values[bi][i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let analytic = block.analytic[i];
            let err = relative_error(analytic, numeric, opts.abs_floor);
            report.checked += 1;
            if err.is_nan() || err > report.max_rel_err {
                report.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                report.worst_block = block.name.clone();
                report.worst_index = i;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    report
}
