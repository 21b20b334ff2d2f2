use super::{Graph, NumericsError, ParamId, ParamStore, Var};

/// Denominator floor for the relative error of near-zero gradients. At
/// `h = 1e-5` and outputs of order 10, central differences carry roughly
/// `1e-10` of roundoff, so smaller gradients cannot be resolved.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the worst entry.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients against central differences.
///
/// `f` must build a scalar from the graph deterministically. The relative
/// error of one coordinate is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    h: f64,
    floor: f64,
    f: F,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph) -> Result<Var, NumericsError>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let out = f(&mut g)?;
        g.backward(out)?
    };
    let eval = |store: &ParamStore| -> Result<f64, NumericsError> {
        let mut g = Graph::new(store);
        let out = f(&mut g)?;
        Ok(g.value(out).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for &id in params {
        let n = store.value(id).len();
        for k in 0..n {
            let original = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = original + h;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[k] = original - h;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[k]);
            let denom = a.abs().max(numeric.abs()).max(floor);
            let err = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((store.get(id).name.clone(), k));
                }
            }
        }
    }
    Ok(report)
}
