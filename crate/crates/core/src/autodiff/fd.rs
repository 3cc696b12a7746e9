use super::tape::{GradientBundle, ParamSet};

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
///
/// Test oracle only: costs two evaluations of `f` per scalar parameter.
pub fn finite_difference_gradient(
    mut f: impl FnMut(&ParamSet) -> f64,
    params: &ParamSet,
    step: f64,
) -> GradientBundle {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut work = params.clone();
    let mut out = GradientBundle::new();
    for (id, value) in params {
        let mut grad = value.clone();
        for k in 0..value.data().len() {
            let orig = value.data()[k];
            work.get_mut(id).unwrap().data_mut()[k] = orig + step;
            let up = f(&work);
            work.get_mut(id).unwrap().data_mut()[k] = orig - step;
            let down = f(&work);
            work.get_mut(id).unwrap().data_mut()[k] = orig;
            grad.data_mut()[k] = (up - down) / (2.0 * step);
        }
        out.insert(id.clone(), grad);
    }
    out
}
