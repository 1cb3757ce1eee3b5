//! Central finite-difference verification of tape gradients.

use crate::error::{PadError, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    /// Coordinate where the maximum was attained, with (analytic, numeric).
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-12, analytic.abs() + numeric.abs())
}

/// Compare analytic gradients of `build` against central differences with step `h`.
///
/// `build` must construct the loss from scratch on a fresh tape each call.
/// It is evaluated twice at the unperturbed point; differing values mean the
/// loss is not deterministic and the check refuses to run.
pub fn grad_check<F>(store: &mut ParamStore, params: &[ParamId], h: f64, mut build: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Tape, Var)>,
{
    let eval = |store: &ParamStore, build: &mut F| -> Result<f64> {
        let (tape, loss) = build(store)?;
        Ok(tape.scalar(loss))
    };
    let base = eval(store, &mut build)?;
    let again = eval(store, &mut build)?;
    if base.to_bits() != again.to_bits() {
        return Err(PadError::GradCheck(format!(
            "loss is not deterministic: {base} vs {again}"
        )));
    }

    store.zero_grad();
    let (tape, loss) = build(store)?;
    tape.backward(loss, store)?;
    drop(tape);

    let mut entries = Vec::with_capacity(params.len());
    for &id in params {
        let analytic = store
            .grad(id)
            .ok_or_else(|| PadError::GradCheck(format!("{} is frozen", store.get(id).name)))?
            .to_vec();
        let mut entry = GradCheckEntry {
            name: store.get(id).name.clone(),
            max_rel_err: 0.0,
            worst: None,
        };
        for k in 0..analytic.len() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + h;
            let plus = eval(store, &mut build)?;
            store.value_mut(id).data_mut()[k] = orig - h;
            let minus = eval(store, &mut build)?;
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let e = rel_err(analytic[k], numeric);
            if e > entry.max_rel_err || entry.worst.is_none() {
                entry.max_rel_err = e;
                entry.worst = Some((k, analytic[k], numeric));
            }
        }
        entries.push(entry);
    }
    Ok(GradCheckReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_near_exact() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.3, -1.2, 2.5])).unwrap();
        let report = grad_check(&mut store, &[w], 1e-5, |s| {
            let mut tape = Tape::new();
            let x = tape.param(s, w);
            let l = tape.sq_norm(x)?;
            Ok((tape, l))
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-9, "{report:?}");
    }

    #[test]
    fn nondeterministic_loss_rejected() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![1.0])).unwrap();
        let mut calls = 0.0;
        let err = grad_check(&mut store, &[w], 1e-5, |s| {
            calls += 1.0;
            let mut tape = Tape::new();
            let x = tape.param(s, w);
            let l = tape.scale(x, calls)?;
            let l = tape.sum(l)?;
            Ok((tape, l))
        });
        assert!(matches!(err, Err(PadError::GradCheck(_))));
    }
}
