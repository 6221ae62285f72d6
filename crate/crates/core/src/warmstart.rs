//! Building students: vocabulary growth, warm start from a teacher, and
//! scratch initialization.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{init_embedding_row, init_model, CtrModel, ModelMeta, ModelSpec, OptimizerState, Vocabulary};
use crate::world::{Impression, FIELD_NAMES};

/// Extends `base` with every value seen in `fresh`, appending new values in
/// order of first appearance. Existing indices never change. An empty `base`
/// (no fields) is treated as an empty vocabulary over the impression schema.
pub fn expand_vocabulary(base: &Vocabulary, fresh: &[Impression]) -> Vocabulary {
    let mut out = if base.n_fields() == 0 { Vocabulary::new(&FIELD_NAMES) } else { base.clone() };
    for imp in fresh {
        for (f, &v) in imp.features.iter().enumerate().take(out.n_fields()) {
            out.insert(f, v);
        }
    }
    out
}

/// Student initialized from `teacher` over the grown vocabulary `expanded`.
///
/// Dense layers and the embedding rows of values the teacher knows are copied
/// bit for bit. Rows for new values get the scratch initialization, which
/// depends only on `(seed, field, row)`.
pub fn warm_start(teacher: &CtrModel, expanded: &Vocabulary, seed: u64) -> Result<CtrModel> {
    if !expanded.extends(&teacher.vocab) {
        let fields: Vec<&str> = expanded.field_names().collect();
        return Err(Error::NotSuperset(format!(
            "vocabulary over {fields:?} does not keep the teacher's fields and indices"
        )));
    }
    let mut student = teacher.clone();
    student.vocab = expanded.clone();
    for (f, table) in student.tables.iter_mut().enumerate() {
        let rows = expanded.len(f);
        table.weights.reserve((rows - table.rows) * table.dim);
        for r in table.rows..rows {
            table.weights.extend(init_embedding_row(seed, f, r, table.dim));
        }
        table.rows = rows;
    }
    student.meta = ModelMeta {
        seed,
        steps: 0,
        config_hash: teacher.meta.config_hash,
        teacher_hash: teacher.meta.config_hash,
        label_prior: teacher.meta.label_prior,
    };
    Ok(student)
}

/// Optimizer state for a freshly warm-started student. Accumulators are zero
/// unless `carry` is set, in which case the teacher's accumulators are copied
/// for shared parameters and new rows start at zero.
pub fn warm_start_optimizer(teacher_state: Option<&OptimizerState>, student: &CtrModel, carry: bool) -> OptimizerState {
    let mut state = OptimizerState::zeros_like(student);
    if let (true, Some(src)) = (carry, teacher_state) {
        for (dst, from) in state.accumulators.iter_mut().zip(&src.accumulators) {
            let n = from.len().min(dst.len());
            dst[..n].copy_from_slice(&from[..n]);
        }
        state.epsilon = src.epsilon;
    }
    state
}

/// Scratch model over `expanded`, with no teacher influence.
pub fn scratch_start(spec: &ModelSpec, expanded: &Vocabulary, seed: u64) -> Result<CtrModel> {
    init_model(spec, expanded, seed)
}
