//! Second-stage combiners over frozen base models: logit stacking, the
//! mean-ensemble and the trained meta-models.

mod meta;
mod stack;

pub use meta::{
    build_meta, predict_final, train_meta, MetaKind, MetaModel, MetaProvenance, MetaVariant,
};
pub use stack::{extract_stacked, mean_ensemble, StackedLogits};
