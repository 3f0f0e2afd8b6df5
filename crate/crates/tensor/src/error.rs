use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stale cache passed to {op}: {detail}")]
    StaleCache { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::Shape {
        op,
        detail: detail.into(),
    })
}

pub(crate) fn check_grad_shape(op: &'static str, expected: &[usize], got: &[usize]) -> Result<()> {
    if expected != got {
        return Err(TensorError::StaleCache {
            op,
            detail: format!("gradient shape {got:?} does not match forward output {expected:?}"),
        });
    }
    Ok(())
}
