use alloc::string::String;

/// Errors raised by the engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is singular or ill-conditioned (condition estimate {condition:.3e}, cap {cap:.1e})")]
    IllConditioned { condition: f64, cap: f64 },

    #[error(
        "invariant constraints are degenerate: C2ᵀ·P·M·C2 has condition estimate {condition:.3e}; \
         duplicated or dependent invariants need a positive lambda_inv (0.5 is the usual preset)"
    )]
    DegenerateConstraints { condition: f64 },

    #[error("singular value decomposition did not converge")]
    SvdFailure,

    #[error("oracle did not converge in {steps} steps (final gradient norm {grad_norm:.3e})")]
    NonConvergence { steps: usize, grad_norm: f64 },

    #[error("edit for layer `{found}` cannot be applied to layer `{expected}`")]
    LayerMismatch { expected: String, found: String },
}

impl Error {
    /// True for failures caused by the numbers rather than by the shape or
    /// validity of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IllConditioned { .. }
                | Error::DegenerateConstraints { .. }
                | Error::SvdFailure
                | Error::NonConvergence { .. }
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
