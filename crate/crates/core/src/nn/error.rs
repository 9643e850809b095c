use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    /// A shape disagreement; `axis` names the offending dimension.
    #[error("dimension mismatch on {axis}: {detail}")]
    Dimension { axis: String, detail: String },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("non-finite gradient for {param} in layer {layer}")]
    NonFinite { layer: String, param: String },
    #[error("layer {layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<NnError>,
    },
}

impl NnError {
    pub(crate) fn dim(axis: impl Into<String>, detail: impl Into<String>) -> Self {
        NnError::Dimension {
            axis: axis.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn in_layer(self, layer: &str) -> Self {
        NnError::Layer {
            layer: layer.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, NnError>;
