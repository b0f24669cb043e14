use std::fmt;
use std::path::Path;

use tuber_core::dataset::DatasetError;
use tuber_core::labeling::LabelError;
use tuber_core::metrics::MetricsError;
use tuber_core::synth::SynthError;
use tuber_nn::explain::ExplainError;
use tuber_nn::train::TrainError;
use tuber_nn::ZooError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Runtime,
}

/// A command failure, printed as `error: <Code>: <detail>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: String,
    pub detail: String,
    pub kind: ErrorKind,
}

impl CliError {
    fn new(kind: ErrorKind, code: &str, detail: impl Into<String>) -> Self {
        // keep the message on one line
        let detail = detail.into().split_whitespace().collect::<Vec<_>>().join(" ");
        let detail = detail.strip_prefix(&format!("{code}: ")).map(str::to_string).unwrap_or(detail);
        Self { code: code.to_string(), detail, kind }
    }

    pub fn usage(code: &str, detail: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, code, detail)
    }

    pub fn data(code: &str, detail: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, code, detail)
    }

    pub fn runtime(code: &str, detail: impl Into<String>) -> Self {
        Self::new(ErrorKind::Runtime, code, detail)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::runtime("IoError", format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Runtime => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: {}: {}", self.code, self.detail)
    }
}

impl std::error::Error for CliError {}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let code = match &e {
            DatasetError::Io { .. } => "ManifestUnreadable",
            DatasetError::MalformedRow { .. } => "MalformedRow",
            DatasetError::DuplicateKey { .. } => "DuplicateKey",
            DatasetError::MissingImage { .. } => "MissingImage",
            DatasetError::ImageTooSmall { .. } => "ImageTooSmall",
            DatasetError::SinglePointTrajectory(_) => "SinglePointTrajectory",
            DatasetError::ClassTooSmall { .. } => "ClassTooSmall",
            _ => "DataError",
        };
        Self::data(code, e.to_string())
    }
}

impl From<LabelError> for CliError {
    fn from(e: LabelError) -> Self {
        match e {
            LabelError::UnsupportedClassCount(_) => Self::usage("UnsupportedClassCount", e.to_string()),
            LabelError::NonPositiveInitialWeight(_) => Self::data("NonPositiveInitialWeight", e.to_string()),
            LabelError::MissingSproutLabel { .. } => Self::data("MissingSproutLabel", e.to_string()),
            LabelError::Dataset(d) => d.into(),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidConfig(_) => Self::usage("InvalidConfig", e.to_string()),
            _ => Self::runtime("OutputDirNotWritable", e.to_string()),
        }
    }
}

impl From<ZooError> for CliError {
    fn from(e: ZooError) -> Self {
        let detail = e.to_string();
        match e {
            ZooError::WeightsUnavailable { .. } => Self::runtime("WeightsUnavailable", detail),
            ZooError::InvalidHead(_) => Self::usage("InvalidHead", detail),
            ZooError::UnknownBackbone(_) => Self::usage("UnknownBackbone", detail),
            ZooError::ShapeMismatch { .. } => Self::runtime("ShapeMismatch", detail),
            ZooError::CorruptCheckpoint(_) => Self::data("CorruptCheckpoint", detail),
            ZooError::Io { .. } => Self::runtime("IoError", detail),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let detail = e.to_string();
        match e {
            TrainError::Model(z) => z.into(),
            TrainError::ClassTooSmall { .. } => Self::data("ClassTooSmall", detail),
            TrainError::InvalidClassIndex { .. } => Self::data("InvalidClassIndex", detail),
            TrainError::Data(_) => Self::data("DataError", detail),
            TrainError::GridTooLarge { .. } => Self::usage("GridTooLarge", detail),
            TrainError::EmptyGrid => Self::usage("EmptyGrid", detail),
            TrainError::InvalidConfig(_) => Self::usage("InvalidConfig", detail),
            TrainError::Metrics(_) => Self::runtime("MetricsError", detail),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        Self::runtime("MetricsError", e.to_string())
    }
}

impl From<ExplainError> for CliError {
    fn from(e: ExplainError) -> Self {
        let detail = e.to_string();
        match e {
            ExplainError::LayerNotFound { .. } => Self::usage("LayerNotFound", detail),
            ExplainError::NonSpatialLayer { .. } => Self::usage("NonSpatialLayer", detail),
            ExplainError::InvalidClass { .. } => Self::usage("InvalidClassIndex", detail),
            ExplainError::InvalidFraction(_) => Self::usage("InvalidFraction", detail),
            ExplainError::EmptyMask => Self::data("EmptyMask", detail),
            ExplainError::ShapeMismatch(_) => Self::data("ShapeMismatch", detail),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line_format() {
        let e = CliError::data("MissingImage", "images/a.png\nnot found");
        assert_eq!(e.to_string(), "error: MissingImage: images/a.png not found");
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn class_count_is_a_usage_error() {
        let e: CliError = LabelError::UnsupportedClassCount(9).into();
        assert_eq!((e.code.as_str(), e.exit_code()), ("UnsupportedClassCount", 2));
    }

    #[test]
    fn code_is_not_repeated() {
        let e: CliError = ZooError::InvalidHead("empty".into()).into();
        assert_eq!(e.to_string(), "error: InvalidHead: empty");
    }
}
