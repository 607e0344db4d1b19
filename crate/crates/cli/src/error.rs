use std::fmt;

use facetviz::ErrorCategory;

/// Failure classes of the command-line tool and their exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Shape,
    Io,
    Runtime,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Data => 3,
            Category::Shape | Category::Io | Category::Runtime => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::Config => "CONFIG",
            Category::Data => "DATA",
            Category::Shape => "SHAPE",
            Category::Io => "IO",
            Category::Runtime => "RUNTIME",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        CliError { category, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::new(Category::Config, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError::new(Category::Data, message)
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError::new(Category::Runtime, message)
    }

    /// `error[CATEGORY]: message` on one line.
    pub fn line(&self) -> String {
        format!("error[{}]: {}", self.category.label(), self.message.replace('\n', "; "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl std::error::Error for CliError {}

impl From<facetviz::Error> for CliError {
    fn from(e: facetviz::Error) -> Self {
        let category = match e.category() {
            ErrorCategory::Config => Category::Config,
            ErrorCategory::Data => Category::Data,
            ErrorCategory::Shape => Category::Shape,
            ErrorCategory::Io => Category::Io,
        };
        CliError::new(category, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(Category::Io, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
