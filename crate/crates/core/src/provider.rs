//! Errors and retry policy shared by the remote embedding and chat providers.

use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("provider rejected the credential")]
    Auth,
    #[error("provider rate limit exceeded after {attempts} attempts")]
    RateLimit { attempts: u32 },
    #[error("provider timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("generator returned an empty reply")]
    EmptyReply,
    #[error("input {index} is {len} characters, provider limit is {max}")]
    InputTooLong { index: usize, len: usize, max: usize },
    #[error("empty input batch")]
    EmptyBatch,
    #[error("provider request failed: {0}")]
    Transport(String),
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
}

impl ProviderError {
    /// Only timeouts and rate limits are worth another attempt.
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::RateLimit { .. } | ProviderError::Timeout { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff.saturating_mul(1u32 << attempt.min(16))
    }

    /// Runs `op` until it succeeds, fails permanently, or the attempt budget
    /// is spent. `op` receives the 1-based attempt number.
    pub fn run<T>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(value) => return Ok(value),
                Err(err) if err.is_transient() && attempt < attempts => {
                    std::thread::sleep(self.backoff(attempt - 1));
                    attempt += 1;
                }
                Err(ProviderError::RateLimit { .. }) => {
                    return Err(ProviderError::RateLimit { attempts: attempt })
                }
                Err(ProviderError::Timeout { .. }) => {
                    return Err(ProviderError::Timeout { attempts: attempt })
                }
                Err(err) => return Err(err),
            }
        }
    }
}
