//! Blocking HTTP client built on first use.
//!
//! reqwest's blocking client cannot be built on an async runtime thread.
//! Ports are often constructed there (service start-up) but only ever used
//! from the blocking pool, so construction is deferred to the first request.

use std::sync::OnceLock;
use std::time::Duration;

use reqwest::blocking::Client;

#[derive(Debug, Clone)]
pub(crate) struct LazyClient {
    timeout: Duration,
    cell: OnceLock<Result<Client, String>>,
}

impl LazyClient {
    pub(crate) fn new(timeout: Duration) -> Self {
        Self {
            timeout,
            cell: OnceLock::new(),
        }
    }

    pub(crate) fn get(&self) -> Result<&Client, String> {
        self.cell
            .get_or_init(|| {
                Client::builder()
                    .timeout(self.timeout)
                    .user_agent(concat!("sciweave/", env!("CARGO_PKG_VERSION")))
                    .build()
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(Clone::clone)
    }
}
