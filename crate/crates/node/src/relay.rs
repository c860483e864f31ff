use std::time::Duration;

use offgrid_core::nodesvc::{CellularLink, RelayEnvelope};

/// Cellular path: POSTs each envelope as JSON to a relay URL, normally
/// another node's `/api/relay`.
///
/// The blocking client is built on first use, on the command-loop thread;
/// building it inside an async runtime panics.
pub struct HttpRelay {
    client: Option<reqwest::blocking::Client>,
    url: String,
    timeout: Duration,
}

impl HttpRelay {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            client: None,
            url: url.into(),
            timeout,
        }
    }

    fn client(&mut self) -> Result<&reqwest::blocking::Client, String> {
        if self.client.is_none() {
            let client = reqwest::blocking::Client::builder()
                .timeout(self.timeout)
                .build()
                .map_err(|e| e.to_string())?;
            self.client = Some(client);
        }
        Ok(self.client.as_ref().expect("just built"))
    }
}

impl CellularLink for HttpRelay {
    fn send(&mut self, envelope: &RelayEnvelope) -> Result<(), String> {
        let url = self.url.clone();
        let resp = self
            .client()?
            .post(url)
            .json(envelope)
            .send()
            .map_err(|e| e.to_string())?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(format!("relay answered {}", resp.status()))
        }
    }
}
