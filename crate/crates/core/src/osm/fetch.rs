//! Overpass API client with retries and an on-disk response cache.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::BBox;
use crate::error::{Error, Result};

/// Environment variable that overrides the Overpass endpoint.
pub const ENDPOINT_ENV: &str = "PLANLOC_OVERPASS_URL";
pub const DEFAULT_ENDPOINT: &str = "https://overpass-api.de/api/interpreter";

pub fn endpoint_from_env() -> String {
    std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| DEFAULT_ENDPOINT.to_owned())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub factor: f64,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            max_attempts: 3,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n + 1`, for `n >= 1`.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(attempt as i32 - 1))
    }
}

/// Overpass QL query returning every element in `bbox` with the nodes of
/// its ways and relations.
pub fn overpass_query(bbox: &BBox, timeout: Duration) -> String {
    let b = format!("{},{},{},{}", bbox.min_lat, bbox.min_lon, bbox.max_lat, bbox.max_lon);
    format!(
        "[out:xml][timeout:{}];(node({b});way({b});relation({b}););(._;>;);out body;",
        timeout.as_secs().max(1)
    )
}

/// Cache key: SHA-256 of the canonical bounding-box string.
pub fn cache_key(bbox: &BBox) -> String {
    let canon = format!("{:.7},{:.7},{:.7},{:.7}", bbox.min_lon, bbox.min_lat, bbox.max_lon, bbox.max_lat);
    hex::encode(Sha256::digest(canon.as_bytes()))
}

pub struct OverpassClient {
    endpoint: String,
    timeout: Duration,
    cache_dir: Option<PathBuf>,
    retry: RetryPolicy,
    network_calls: u32,
}

enum Attempt {
    Done(Vec<u8>),
    Transient(String),
    Throttled(u16),
}

impl OverpassClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout,
            cache_dir: None,
            retry: RetryPolicy::default(),
            network_calls: 0,
        }
    }

    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// HTTP requests issued so far by this client.
    pub fn network_calls(&self) -> u32 {
        self.network_calls
    }

    pub fn fetch(&mut self, bbox: &BBox) -> Result<Vec<u8>> {
        BBox::new(bbox.min_lon, bbox.min_lat, bbox.max_lon, bbox.max_lat)?;
        let cached = self.cache_dir.as_ref().map(|d| d.join(format!("{}.osm", cache_key(bbox))));
        if let Some(path) = &cached {
            if let Some(bytes) = read_cached(path)? {
                log::debug!("overpass cache hit {}", path.display());
                return Ok(bytes);
            }
        }
        let body = self.download(bbox)?;
        if let Some(path) = &cached {
            write_cached(path, &body)?;
        }
        Ok(body)
    }

    fn download(&mut self, bbox: &BBox) -> Result<Vec<u8>> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let query = overpass_query(bbox, self.timeout);
        let mut last = Attempt::Transient(String::new());
        for attempt in 1..=self.retry.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay_after(attempt - 1));
            }
            self.network_calls += 1;
            last = match agent.post(&self.endpoint).send_form([("data", query.as_str())]) {
                Err(e) => Attempt::Transient(e.to_string()),
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    match status {
                        200..=299 => {
                            let body = resp
                                .body_mut()
                                .with_config()
                                .limit(u64::MAX)
                                .read_to_vec()
                                .map_err(|e| Error::Transport(e.to_string()));
                            match body {
                                Ok(b) => Attempt::Done(b),
                                Err(e) => Attempt::Transient(e.to_string()),
                            }
                        }
                        429 => Attempt::Throttled(status),
                        500..=599 => Attempt::Transient(format!("HTTP {status}")),
                        _ => return Err(Error::Transport(format!("{} returned HTTP {status}", self.endpoint))),
                    }
                }
            };
            match &last {
                Attempt::Done(_) => break,
                Attempt::Transient(msg) => log::warn!("overpass attempt {attempt} failed: {msg}"),
                Attempt::Throttled(_) => log::warn!("overpass attempt {attempt} throttled"),
            }
        }
        match last {
            Attempt::Done(b) => Ok(b),
            Attempt::Throttled(status) => Err(Error::Throttled {
                endpoint: self.endpoint.clone(),
                status,
                attempts: self.retry.max_attempts,
            }),
            Attempt::Transient(msg) => Err(Error::Transport(format!(
                "{} failed after {} attempts: {msg}",
                self.endpoint, self.retry.max_attempts
            ))),
        }
    }
}

/// Fetches `bbox` from `endpoint` with the default retry policy, caching
/// under `cache_dir` when given.
pub fn fetch_overpass(bbox: &BBox, endpoint: &str, timeout: Duration, cache_dir: Option<&Path>) -> Result<Vec<u8>> {
    let mut client = OverpassClient::new(endpoint, timeout);
    if let Some(d) = cache_dir {
        client = client.with_cache(d);
    }
    client.fetch(bbox)
}

fn lock_path(path: &Path) -> PathBuf {
    path.with_extension("lock")
}

fn open_lock(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(OpenOptions::new().create(true).truncate(false).write(true).open(lock_path(path))?)
}

fn read_cached(path: &Path) -> Result<Option<Vec<u8>>> {
    let lock = open_lock(path)?;
    lock.lock_shared()?;
    let out = match File::open(path) {
        Ok(mut f) => {
            let mut bytes = Vec::new();
            f.read_to_end(&mut bytes)?;
            Some(bytes)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    lock.unlock()?;
    Ok(out)
}

fn write_cached(path: &Path, bytes: &[u8]) -> Result<()> {
    let lock = open_lock(path)?;
    lock.lock()?;
    let tmp = path.with_extension("partial");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    lock.unlock()?;
    Ok(())
}
