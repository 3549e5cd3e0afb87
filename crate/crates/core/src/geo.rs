//! Client IP → coarse coordinates through a swappable HTTP provider.
//!
//! Lookups never fail: private addresses, provider outages, timeouts and
//! unparseable responses all collapse to [`GeoSource::Unknown`]. Successful
//! answers are cached for the life of the process; failures are not.

use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use url::Url;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeoSource {
    Provider,
    Cache,
    Unknown,
}

/// Resolved location. `Unknown` never carries coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoLocation {
    latitude: Option<f64>,
    longitude: Option<f64>,
    pub label: String,
    pub source: GeoSource,
}

impl GeoLocation {
    pub fn unknown() -> Self {
        Self {
            latitude: None,
            longitude: None,
            label: String::new(),
            source: GeoSource::Unknown,
        }
    }

    /// Returns `None` when the coordinates are out of range or `source` is `Unknown`.
    pub fn new(latitude: f64, longitude: f64, label: impl Into<String>, source: GeoSource) -> Option<Self> {
        let in_range = (-90.0..=90.0).contains(&latitude) && (-180.0..=180.0).contains(&longitude);
        if !in_range || source == GeoSource::Unknown {
            return None;
        }
        Some(Self {
            latitude: Some(latitude),
            longitude: Some(longitude),
            label: label.into(),
            source,
        })
    }

    pub fn coordinates(&self) -> Option<(f64, f64)> {
        self.latitude.zip(self.longitude)
    }

    pub fn is_known(&self) -> bool {
        self.source != GeoSource::Unknown
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderConfigError {
    #[error("endpoint template must contain \"{{ip}}\"")]
    MissingPlaceholder,
    #[error("endpoint template does not yield a valid URL: {0}")]
    BadUrl(String),
    #[error("timeout_ms must be positive")]
    ZeroTimeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint_url_template: String,
    pub timeout_ms: u64,
}

impl ProviderConfig {
    pub fn new(template: impl Into<String>, timeout_ms: u64) -> Result<Self, ProviderConfigError> {
        let config = Self {
            endpoint_url_template: template.into(),
            timeout_ms,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ProviderConfigError> {
        if !self.endpoint_url_template.contains("{ip}") {
            return Err(ProviderConfigError::MissingPlaceholder);
        }
        if self.timeout_ms == 0 {
            return Err(ProviderConfigError::ZeroTimeout);
        }
        // IPv6 is the widest textual form.
        for probe in ["203.0.113.7", "2001:db8::1"] {
            self.url_for(probe.parse().unwrap())?;
        }
        Ok(())
    }

    fn url_for(&self, ip: IpAddr) -> Result<Url, ProviderConfigError> {
        let text = self.endpoint_url_template.replace("{ip}", &ip.to_string());
        Url::parse(&text).map_err(|e| ProviderConfigError::BadUrl(format!("{text}: {e}")))
    }
}

/// True for addresses a public geolocation provider cannot place.
pub fn is_non_public(ip: IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => non_public_v4(v4),
        IpAddr::V6(v6) => match v6.to_ipv4_mapped() {
            Some(v4) => non_public_v4(v4),
            None => non_public_v6(v6),
        },
    }
}

fn non_public_v4(ip: Ipv4Addr) -> bool {
    let [a, b, ..] = ip.octets();
    ip.is_private()
        || ip.is_loopback()
        || ip.is_link_local()
        || ip.is_unspecified()
        || ip.is_broadcast()
        || ip.is_documentation()
        // carrier-grade NAT, 100.64.0.0/10
        || (a == 100 && (64..128).contains(&b))
}

fn non_public_v6(ip: Ipv6Addr) -> bool {
    let first = ip.segments()[0];
    ip.is_loopback()
        || ip.is_unspecified()
        || (first & 0xfe00) == 0xfc00 // unique local
        || (first & 0xffc0) == 0xfe80 // link local
}

/// Reads coordinates out of a provider response, accepting both
/// `latitude`/`longitude` and `lat`/`lon` naming.
pub fn parse_provider_response(body: &[u8]) -> Option<GeoLocation> {
    let v: Value = serde_json::from_slice(body).ok()?;
    let number = |names: &[&str]| names.iter().find_map(|n| v.get(*n).and_then(Value::as_f64));
    let text = |names: &[&str]| {
        names
            .iter()
            .find_map(|n| v.get(*n).and_then(Value::as_str))
            .filter(|s| !s.is_empty())
    };
    let lat = number(&["latitude", "lat"])?;
    let lon = number(&["longitude", "lon"])?;
    let label = [text(&["city"]), text(&["country_name", "country"])]
        .into_iter()
        .flatten()
        .collect::<Vec<_>>()
        .join(", ");
    GeoLocation::new(lat, lon, label, GeoSource::Provider)
}

/// Caching provider client.
pub struct Geolocator {
    provider: Option<ProviderConfig>,
    client: reqwest::Client,
    cache: Mutex<HashMap<IpAddr, GeoLocation>>,
}

impl Geolocator {
    pub fn new(provider: Option<ProviderConfig>) -> Self {
        let timeout = provider
            .as_ref()
            .map(|p| Duration::from_millis(p.timeout_ms))
            .unwrap_or(Duration::from_secs(1));
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("default HTTP client builds");
        Self {
            provider,
            client,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// A locator that answers `Unknown` for everything.
    pub fn disabled() -> Self {
        Self::new(None)
    }

    pub async fn lookup(&self, ip: IpAddr) -> GeoLocation {
        if is_non_public(ip) {
            return GeoLocation::unknown();
        }
        let Some(provider) = &self.provider else {
            return GeoLocation::unknown();
        };
        if let Some(hit) = self.cache.lock().unwrap().get(&ip) {
            return GeoLocation {
                source: GeoSource::Cache,
                ..hit.clone()
            };
        }
        match self.query(provider, ip).await {
            Some(found) => {
                self.cache.lock().unwrap().insert(ip, found.clone());
                found
            }
            None => GeoLocation::unknown(),
        }
    }

    async fn query(&self, provider: &ProviderConfig, ip: IpAddr) -> Option<GeoLocation> {
        let url = provider.url_for(ip).ok()?;
        let resp = match self.client.get(url).send().await {
            Ok(resp) => resp,
            Err(err) => {
                tracing::warn!(%ip, error = %err, "geolocation provider unreachable");
                return None;
            }
        };
        if !resp.status().is_success() {
            tracing::warn!(%ip, status = %resp.status(), "geolocation provider refused lookup");
            return None;
        }
        let body = resp.bytes().await.ok()?;
        let parsed = parse_provider_response(&body);
        if parsed.is_none() {
            tracing::warn!(%ip, "geolocation provider response lacked coordinates");
        }
        parsed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_has_no_coordinates() {
        let u = GeoLocation::unknown();
        assert_eq!(u.coordinates(), None);
        assert!(GeoLocation::new(1.0, 2.0, "", GeoSource::Unknown).is_none());
        assert!(GeoLocation::new(91.0, 2.0, "", GeoSource::Provider).is_none());
        assert!(GeoLocation::new(0.0, -181.0, "", GeoSource::Provider).is_none());
    }

    #[test]
    fn private_ranges() {
        for ip in [
            "127.0.0.1",
            "10.1.2.3",
            "192.168.0.10",
            "172.16.5.5",
            "169.254.1.1",
            "100.64.0.1",
            "0.0.0.0",
            "::1",
            "fd00::1",
            "fe80::1",
            "::ffff:192.168.1.1",
        ] {
            assert!(is_non_public(ip.parse().unwrap()), "{ip}");
        }
        for ip in ["8.8.8.8", "142.250.1.1", "2606:4700::1111", "::ffff:8.8.4.4"] {
            assert!(!is_non_public(ip.parse().unwrap()), "{ip}");
        }
    }

    #[test]
    fn lenient_parsing() {
        let a = parse_provider_response(
            br#"{"ip":"1.2.3.4","latitude":43.9,"longitude":-78.9,"city":"Oshawa","country_name":"Canada"}"#,
        )
        .unwrap();
        assert_eq!(a.coordinates(), Some((43.9, -78.9)));
        assert_eq!(a.label, "Oshawa, Canada");

        let b = parse_provider_response(br#"{"status":"success","lat":1.5,"lon":2.5,"country":"X"}"#)
            .unwrap();
        assert_eq!(b.coordinates(), Some((1.5, 2.5)));
        assert_eq!(b.label, "X");

        assert!(parse_provider_response(br#"{"city":"Nowhere"}"#).is_none());
        assert!(parse_provider_response(b"not json").is_none());
    }

    #[test]
    fn template_validation() {
        assert!(ProviderConfig::new("http://geo.local/json/{ip}", 500).is_ok());
        assert_eq!(
            ProviderConfig::new("http://geo.local/json/", 500),
            Err(ProviderConfigError::MissingPlaceholder)
        );
        assert_eq!(
            ProviderConfig::new("http://geo.local/{ip}", 0),
            Err(ProviderConfigError::ZeroTimeout)
        );
        assert!(matches!(
            ProviderConfig::new("{ip}/json", 10),
            Err(ProviderConfigError::BadUrl(_))
        ));
    }

    #[tokio::test]
    async fn loopback_needs_no_provider() {
        let geo = Geolocator::new(Some(ProviderConfig::new("http://127.0.0.1:9/{ip}", 50).unwrap()));
        let loc = geo.lookup("127.0.0.1".parse().unwrap()).await;
        assert_eq!(loc.source, GeoSource::Unknown);
    }
}
