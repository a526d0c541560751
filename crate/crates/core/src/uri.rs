//! Endpoint addresses of the form `scheme:path?k1=v1&k2=v2`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UriError {
    #[error("empty endpoint uri")]
    EmptyInput,
    #[error("endpoint uri '{0}' has no scheme")]
    MissingScheme(String),
    #[error("invalid scheme '{0}': expected [a-z][a-z0-9]*")]
    InvalidScheme(String),
    #[error("malformed parameter '{0}': expected key=value")]
    BadParam(String),
    #[error("duplicate parameter key '{0}'")]
    DuplicateParamKey(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EndpointUri {
    scheme: String,
    path: String,
    params: Vec<(String, String)>,
}

pub fn is_valid_scheme(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
}

impl EndpointUri {
    pub fn new(
        scheme: impl Into<String>,
        path: impl Into<String>,
    ) -> Result<EndpointUri, UriError> {
        let scheme = scheme.into();
        if !is_valid_scheme(&scheme) {
            return Err(UriError::InvalidScheme(scheme));
        }
        Ok(EndpointUri {
            scheme,
            path: path.into(),
            params: Vec::new(),
        })
    }

    pub fn with_param(
        mut self,
        key: impl Into<String>,
        value: impl Into<String>,
    ) -> Result<EndpointUri, UriError> {
        let key = key.into();
        if key.is_empty() {
            return Err(UriError::BadParam(format!("={}", value.into())));
        }
        if self.param(&key).is_some() {
            return Err(UriError::DuplicateParamKey(key));
        }
        self.params.push((key, value.into()));
        Ok(self)
    }

    pub fn scheme(&self) -> &str {
        &self.scheme
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn params(&self) -> &[(String, String)] {
        &self.params
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Same address under a different scheme (used by alias resolution).
    pub fn with_scheme(&self, scheme: &str) -> Result<EndpointUri, UriError> {
        if !is_valid_scheme(scheme) {
            return Err(UriError::InvalidScheme(scheme.to_string()));
        }
        Ok(EndpointUri {
            scheme: scheme.to_string(),
            ..self.clone()
        })
    }
}

/// Parses an endpoint uri. Whitespace around `:`, `?`, `=` and `&` is ignored,
/// so typeset forms such as `mqtt : foo? host=tcp://broker` are accepted.
pub fn parse_uri(text: &str) -> Result<EndpointUri, UriError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(UriError::EmptyInput);
    }
    let (scheme, rest) = text
        .split_once(':')
        .ok_or_else(|| UriError::MissingScheme(text.to_string()))?;
    let scheme = scheme.trim();
    if scheme.is_empty() {
        return Err(UriError::MissingScheme(text.to_string()));
    }
    if !is_valid_scheme(scheme) {
        return Err(UriError::InvalidScheme(scheme.to_string()));
    }
    let (path, query) = match rest.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (rest, None),
    };
    let mut uri = EndpointUri {
        scheme: scheme.to_string(),
        path: path.trim().to_string(),
        params: Vec::new(),
    };
    if let Some(query) = query {
        if query.trim().is_empty() {
            return Ok(uri);
        }
        for pair in query.split('&') {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| UriError::BadParam(pair.trim().to_string()))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(UriError::BadParam(pair.trim().to_string()));
            }
            if uri.param(k).is_some() {
                return Err(UriError::DuplicateParamKey(k.to_string()));
            }
            uri.params.push((k.to_string(), v.to_string()));
        }
    }
    Ok(uri)
}

pub fn format_uri(uri: &EndpointUri) -> String {
    uri.to_string()
}

impl fmt::Display for EndpointUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.scheme, self.path)?;
        for (i, (k, v)) in self.params.iter().enumerate() {
            let sep = if i == 0 { '?' } else { '&' };
            write!(f, "{sep}{k}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for EndpointUri {
    type Err = UriError;

    fn from_str(s: &str) -> Result<EndpointUri, UriError> {
        parse_uri(s)
    }
}
