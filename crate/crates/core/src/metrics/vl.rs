//! Client for an external vision-language judge.
//!
//! Request: `{"prompt", "condition", "generated"}` with PPM images in base64.
//! Response: `{"consistency": 0..=4, "adherence": 0..=4}`. The score is the
//! mean of the two.

use std::time::Duration;

use base64::Engine;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;

pub trait VlEvaluator {
    fn score(&self, prompt: &str, condition: &Image, generated: &Image) -> Result<f64>;
}

fn ppm_base64(img: &Image) -> Result<String> {
    let mut buf = Vec::new();
    img.write_ppm(&mut buf)?;
    Ok(base64::engine::general_purpose::STANDARD.encode(buf))
}

pub fn vl_request_body(prompt: &str, condition: &Image, generated: &Image) -> Result<String> {
    let body = serde_json::json!({
        "prompt": prompt,
        "condition": ppm_base64(condition)?,
        "generated": ppm_base64(generated)?,
    });
    Ok(body.to_string())
}

/// Validates a response document and returns the mean score.
pub fn parse_vl_response(text: &str) -> Result<f64> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Protocol(format!("response is not JSON: {e}")))?;
    let field = |name: &str| -> Result<u64> {
        let x = v
            .get(name)
            .and_then(|x| x.as_u64())
            .ok_or_else(|| Error::Protocol(format!("missing integer field `{name}`")))?;
        if x > 4 {
            return Err(Error::Protocol(format!("`{name}` = {x} is outside 0..=4")));
        }
        Ok(x)
    };
    let (c, a) = (field("consistency")?, field("adherence")?);
    Ok((c + a) as f64 / 2.0)
}

/// Blocking HTTP client; one retry on timeout.
#[derive(Clone, Debug)]
pub struct HttpEvaluator {
    pub endpoint: String,
    pub timeout: Duration,
}

impl HttpEvaluator {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout,
        }
    }

    fn call(&self, body: &str) -> std::result::Result<String, ureq::Error> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        agent
            .post(&self.endpoint)
            .content_type("application/json")
            .send(body)?
            .body_mut()
            .read_to_string()
    }
}

fn is_timeout(e: &ureq::Error) -> bool {
    match e {
        ureq::Error::Timeout(_) => true,
        ureq::Error::Io(io) => matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock),
        _ => false,
    }
}

impl VlEvaluator for HttpEvaluator {
    fn score(&self, prompt: &str, condition: &Image, generated: &Image) -> Result<f64> {
        let body = vl_request_body(prompt, condition, generated)?;
        let mut last = None;
        for _ in 0..2 {
            match self.call(&body) {
                Ok(text) => return parse_vl_response(&text),
                Err(e) if is_timeout(&e) => last = Some(e),
                Err(ureq::Error::StatusCode(code)) => {
                    return Err(Error::Protocol(format!("evaluator answered HTTP {code}")))
                }
                Err(e) => return Err(Error::Transport(e.to_string())),
            }
        }
        Err(Error::Transport(format!(
            "evaluator timed out twice: {}",
            last.map(|e| e.to_string()).unwrap_or_default()
        )))
    }
}

/// Deterministic stand-in: both scores derive from a SHA-256 of the request.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockEvaluator;

impl MockEvaluator {
    pub fn respond(&self, prompt: &str, condition: &Image, generated: &Image) -> String {
        let mut h = Sha256::new();
        h.update(prompt.as_bytes());
        h.update(condition.to_rgb8());
        h.update(generated.to_rgb8());
        let d = h.finalize();
        serde_json::json!({ "consistency": d[0] % 5, "adherence": d[1] % 5 }).to_string()
    }
}

impl VlEvaluator for MockEvaluator {
    fn score(&self, prompt: &str, condition: &Image, generated: &Image) -> Result<f64> {
        parse_vl_response(&self.respond(prompt, condition, generated))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_examples() {
        assert_eq!(parse_vl_response(r#"{"consistency": 4, "adherence": 2}"#).unwrap(), 3.0);
        assert_eq!(parse_vl_response(r#"{"consistency": 0, "adherence": 0}"#).unwrap(), 0.0);
        assert!(matches!(
            parse_vl_response(r#"{"consistency": 5, "adherence": 2}"#),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(parse_vl_response("{}"), Err(Error::Protocol(_))));
        assert!(matches!(parse_vl_response("nope"), Err(Error::Protocol(_))));
    }

    #[test]
    fn mock_is_deterministic_and_in_range() {
        let a = Image::filled(4, 4, [0.2; 3]);
        let b = Image::filled(4, 4, [0.7; 3]);
        let m = MockEvaluator;
        let s = m.score("a red circle", &a, &b).unwrap();
        assert_eq!(s, m.score("a red circle", &a, &b).unwrap());
        assert!((0.0..=4.0).contains(&s));
    }

    #[test]
    fn request_body_carries_images() {
        let a = Image::filled(2, 2, [0.0; 3]);
        let body: serde_json::Value = serde_json::from_str(&vl_request_body("p", &a, &a).unwrap()).unwrap();
        let raw = base64::engine::general_purpose::STANDARD
            .decode(body["generated"].as_str().unwrap())
            .unwrap();
        assert_eq!(Image::read_ppm(&raw[..]).unwrap(), a);
    }
}
