//! JSON bodies for the remote backend protocol.
//!
//! Every role is a `POST` to its own route with the image embedded as
//! base64 PNG. A `200` response carries the role's body; anything else is
//! retried by the client.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::RawDetection;
use crate::geometry::{GeometryError, RasterImage};

pub const SEGMENT_ROUTE: &str = "/v1/segment";
pub const PROPOSE_ROUTE: &str = "/v1/propose";
pub const DETECT_ROUTE: &str = "/v1/detect";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image_png_b64: String,
    #[serde(rename = "box")]
    pub bbox: [u32; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposeRequest {
    pub image_png_b64: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposeResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image_png_b64: String,
    pub labels: Vec<String>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<RawDetection>,
}

pub fn encode_png_b64(image: &RasterImage) -> String {
    STANDARD.encode(image.to_png())
}

pub fn decode_b64(data: &str) -> Result<Vec<u8>, GeometryError> {
    STANDARD
        .decode(data.trim())
        .map_err(|e| GeometryError::Codec(format!("base64: {e}")))
}
