//! Wire format shared by the HTTP and stdio scorer transports.
//!
//! A request payload is
//!
//! ```text
//! [u32 big-endian: header length][header: UTF-8 JSON][tensor: f32 little-endian]
//! ```
//!
//! The header is the compact JSON object
//! `{"batch","height","width","channels","dtype":"f32","layout":"CHW","target_class","score_kind","scores_all"}`
//! with keys in that order. The tensor holds `batch * channels * height * width`
//! values, image-major then channel, row, column.
//!
//! The response payload is the JSON object `{"scores":[...]}`: one number per
//! image, or one array of class scores per image when `scores_all` is set.
//!
//! Over HTTP the request payload is the body of `POST /score`
//! (`Content-Type: application/octet-stream`) and the response is the JSON
//! body. Over stdio every payload, in both directions, is wrapped in a frame
//! made of a `u32` big-endian length followed by the payload.

use std::io::{Read, Write};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{ScoreKind, ScorerError};
use crate::Image;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestHeader {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub dtype: String,
    pub layout: String,
    pub target_class: usize,
    pub score_kind: ScoreKind,
    #[serde(default)]
    pub scores_all: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoresPayload {
    Single(Vec<f64>),
    All(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: ScoresPayload,
}

pub fn encode_request(
    images: &[Image],
    target_class: usize,
    score_kind: ScoreKind,
    scores_all: bool,
) -> Result<Vec<u8>, ScorerError> {
    let (c, h, w) = images.first().map(|i| i.dim()).unwrap_or((0, 0, 0));
    if images.iter().any(|i| i.dim() != (c, h, w)) {
        return Err(ScorerError::protocol("all images in a batch must share one shape"));
    }
    let header = RequestHeader {
        batch: images.len(),
        height: h,
        width: w,
        channels: c,
        dtype: "f32".into(),
        layout: "CHW".into(),
        target_class,
        score_kind,
        scores_all,
    };
    let json = serde_json::to_vec(&header).map_err(|e| ScorerError::protocol(e.to_string()))?;
    let mut out = Vec::with_capacity(4 + json.len() + 4 * images.len() * c * h * w);
    out.extend_from_slice(&(json.len() as u32).to_be_bytes());
    out.extend_from_slice(&json);
    for img in images {
        for v in img.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_request(payload: &[u8]) -> Result<(RequestHeader, Vec<Array3<f32>>), ScorerError> {
    if payload.len() < 4 {
        return Err(ScorerError::protocol("payload shorter than its header prefix"));
    }
    let hlen = u32::from_be_bytes(payload[..4].try_into().unwrap()) as usize;
    let body = &payload[4..];
    if body.len() < hlen {
        return Err(ScorerError::protocol("truncated header"));
    }
    let header: RequestHeader =
        serde_json::from_slice(&body[..hlen]).map_err(|e| ScorerError::protocol(e.to_string()))?;
    if header.dtype != "f32" || header.layout != "CHW" {
        return Err(ScorerError::protocol(format!(
            "unsupported dtype/layout {}/{}",
            header.dtype, header.layout
        )));
    }
    let per = header.channels * header.height * header.width;
    let tensor = &body[hlen..];
    if tensor.len() != 4 * per * header.batch {
        return Err(ScorerError::protocol(format!(
            "tensor has {} bytes, header implies {}",
            tensor.len(),
            4 * per * header.batch
        )));
    }
    let values: Vec<f32> = tensor
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let images = values
        .chunks_exact(per.max(1))
        .take(header.batch)
        .map(|chunk| {
            Array3::from_shape_vec((header.channels, header.height, header.width), chunk.to_vec())
                .expect("chunk length matches shape")
        })
        .collect();
    Ok((header, images))
}

pub fn decode_response(bytes: &[u8]) -> Result<ScoresPayload, ScorerError> {
    let resp: ScoreResponse = serde_json::from_slice(bytes)
        .map_err(|e| ScorerError::protocol(format!("bad response: {e}")))?;
    Ok(resp.scores)
}

pub fn encode_response(scores: &ScoresPayload) -> Vec<u8> {
    serde_json::to_vec(&ScoreResponse { scores: scores.clone() }).expect("scores serialize")
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> std::io::Result<()> {
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_be_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub(crate) fn single_scores(payload: ScoresPayload) -> Result<Vec<f64>, ScorerError> {
    match payload {
        ScoresPayload::Single(v) => Ok(v),
        ScoresPayload::All(_) => Err(ScorerError::protocol("expected one score per image")),
    }
}

pub(crate) fn all_scores(payload: ScoresPayload) -> Result<Vec<Vec<f64>>, ScorerError> {
    match payload {
        ScoresPayload::All(v) => Ok(v),
        // An empty batch parses as Single.
        ScoresPayload::Single(v) if v.is_empty() => Ok(Vec::new()),
        ScoresPayload::Single(_) => Err(ScorerError::protocol("expected class-score arrays")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let img = Image::from_shape_vec((1, 1, 2), vec![0.25, 1.0]).unwrap();
        let bytes = encode_request(&[img], 7, ScoreKind::Logit, false).unwrap();
        let hlen = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        assert_eq!(
            std::str::from_utf8(&bytes[4..4 + hlen]).unwrap(),
            r#"{"batch":1,"height":1,"width":2,"channels":1,"dtype":"f32","layout":"CHW","target_class":7,"score_kind":"logit","scores_all":false}"#
        );
        assert_eq!(&bytes[4 + hlen..], &[0, 0, 0x80, 0x3e, 0, 0, 0x80, 0x3f]);
    }

    #[test]
    fn responses() {
        assert_eq!(decode_response(br#"{"scores":[0.5,1]}"#).unwrap(), ScoresPayload::Single(vec![0.5, 1.0]));
        assert_eq!(
            decode_response(br#"{"scores":[[0.1,0.9]]}"#).unwrap(),
            ScoresPayload::All(vec![vec![0.1, 0.9]])
        );
        assert!(decode_response(b"{}").is_err());
    }

    #[test]
    fn rejects_bad_payloads() {
        assert!(decode_request(&[0, 0]).is_err());
        let img = Image::zeros((1, 2, 2));
        let mut bytes = encode_request(&[img], 0, ScoreKind::Probability, false).unwrap();
        bytes.pop();
        assert!(decode_request(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn f32_payload_round_trip(vals in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 2 * 3 * 2 * 4)) {
            let imgs: Vec<Image> = vals
                .chunks(3 * 2 * 4)
                .map(|c| Image::from_shape_vec((3, 2, 4), c.iter().map(|&v| v as f64).collect()).unwrap())
                .collect();
            let bytes = encode_request(&imgs, 1, ScoreKind::Probability, true).unwrap();
            let (header, decoded) = decode_request(&bytes).unwrap();
            prop_assert_eq!(header.batch, 2);
            prop_assert!(header.scores_all);
            let flat: Vec<f32> = decoded.iter().flat_map(|a| a.iter().copied()).collect();
            prop_assert_eq!(flat.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn frames_round_trip(payload in prop::collection::vec(any::<u8>(), 0..512)) {
            let mut buf = Vec::new();
            write_frame(&mut buf, &payload).unwrap();
            prop_assert_eq!(read_frame(&mut buf.as_slice()).unwrap(), payload);
        }
    }
}
