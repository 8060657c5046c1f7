//! Identifier value matching: a stored value links the storage node to every
//! request URL that carries the value, or its base64, MD5, or SHA-1 form, as
//! an exact path segment or query-value token.

use base64::Engine;
use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use sha1::Sha1;

use super::{Edge, EdgeKind, GraphConfig, NodeId};
use crate::domains::UrlParts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueTransform {
    Identity,
    Base64,
    Md5Hex,
    Sha1Hex,
}

/// Transforms the matcher looks for, in match order.
pub const DETECTOR_TRANSFORMS: [ValueTransform; 4] = [
    ValueTransform::Identity,
    ValueTransform::Base64,
    ValueTransform::Md5Hex,
    ValueTransform::Sha1Hex,
];

/// Encodes `value` under one detector transform. Base64 uses the standard
/// alphabet with padding; hashes are lowercase hex.
pub fn transform_value(value: &str, transform: ValueTransform) -> String {
    match transform {
        ValueTransform::Identity => value.to_string(),
        ValueTransform::Base64 => base64::engine::general_purpose::STANDARD.encode(value),
        ValueTransform::Md5Hex => {
            let mut h = Md5::new();
            h.update(value.as_bytes());
            hex_lower(&h.finalize())
        }
        ValueTransform::Sha1Hex => {
            let mut h = Sha1::new();
            h.update(value.as_bytes());
            hex_lower(&h.finalize())
        }
    }
}

fn hex_lower(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Exact-match tokens of a URL: path segments plus query values (each `&`
/// piece split at its first `=`). Unparseable URLs yield no tokens.
pub fn url_tokens(url: &str) -> Vec<String> {
    match UrlParts::parse(url) {
        Err(_) => Vec::new(),
        Ok(parts) => {
            let mut tokens = parts.path_segments();
            tokens.extend(parts.query_pairs().into_iter().map(|(_, v)| v));
            tokens
        }
    }
}

/// Computes every shared-value edge for the given storage values and request
/// URLs. For each value long enough to be an identifier and each transform,
/// matching URLs gain an edge from the storage node, and all matching network
/// nodes gain pairwise edges directed from the earlier to the later request.
pub fn match_values(
    storage_values: &[(NodeId, String)],
    urls: &[(NodeId, u64, String)],
    config: &GraphConfig,
) -> Vec<Edge> {
    let tokenized: Vec<(NodeId, Vec<String>)> =
        urls.iter().map(|(id, _, url)| (*id, url_tokens(url))).collect();
    let mut edges = Vec::new();
    for (storage_node, value) in storage_values {
        if value.len() < config.min_value_len {
            continue;
        }
        for transform in DETECTOR_TRANSFORMS {
            let token = transform_value(value, transform);
            let mut matched: Vec<NodeId> = Vec::new();
            for (node, tokens) in &tokenized {
                if tokens.iter().any(|t| t == &token) {
                    matched.push(*node);
                }
            }
            for &node in &matched {
                if node != *storage_node {
                    edges.push(Edge::new(*storage_node, node, EdgeKind::SharedValue { transform }));
                }
            }
            // Requests are listed in event order, so pair direction follows
            // request time: earlier request -> later request.
            for i in 0..matched.len() {
                for j in (i + 1)..matched.len() {
                    edges.push(Edge::new(
                        matched[i],
                        matched[j],
                        EdgeKind::SharedValue { transform },
                    ));
                }
            }
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(min: usize) -> GraphConfig {
        GraphConfig { min_value_len: min }
    }

    #[test]
    fn identity_match_in_query_value() {
        let edges = match_values(
            &[(0, "user1".to_string())],
            &[(1, 5, "http://tracker3.com/?user_id=user1".to_string())],
            &cfg(5),
        );
        assert_eq!(edges.len(), 1);
        assert_eq!((edges[0].src, edges[0].dst), (0, 1));
        assert_eq!(edges[0].kind, EdgeKind::SharedValue { transform: ValueTransform::Identity });
        assert!(edges[0].flow);
    }

    #[test]
    fn transforms_match_reference_encodings() {
        // Frozen reference outputs: python3 base64/hashlib for "user1".
        assert_eq!(transform_value("user1", ValueTransform::Base64), "dXNlcjE=");
        assert_eq!(
            transform_value("user1", ValueTransform::Md5Hex),
            "24c9e15e52afc47c225b757e7bee1f9d"
        );
        assert_eq!(
            transform_value("user1", ValueTransform::Sha1Hex),
            "b3daa77b4c04a9551b8781d03191fe098f325e67"
        );
        // RFC / FIPS standard vectors for "abc".
        assert_eq!(
            transform_value("abc", ValueTransform::Md5Hex),
            "900150983cd24fb0d6963f7d28e17f72"
        );
        assert_eq!(
            transform_value("abc", ValueTransform::Sha1Hex),
            "a9993e364706816aba3e25717850c26c9cd0d89d"
        );
        assert_eq!(transform_value("abc", ValueTransform::Base64), "YWJj");
    }

    #[test]
    fn base64_token_matches() {
        let edges = match_values(
            &[(0, "user1".to_string())],
            &[(1, 5, "http://sync.net/p?tok=dXNlcjE=".to_string())],
            &cfg(5),
        );
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].kind, EdgeKind::SharedValue { transform: ValueTransform::Base64 });
    }

    #[test]
    fn short_values_are_ignored() {
        let edges = match_values(
            &[(0, "user1".to_string())],
            &[(1, 5, "http://tracker3.com/?user_id=user1".to_string())],
            &cfg(8),
        );
        assert!(edges.is_empty());
    }

    #[test]
    fn substring_does_not_match() {
        let edges = match_values(
            &[(0, "user1".to_string())],
            &[(1, 5, "http://t.com/?id=user12345".to_string())],
            &cfg(5),
        );
        assert!(edges.is_empty());
    }

    #[test]
    fn pairwise_edges_follow_event_order() {
        let edges = match_values(
            &[(0, "identifier00".to_string())],
            &[
                (3, 10, "http://a.com/sync?uid=identifier00".to_string()),
                (7, 20, "http://b.com/p?partner=identifier00".to_string()),
            ],
            &cfg(8),
        );
        let pair: Vec<_> = edges.iter().filter(|e| e.src != 0).collect();
        assert_eq!(pair.len(), 1);
        assert_eq!((pair[0].src, pair[0].dst), (3, 7));
        assert_eq!(edges.len(), 3);
    }

    #[test]
    fn path_segment_matches() {
        let edges = match_values(
            &[(0, "sessiontoken1".to_string())],
            &[(1, 5, "http://t.com/beacon/sessiontoken1".to_string())],
            &cfg(8),
        );
        assert_eq!(edges.len(), 1);
    }
}
