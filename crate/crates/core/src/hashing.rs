use serde::Serialize;
use sha2::{Digest, Sha256};

/// Canonical JSON: object keys sorted, no insignificant whitespace.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    // serde_json's default map keeps keys sorted
    let v = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string(&v).expect("json value")
}

/// First 16 hex digits of the SHA-256 of the canonical JSON form.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let digest = Sha256::digest(canonical_json(value).as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn key_order_does_not_matter() {
        let a: HashMap<&str, i32> = [("a", 1), ("b", 2), ("c", 3)].into();
        let b: HashMap<&str, i32> = [("c", 3), ("a", 1), ("b", 2)].into();
        assert_eq!(canonical_json(&a), r#"{"a":1,"b":2,"c":3}"#);
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 16);
        let c: HashMap<&str, i32> = [("a", 1), ("b", 2), ("c", 4)].into();
        assert_ne!(config_hash(&a), config_hash(&c));
    }
}
