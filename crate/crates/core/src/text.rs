use unicode_normalization::UnicodeNormalization;

/// NFC form of `s`.
pub fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// Trims surrounding whitespace and applies NFC. Internal whitespace is kept.
pub fn clean(s: &str) -> String {
    nfc(s.trim())
}
