/// Lowercases `text` and collapses every run of non-alphanumeric characters
/// into a single underscore, trimming underscores at both ends.
///
/// Only ASCII letters and digits survive, so the result always matches
/// `^[a-z0-9_]*$`.
pub fn slugify(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_separator = false;
    for ch in text.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_separator && !out.is_empty() {
                out.push('_');
            }
            pending_separator = false;
            out.push(ch.to_ascii_lowercase());
        } else {
            pending_separator = true;
        }
    }
    out
}

/// Joins local names into a dotted name path.
pub fn build_name_path<S: AsRef<str>>(local_names: &[S]) -> String {
    local_names
        .iter()
        .map(|s| s.as_ref())
        .collect::<Vec<_>>()
        .join(".")
}

pub(crate) fn is_valid_static_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}
