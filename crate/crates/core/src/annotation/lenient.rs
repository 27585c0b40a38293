//! Repair pass for hand-edited annotation files that drop the comma between
//! two array elements or object members, e.g.
//!
//! ```text
//! "mask_2.png"
//! "mask_3.png"
//! ```
//!
//! Only a missing separator between a complete value and the start of the next
//! value or key is inserted; anything else is left for the JSON parser to reject.

/// Returns `text` with missing element separators inserted.
pub fn insert_missing_commas(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 16);
    let mut chars = text.chars().peekable();
    // true when the last significant token completed a value
    let mut after_value = false;
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                if after_value {
                    out.push(',');
                }
                out.push('"');
                let mut escaped = false;
                for s in chars.by_ref() {
                    out.push(s);
                    if escaped {
                        escaped = false;
                    } else if s == '\\' {
                        escaped = true;
                    } else if s == '"' {
                        break;
                    }
                }
                after_value = true;
            }
            '{' | '[' => {
                if after_value {
                    out.push(',');
                }
                out.push(c);
                after_value = false;
            }
            '}' | ']' => {
                out.push(c);
                after_value = true;
            }
            ',' | ':' => {
                out.push(c);
                after_value = false;
            }
            c if c.is_whitespace() => out.push(c),
            c => {
                // number or literal
                if after_value {
                    out.push(',');
                }
                out.push(c);
                while let Some(&n) = chars.peek() {
                    if n.is_alphanumeric() || matches!(n, '.' | '+' | '-') {
                        out.push(n);
                        chars.next();
                    } else {
                        break;
                    }
                }
                after_value = true;
            }
        }
    }
    out
}
