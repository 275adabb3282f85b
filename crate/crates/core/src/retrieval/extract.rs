//! HTML to plain text.

/// Bumped whenever extraction output changes; stored alongside cached bodies.
pub const EXTRACTOR_VERSION: u32 = 1;

/// Elements whose whole content is dropped.
const SKIPPED: &[&str] = &[
    "script", "style", "noscript", "nav", "header", "footer", "aside", "template", "svg", "iframe",
    "head", "form", "button", "select",
];

const BLOCK: &[&str] = &[
    "p",
    "div",
    "br",
    "li",
    "ul",
    "ol",
    "dl",
    "dt",
    "dd",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "tr",
    "td",
    "th",
    "table",
    "thead",
    "tbody",
    "section",
    "article",
    "main",
    "blockquote",
    "pre",
    "hr",
    "title",
    "body",
    "html",
    "figure",
    "figcaption",
    "caption",
];

struct Tag {
    name: String,
    closing: bool,
    self_closing: bool,
}

/// Parses the tag starting at `s[0] == '<'`. Returns `None` when `<` does not
/// begin a tag (treated as text).
fn parse_tag(s: &str) -> Option<(Tag, usize)> {
    let bytes = s.as_bytes();
    let mut i = 1;
    let closing = bytes.get(i) == Some(&b'/');
    if closing {
        i += 1;
    }
    let name_start = i;
    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'-') {
        i += 1;
    }
    if i == name_start {
        return None;
    }
    let name = s[name_start..i].to_ascii_lowercase();
    // scan to the closing '>' honoring quoted attribute values
    let mut quote: Option<u8> = None;
    while i < bytes.len() {
        let b = bytes[i];
        match quote {
            Some(q) if b == q => quote = None,
            Some(_) => {}
            None if b == b'"' || b == b'\'' => quote = Some(b),
            None if b == b'>' => {
                let self_closing = i > 0 && bytes[i - 1] == b'/';
                return Some((
                    Tag {
                        name,
                        closing,
                        self_closing,
                    },
                    i + 1,
                ));
            }
            None => {}
        }
        i += 1;
    }
    None
}

/// Finds the end of `</name ...>` (case-insensitive) in `s`, returning the byte
/// offset just past it.
fn find_close(s: &str, name: &str) -> Option<usize> {
    let lower = s.to_ascii_lowercase();
    let needle = format!("</{name}");
    let mut from = 0;
    while let Some(pos) = lower[from..].find(&needle) {
        let at = from + pos;
        let after = at + needle.len();
        let next = lower.as_bytes().get(after).copied();
        if matches!(
            next,
            Some(b'>') | Some(b' ') | Some(b'\t') | Some(b'\n') | Some(b'\r') | None
        ) {
            return Some(
                lower[after..]
                    .find('>')
                    .map(|p| after + p + 1)
                    .unwrap_or(s.len()),
            );
        }
        from = after;
    }
    None
}

/// Extracts readable text from markup.
///
/// Script, style and navigation boilerplate is removed, block elements become
/// line breaks, entities are decoded and whitespace is collapsed. Never fails;
/// malformed markup degrades to tag stripping.
pub fn extract_text(html: &str) -> String {
    let mut raw = String::with_capacity(html.len());
    let mut rest = html;
    while let Some(pos) = rest.find('<') {
        raw.push_str(&rest[..pos]);
        rest = &rest[pos..];
        if rest.starts_with("<!--") {
            rest = rest.find("-->").map(|e| &rest[e + 3..]).unwrap_or("");
            continue;
        }
        if rest.starts_with("<!") || rest.starts_with("<?") {
            rest = rest.find('>').map(|e| &rest[e + 1..]).unwrap_or("");
            continue;
        }
        match parse_tag(rest) {
            Some((tag, len)) => {
                rest = &rest[len..];
                if !tag.closing && !tag.self_closing && SKIPPED.contains(&tag.name.as_str()) {
                    rest = match find_close(rest, &tag.name) {
                        Some(end) => &rest[end..],
                        None => "",
                    };
                    raw.push('\n');
                } else if BLOCK.contains(&tag.name.as_str()) {
                    raw.push('\n');
                }
            }
            None => {
                raw.push('<');
                rest = &rest[1..];
            }
        }
    }
    raw.push_str(rest);

    let decoded = html_escape::decode_html_entities(&raw);
    decoded
        .lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_scripts() {
        assert_eq!(
            extract_text("<p>Composed in 1831.</p><script>x()</script>"),
            "Composed in 1831."
        );
    }

    #[test]
    fn blocks_become_lines() {
        assert_eq!(extract_text("<div>A</div><div>B</div>"), "A\nB");
    }

    #[test]
    fn decodes_entities() {
        assert_eq!(extract_text("&eacute;tude"), "étude");
        assert_eq!(
            extract_text("<p>Fish &amp; chips &#233;</p>"),
            "Fish & chips é"
        );
    }

    #[test]
    fn drops_boilerplate_and_comments() {
        let html = r#"<!DOCTYPE html><html><head><title>T</title><style>p{}</style></head>
            <body><nav><a href="/">Home</a></nav><!-- c --><h1>Étude</h1>
            <p class="x">A <b>bold</b>  claim.</p><footer>(c)</footer></body></html>"#;
        assert_eq!(extract_text(html), "Étude\nA bold claim.");
    }

    #[test]
    fn quoted_gt_in_attribute() {
        assert_eq!(extract_text(r#"<a title="a>b">link</a>"#), "link");
    }

    #[test]
    fn malformed_markup_degrades() {
        assert_eq!(extract_text("1 < 2 and <p>ok"), "1 < 2 and\nok");
        assert_eq!(extract_text("<script>never closed"), "");
        assert_eq!(extract_text("<p unterminated"), "<p unterminated");
    }
}
