use std::fmt;

/// File content split into lines on LF.
///
/// A CR before the LF stays part of the line, so a tool that rewrites CRLF to
/// LF shows up as an edit. Whether the last line carries its newline is kept
/// alongside the lines rather than inside them.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct FileText {
    pub lines: Vec<String>,
    /// True when the content is non-empty and does not end with `\n`.
    pub missing_newline: bool,
}

impl FileText {
    pub fn new(lines: Vec<String>, missing_newline: bool) -> Self {
        FileText {
            missing_newline: missing_newline && !lines.is_empty(),
            lines,
        }
    }

    pub fn parse(content: &str) -> Self {
        if content.is_empty() {
            return FileText::default();
        }
        let missing_newline = !content.ends_with('\n');
        let body = content.strip_suffix('\n').unwrap_or(content);
        FileText {
            lines: body.split('\n').map(str::to_owned).collect(),
            missing_newline,
        }
    }

    /// Decodes UTF-8 bytes; `None` for anything else.
    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        std::str::from_utf8(bytes).ok().map(FileText::parse)
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Lines paired with a flag that is set only on a last line lacking its
    /// newline, so diffing the keys sees a newline-only change.
    pub(crate) fn keyed_lines(&self) -> Vec<(&str, bool)> {
        let last = self.lines.len().wrapping_sub(1);
        self.lines
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i == last && self.missing_newline))
            .collect()
    }

    pub fn to_content(&self) -> String {
        let mut out = self.lines.join("\n");
        if !self.lines.is_empty() && !self.missing_newline {
            out.push('\n');
        }
        out
    }
}

impl fmt::Debug for FileText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("FileText").field(&self.to_content()).finish()
    }
}

impl From<&str> for FileText {
    fn from(s: &str) -> Self {
        FileText::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_lf_only() {
        let t = FileText::parse("a\r\nb\n");
        assert_eq!(t.lines, vec!["a\r", "b"]);
        assert!(!t.missing_newline);
    }

    #[test]
    fn tracks_missing_final_newline() {
        let t = FileText::parse("a\nb");
        assert_eq!(t.lines, vec!["a", "b"]);
        assert!(t.missing_newline);
        assert_eq!(t.to_content(), "a\nb");
    }

    #[test]
    fn empty_and_blank() {
        assert_eq!(FileText::parse("").lines, Vec::<String>::new());
        let blank = FileText::parse("\n");
        assert_eq!(blank.lines, vec![""]);
        assert_eq!(blank.to_content(), "\n");
    }

    #[test]
    fn roundtrips_content() {
        for s in ["", "\n", "x", "x\n", "\n\n", "a\r\n\r\nb", "a\n\nb\n"] {
            assert_eq!(FileText::parse(s).to_content(), s);
        }
    }

    #[test]
    fn rejects_invalid_utf8() {
        assert!(FileText::from_bytes(&[0xff, b'\n']).is_none());
    }
}
