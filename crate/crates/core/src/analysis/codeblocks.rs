//! Fenced code block extraction.
//!
//! Rule (CommonMark-like): an opening fence is a line whose trimmed start is
//! three or more backticks, optionally followed by an info string. The block
//! closes at the first later line made only of at least as many backticks.
//! An unclosed block runs to the end of the text.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBlock {
    pub lang: Option<String>,
    pub code: String,
}

fn fence_len(line: &str) -> usize {
    line.trim_start().chars().take_while(|&c| c == '`').count()
}

pub fn extract_code_blocks(text: &str) -> Vec<CodeBlock> {
    let mut blocks = Vec::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let open = fence_len(line);
        if open < 3 {
            continue;
        }
        let info = line.trim_start()[open..].trim();
        // a backtick in the info string means this is inline code, not a fence
        if info.contains('`') {
            continue;
        }
        let lang = info
            .split_whitespace()
            .next()
            .map(|s| s.to_ascii_lowercase());
        let mut body: Vec<&str> = Vec::new();
        for inner in lines.by_ref() {
            let t = inner.trim();
            if fence_len(inner) >= open && t.chars().all(|c| c == '`') {
                break;
            }
            body.push(inner);
        }
        let mut code = body.join("\n");
        if !body.is_empty() {
            code.push('\n');
        }
        blocks.push(CodeBlock { lang, code });
    }
    blocks
}

/// First block whose language is python (or untagged), if any.
pub fn first_python_block(text: &str) -> Option<String> {
    extract_code_blocks(text)
        .into_iter()
        .find(|b| matches!(b.lang.as_deref(), None | Some("python") | Some("py") | Some("python3")))
        .map(|b| b.code)
}
