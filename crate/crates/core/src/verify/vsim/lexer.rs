use super::SimError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    /// `$display`, `$finish`, ...
    System(String),
    Number { width: Option<u32>, value: u64 },
    Str(String),
    Punct(&'static str),
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
}

const PUNCT: [&str; 35] = [
    "===", "!==", "<<<", ">>>", "==", "!=", "<=", ">=", "&&", "||", "<<", ">>", "~&", "~|", "~^",
    "(", ")", "[", "]", "{", "}", ";", ",", ".", ":", "?", "=", "+", "-", "*", "&", "|", "^", "~",
    "!",
];
const PUNCT_TAIL: [&str; 4] = ["<", ">", "#", "@"];

pub fn lex(src: &str) -> Result<Vec<Token>, SimError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c == '\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if src[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if src[i..].starts_with("/*") {
            let end = src[i + 2..]
                .find("*/")
                .ok_or_else(|| SimError::syntax(line, "unterminated block comment"))?;
            line += src[i..i + 2 + end].matches('\n').count();
            i += end + 4;
            continue;
        }
        if c == '`' {
            // compiler directives such as `timescale are ignored
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == '"' {
            let end = src[i + 1..]
                .find('"')
                .ok_or_else(|| SimError::syntax(line, "unterminated string"))?;
            out.push(Token { tok: Tok::Str(src[i + 1..i + 1 + end].to_string()), line });
            i += end + 2;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' || c == '$' {
            let start = i;
            i += 1;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$') {
                i += 1;
            }
            let word = &src[start..i];
            let tok = if let Some(sys) = word.strip_prefix('$') {
                Tok::System(sys.to_string())
            } else {
                Tok::Ident(word.to_string())
            };
            out.push(Token { tok, line });
            continue;
        }
        if c.is_ascii_digit() || c == '\'' {
            let (tok, len) = lex_number(&src[i..], line)?;
            out.push(Token { tok, line });
            i += len;
            continue;
        }
        if let Some(p) = PUNCT.iter().chain(PUNCT_TAIL.iter()).find(|p| src[i..].starts_with(**p)) {
            out.push(Token { tok: Tok::Punct(p), line });
            i += p.len();
            continue;
        }
        return Err(SimError::syntax(line, format!("unexpected character '{c}'")));
    }
    Ok(out)
}

fn lex_number(s: &str, line: usize) -> Result<(Tok, usize), SimError> {
    let b = s.as_bytes();
    let mut i = 0;
    while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'_') {
        i += 1;
    }
    let lead: String = s[..i].chars().filter(|c| *c != '_').collect();
    // skip spaces between size and base, e.g. 8 'hFF
    let mut j = i;
    while j < b.len() && b[j] == b' ' {
        j += 1;
    }
    if j < b.len() && b[j] == b'\'' {
        let width = if lead.is_empty() {
            None
        } else {
            let w: u32 = lead.parse().map_err(|_| SimError::syntax(line, "bad literal width"))?;
            if w == 0 || w > 64 {
                return Err(SimError::unsupported(line, format!("literal width {w}")));
            }
            Some(w)
        };
        j += 1;
        if j < b.len() && (b[j] == b's' || b[j] == b'S') {
            j += 1;
        }
        let radix = match b.get(j).map(|c| c.to_ascii_lowercase()) {
            Some(b'h') => 16,
            Some(b'd') => 10,
            Some(b'b') => 2,
            Some(b'o') => 8,
            _ => return Err(SimError::syntax(line, "bad literal base")),
        };
        j += 1;
        let start = j;
        while j < b.len() && (b[j].is_ascii_alphanumeric() || b[j] == b'_') {
            j += 1;
        }
        let digits: String = s[start..j].chars().filter(|c| *c != '_').collect();
        if digits.is_empty() {
            return Err(SimError::syntax(line, "literal without digits"));
        }
        if digits.chars().any(|c| matches!(c, 'x' | 'X' | 'z' | 'Z' | '?')) {
            return Err(SimError::unsupported(line, "x/z literals"));
        }
        let value = u64::from_str_radix(&digits, radix)
            .map_err(|_| SimError::syntax(line, format!("bad literal digits '{digits}'")))?;
        Ok((Tok::Number { width, value }, j))
    } else {
        if lead.is_empty() {
            return Err(SimError::syntax(line, "bad number"));
        }
        let value: u64 = lead.parse().map_err(|_| SimError::syntax(line, "number too large"))?;
        Ok((Tok::Number { width: None, value }, i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_literals_and_operators() {
        let toks = lex("assign y = sel ? 8'hF_F : 4'b1010 >> 2; // c\n").unwrap();
        let kinds: Vec<_> = toks.iter().map(|t| t.tok.clone()).collect();
        assert_eq!(kinds[0], Tok::Ident("assign".into()));
        assert!(kinds.contains(&Tok::Number { width: Some(8), value: 255 }));
        assert!(kinds.contains(&Tok::Number { width: Some(4), value: 10 }));
        assert!(kinds.contains(&Tok::Punct(">>")));
        assert_eq!(toks.last().unwrap().tok, Tok::Punct(";"));
    }

    #[test]
    fn tracks_lines_and_rejects_junk() {
        let toks = lex("a\n/* x\n y */ b").unwrap();
        assert_eq!(toks[1].line, 3);
        assert!(lex("a = 1 ` \n b ∆").is_err());
        assert!(matches!(lex("8'hxx"), Err(SimError::Unsupported { .. })));
    }
}
