use super::LogicError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Int(i64),
    Num(f64),
    Str(String),
    And,
    Or,
    Not,
    Forall,
    Exists,
    In,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    DotDot,
    Plus,
    Minus,
    Star,
    Ge,
    Gt,
    Le,
    Lt,
    Eq,
    Ne,
    Arrow,
    At,
    Eof,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Tok::Ident(n) => return write!(f, "`{n}`"),
            Tok::Int(v) => return write!(f, "`{v}`"),
            Tok::Num(v) => return write!(f, "`{v}`"),
            Tok::Str(v) => return write!(f, "{v:?}"),
            Tok::And => "and",
            Tok::Or => "or",
            Tok::Not => "not",
            Tok::Forall => "forall",
            Tok::Exists => "exists",
            Tok::In => "in",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Comma => ",",
            Tok::Colon => ":",
            Tok::DotDot => "..",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Ge => ">=",
            Tok::Gt => ">",
            Tok::Le => "<=",
            Tok::Lt => "<",
            Tok::Eq => "=",
            Tok::Ne => "!=",
            Tok::Arrow => "->",
            Tok::At => "@",
            Tok::Eof => return f.write_str("end of input"),
        };
        write!(f, "`{s}`")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

const KEYWORDS: [&str; 6] = ["and", "or", "not", "forall", "exists", "in"];

pub(crate) fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

pub(crate) fn lex(src: &str) -> Result<Vec<Token>, LogicError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, msg: String| LogicError::Syntax { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        let peek = chars.get(i + 1).copied();
        let (tok, len) = if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            let word: String = chars[i..j].iter().collect();
            let tok = match word.as_str() {
                "and" => Tok::And,
                "or" => Tok::Or,
                "not" => Tok::Not,
                "forall" => Tok::Forall,
                "exists" => Tok::Exists,
                "in" => Tok::In,
                _ => Tok::Ident(word),
            };
            (tok, j - i)
        } else if c.is_ascii_digit() || (c == '.' && peek.is_some_and(|p| p.is_ascii_digit())) {
            let mut j = i;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            let mut real = false;
            // a `.` followed by `.` is a range operator, not a fraction
            if j < chars.len() && chars[j] == '.' && chars.get(j + 1) != Some(&'.') {
                real = true;
                j += 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                let mut k = j + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    real = true;
                    j = k;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
            }
            let text: String = chars[i..j].iter().collect();
            let tok = if real {
                Tok::Num(
                    text.parse()
                        .map_err(|_| err(line, col, format!("bad number `{text}`")))?,
                )
            } else {
                match text.parse::<i64>() {
                    Ok(v) => Tok::Int(v),
                    Err(_) => Tok::Num(
                        text.parse()
                            .map_err(|_| err(line, col, format!("bad number `{text}`")))?,
                    ),
                }
            };
            (tok, j - i)
        } else if c == '"' {
            let mut j = i + 1;
            let mut s = String::new();
            loop {
                match chars.get(j) {
                    None | Some('\n') => return Err(err(line, col, "unterminated string".into())),
                    Some('"') => break,
                    Some('\\') if j + 1 < chars.len() => {
                        s.push(chars[j + 1]);
                        j += 2;
                    }
                    Some(ch) => {
                        s.push(*ch);
                        j += 1;
                    }
                }
            }
            (Tok::Str(s), j + 1 - i)
        } else {
            match (c, peek) {
                ('>', Some('=')) => (Tok::Ge, 2),
                ('<', Some('=')) => (Tok::Le, 2),
                ('=', Some('=')) => (Tok::Eq, 2),
                ('!', Some('=')) => (Tok::Ne, 2),
                ('-', Some('>')) => (Tok::Arrow, 2),
                ('.', Some('.')) => (Tok::DotDot, 2),
                ('>', _) => (Tok::Gt, 1),
                ('<', _) => (Tok::Lt, 1),
                ('=', _) => (Tok::Eq, 1),
                ('(', _) => (Tok::LParen, 1),
                (')', _) => (Tok::RParen, 1),
                ('[', _) => (Tok::LBracket, 1),
                (']', _) => (Tok::RBracket, 1),
                (',', _) => (Tok::Comma, 1),
                (':', _) => (Tok::Colon, 1),
                ('+', _) => (Tok::Plus, 1),
                ('-', _) => (Tok::Minus, 1),
                ('*', _) => (Tok::Star, 1),
                ('@', _) => (Tok::At, 1),
                _ => return Err(err(line, col, format!("unexpected character `{c}`"))),
            }
        };
        out.push(Token {
            tok,
            line: start_line,
            col: start_col,
        });
        i += len;
        col += len;
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}
