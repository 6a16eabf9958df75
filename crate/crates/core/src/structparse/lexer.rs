//! A small table-driven lexer for identifier extraction.
//!
//! One scanner serves every supported language; a [`LanguageTable`] only
//! supplies keywords and comment/string conventions. Operators are emitted
//! one character at a time since only identifier boundaries matter here.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexKind {
    Identifier,
    Keyword,
    Operator,
    Number,
    String,
    Comment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lexeme {
    pub kind: LexKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug)]
pub struct LanguageTable {
    pub name: &'static str,
    pub aliases: &'static [&'static str],
    pub keywords: &'static [&'static str],
    pub line_comment: &'static str,
    pub block_comment: Option<(&'static str, &'static str)>,
    /// Python-style `'''`/`"""` strings and `r"..."`-style prefixes.
    pub python_strings: bool,
    /// JavaScript template literals.
    pub backtick_strings: bool,
    pub dollar_identifiers: bool,
    /// Characters that never appear outside strings and comments.
    pub invalid: &'static [char],
}

impl LanguageTable {
    fn is_keyword(&self, word: &str) -> bool {
        self.keywords.contains(&word)
    }

    fn ident_start(&self, c: char) -> bool {
        c.is_alphabetic() || c == '_' || (self.dollar_identifiers && c == '$')
    }

    fn ident_continue(&self, c: char) -> bool {
        c.is_alphanumeric() || c == '_' || (self.dollar_identifiers && c == '$')
    }
}

pub static PYTHON: LanguageTable = LanguageTable {
    name: "python",
    aliases: &["py", "python3"],
    keywords: &[
        "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
        "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
        "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise",
        "return", "try", "while", "with", "yield",
    ],
    line_comment: "#",
    block_comment: None,
    python_strings: true,
    backtick_strings: false,
    dollar_identifiers: false,
    invalid: &['$', '?', '`'],
};

pub static JAVASCRIPT: LanguageTable = LanguageTable {
    name: "javascript",
    aliases: &["js", "typescript", "ts"],
    keywords: &[
        "await", "break", "case", "catch", "class", "const", "continue", "debugger", "default",
        "delete", "do", "else", "export", "extends", "false", "finally", "for", "function", "if",
        "import", "in", "instanceof", "let", "new", "null", "return", "super", "switch", "this",
        "throw", "true", "try", "typeof", "undefined", "var", "void", "while", "with", "yield",
    ],
    line_comment: "//",
    block_comment: Some(("/*", "*/")),
    python_strings: false,
    backtick_strings: true,
    dollar_identifiers: true,
    invalid: &[],
};

pub static LANGUAGES: &[&LanguageTable] = &[&PYTHON, &JAVASCRIPT];

pub fn language(tag: &str) -> Option<&'static LanguageTable> {
    let tag = tag.to_ascii_lowercase();
    LANGUAGES
        .iter()
        .copied()
        .find(|l| l.name == tag || l.aliases.contains(&tag.as_str()))
}

/// Byte offset of the first character that could not be lexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LexError {
    pub offset: usize,
}

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.rest().chars().nth(n)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn eat_while(&mut self, f: impl Fn(char) -> bool) {
        while self.peek().is_some_and(&f) {
            self.bump();
        }
    }
}

fn python_string_prefix(s: &str) -> Option<usize> {
    let prefix_len = s
        .chars()
        .take_while(|c| matches!(c.to_ascii_lowercase(), 'r' | 'b' | 'u' | 'f'))
        .count()
        .min(2);
    for len in (1..=prefix_len).rev() {
        let p = s[..len].to_ascii_lowercase();
        let valid = matches!(
            p.as_str(),
            "r" | "b" | "u" | "f" | "rb" | "br" | "fr" | "rf"
        );
        if valid && matches!(s[len..].chars().next(), Some('"' | '\'')) {
            return Some(len);
        }
    }
    None
}

pub fn lex(src: &str, lang: &LanguageTable) -> Result<Vec<Lexeme>, LexError> {
    let mut sc = Scanner { src, pos: 0 };
    let mut out = Vec::new();
    while let Some(c) = sc.peek() {
        let start = sc.pos;
        let rest = sc.rest();

        if c.is_whitespace() {
            sc.bump();
            continue;
        }
        if c == '\\' && lang.python_strings && matches!(sc.peek_at(1), Some('\n' | '\r')) {
            sc.bump();
            continue;
        }
        if rest.starts_with(lang.line_comment) {
            sc.eat_while(|c| c != '\n');
            out.push(Lexeme {
                kind: LexKind::Comment,
                start,
                end: sc.pos,
            });
            continue;
        }
        if let Some((open, close)) = lang.block_comment {
            if rest.starts_with(open) {
                let body = &rest[open.len()..];
                let len = body.find(close).ok_or(LexError { offset: start })?;
                sc.pos += open.len() + len + close.len();
                out.push(Lexeme {
                    kind: LexKind::Comment,
                    start,
                    end: sc.pos,
                });
                continue;
            }
        }

        let prefix = if lang.python_strings {
            python_string_prefix(rest)
        } else {
            None
        };
        if prefix.is_some() || matches!(c, '"' | '\'') || (lang.backtick_strings && c == '`') {
            sc.pos += prefix.unwrap_or(0);
            lex_string(&mut sc, lang).map_err(|_| LexError { offset: start })?;
            out.push(Lexeme {
                kind: LexKind::String,
                start,
                end: sc.pos,
            });
            continue;
        }

        if c.is_ascii_digit() || (c == '.' && sc.peek_at(1).is_some_and(|d| d.is_ascii_digit())) {
            lex_number(&mut sc);
            out.push(Lexeme {
                kind: LexKind::Number,
                start,
                end: sc.pos,
            });
            continue;
        }

        if lang.ident_start(c) {
            sc.eat_while(|c| lang.ident_continue(c));
            let word = &src[start..sc.pos];
            out.push(Lexeme {
                kind: if lang.is_keyword(word) {
                    LexKind::Keyword
                } else {
                    LexKind::Identifier
                },
                start,
                end: sc.pos,
            });
            continue;
        }

        if c.is_ascii_punctuation() && !lang.invalid.contains(&c) {
            sc.bump();
            out.push(Lexeme {
                kind: LexKind::Operator,
                start,
                end: sc.pos,
            });
            continue;
        }
        return Err(LexError { offset: start });
    }
    Ok(out)
}

fn lex_number(sc: &mut Scanner<'_>) {
    loop {
        match sc.peek() {
            Some(c) if c.is_alphanumeric() || c == '_' => {
                let exp = matches!(c, 'e' | 'E');
                sc.bump();
                if exp
                    && matches!(sc.peek(), Some('+' | '-'))
                    && sc.peek_at(1).is_some_and(|d| d.is_ascii_digit())
                {
                    sc.bump();
                }
            }
            Some('.') if sc.peek_at(1).map_or(true, |d| !(d.is_alphabetic() || d == '_')) => {
                sc.bump();
            }
            _ => break,
        }
    }
}

/// Consumes a string literal whose opening quote is at the scanner position.
fn lex_string(sc: &mut Scanner<'_>, lang: &LanguageTable) -> Result<(), ()> {
    let quote = sc.bump().ok_or(())?;
    if lang.python_strings && sc.peek() == Some(quote) && sc.peek_at(1) == Some(quote) {
        sc.bump();
        sc.bump();
        let close: String = std::iter::repeat(quote).take(3).collect();
        loop {
            if sc.rest().starts_with(&close) {
                sc.pos += 3;
                return Ok(());
            }
            match sc.bump() {
                Some('\\') => {
                    sc.bump();
                }
                Some(_) => {}
                None => return Err(()),
            }
        }
    }
    let multiline = quote == '`';
    loop {
        match sc.bump() {
            Some('\\') => {
                sc.bump();
            }
            Some(c) if c == quote => return Ok(()),
            Some('\n') if !multiline => return Err(()),
            Some(_) => {}
            None => return Err(()),
        }
    }
}
