//! Publisher-side manuscript checks: find `\dataset{...}` macros in LaTeX
//! sources, verify the identifiers in one batch, and produce the
//! copy-editing report and the correlation feed for the article.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;
use url::Url;

use crate::correlation::render_lines;
use crate::dsid;
use crate::verifier::{results_from_xml, VerificationResult, VerificationStatus, DEFAULT_BATCH_CAP};

pub const MACRO_NAME: &str = "dataset";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroOccurrence {
    pub identifier_text: String,
    pub file: PathBuf,
    /// 1-based line of the macro's backslash.
    pub line: usize,
    /// 1-based column, counted in characters.
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScanError {
    #[error("{line}:{column}: \\dataset argument is never closed")]
    UnterminatedArgument { line: usize, column: usize },
    #[error("{line}:{column}: \\dataset without a brace argument")]
    MissingArgument { line: usize, column: usize },
    #[error("{line}:{column}: nested brace inside \\dataset argument")]
    NestedBrace { line: usize, column: usize },
}

struct Cursor<'a> {
    chars: &'a [char],
    pos: usize,
    line: usize,
    column: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    /// Skips a `%` comment through its end of line.
    fn skip_comment(&mut self) {
        while let Some(c) = self.bump() {
            if c == '\n' {
                break;
            }
        }
    }
}

/// Finds every `\dataset{...}` outside comments, in document order.
///
/// This is a lexical scan, not TeX: `%` starts a comment unless escaped,
/// control words are letter runs, and the single brace argument may span
/// lines but may not contain unescaped braces.
pub fn scan(source: &str, file: &Path) -> Result<Vec<MacroOccurrence>, ScanError> {
    let chars: Vec<char> = source.chars().collect();
    let mut cur = Cursor {
        chars: &chars,
        pos: 0,
        line: 1,
        column: 1,
    };
    let mut found = Vec::new();

    while let Some(c) = cur.peek() {
        match c {
            '%' => cur.skip_comment(),
            '\\' => {
                let (line, column) = (cur.line, cur.column);
                cur.bump();
                let mut name = String::new();
                while let Some(c) = cur.peek().filter(char::is_ascii_alphabetic) {
                    name.push(c);
                    cur.bump();
                }
                if name.is_empty() {
                    // Control symbol such as `\%` or `\\`.
                    cur.bump();
                } else if name == MACRO_NAME {
                    let text = read_argument(&mut cur, line, column)?;
                    found.push(MacroOccurrence {
                        identifier_text: text,
                        file: file.to_owned(),
                        line,
                        column,
                    });
                }
            }
            _ => {
                cur.bump();
            }
        }
    }
    Ok(found)
}

fn read_argument(cur: &mut Cursor<'_>, line: usize, column: usize) -> Result<String, ScanError> {
    // Spaces and at most one line break may separate the macro from its
    // argument, as in TeX; a blank line ends the paragraph.
    let mut newlines = 0;
    while let Some(c) = cur.peek() {
        match c {
            ' ' | '\t' | '\r' => {}
            '\n' if newlines == 0 => newlines += 1,
            _ => break,
        }
        cur.bump();
    }
    if cur.peek() != Some('{') {
        return Err(ScanError::MissingArgument { line, column });
    }
    cur.bump();

    let mut text = String::new();
    loop {
        let (l, c) = (cur.line, cur.column);
        match cur.bump() {
            None => return Err(ScanError::UnterminatedArgument { line, column }),
            Some('}') => break,
            Some('{') => return Err(ScanError::NestedBrace { line: l, column: c }),
            Some('%') => cur.skip_comment(),
            Some('\\') => match cur.peek() {
                Some(e @ ('%' | '#' | '_' | '&' | '{' | '}' | '$')) => {
                    text.push(e);
                    cur.bump();
                }
                _ => text.push('\\'),
            },
            Some('\n') | Some('\r') => text.push(' '),
            Some(ch) => text.push(ch),
        }
    }
    Ok(text.trim().to_owned())
}

/// Scans a set of files. Unreadable files are reported separately and do
/// not stop the others.
pub fn scan_files(files: &[PathBuf]) -> (Vec<MacroOccurrence>, Vec<FileProblem>) {
    let mut occurrences = Vec::new();
    let mut problems = Vec::new();
    for file in files {
        let text = match std::fs::read_to_string(file) {
            Ok(t) => t,
            Err(e) => {
                problems.push(FileProblem {
                    file: file.clone(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        match scan(&text, file) {
            Ok(found) => occurrences.extend(found),
            Err(e) => problems.push(FileProblem {
                file: file.clone(),
                message: e.to_string(),
            }),
        }
    }
    (occurrences, problems)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileProblem {
    pub file: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, Error)]
pub enum VerifierError {
    #[error("verifier unreachable: {0}")]
    Unreachable(String),
    #[error("verifier answered with HTTP {0}")]
    Status(u16),
    #[error("unreadable verifier response: {0}")]
    Protocol(String),
}

/// Client for the master verifier's batch endpoint.
#[derive(Debug, Clone)]
pub struct VerifierClient {
    endpoint: Url,
    http: reqwest::Client,
    batch_cap: usize,
}

impl VerifierClient {
    /// `base` is either the verifier's base URL or its `/verify` endpoint.
    pub fn new(base: &Url, timeout: Duration) -> Self {
        let endpoint = if base.path().ends_with("/verify") {
            base.clone()
        } else {
            Url::parse(&format!("{}/verify", base.as_str().trim_end_matches('/'))).expect("valid endpoint")
        };
        let http = reqwest::Client::builder()
            .no_proxy()
            .timeout(timeout)
            .build()
            .expect("static client configuration");
        Self {
            endpoint,
            http,
            batch_cap: DEFAULT_BATCH_CAP,
        }
    }

    pub fn endpoint(&self) -> &Url {
        &self.endpoint
    }

    /// POSTs identifiers, newline-separated, in chunks of at most the batch
    /// cap. Results come back positionally aligned.
    pub async fn verify_batch(&self, identifiers: &[String]) -> Result<Vec<VerificationResult>, VerifierError> {
        let mut out = Vec::with_capacity(identifiers.len());
        for chunk in identifiers.chunks(self.batch_cap.max(1)) {
            let body = chunk.join("\n");
            let resp = self
                .http
                .post(self.endpoint.clone())
                .header("content-type", "text/plain; charset=utf-8")
                .body(body)
                .send()
                .await
                .map_err(|e| VerifierError::Unreachable(e.to_string()))?;
            let status = resp.status().as_u16();
            if status != 200 {
                return Err(VerifierError::Status(status));
            }
            let bytes = resp.bytes().await.map_err(|e| VerifierError::Unreachable(e.to_string()))?;
            let results = results_from_xml(&bytes).map_err(VerifierError::Protocol)?;
            if results.len() != chunk.len() {
                return Err(VerifierError::Protocol(format!(
                    "sent {} identifiers, got {} results",
                    chunk.len(),
                    results.len()
                )));
            }
            out.extend(results);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ManuscriptReport {
    pub occurrences: Vec<(MacroOccurrence, VerificationResult)>,
    pub file_problems: Vec<FileProblem>,
}

impl ManuscriptReport {
    pub fn counts(&self) -> BTreeMap<&'static str, usize> {
        let mut counts = BTreeMap::new();
        for (_, r) in &self.occurrences {
            *counts.entry(r.status.as_str()).or_insert(0) += 1;
        }
        counts
    }

    /// 0 when every occurrence is valid, 2 when any is definitively bad (or a
    /// file could not be scanned), 3 when only unavailable centers block.
    pub fn exit_code(&self) -> i32 {
        use VerificationStatus::*;
        let statuses: Vec<_> = self.occurrences.iter().map(|(_, r)| r.status).collect();
        if !self.file_problems.is_empty() || statuses.iter().any(|s| matches!(s, InvalidSyntax | UnknownFacility | NotFound)) {
            2
        } else if statuses.contains(&CenterUnavailable) {
            3
        } else {
            0
        }
    }

    /// Distinct canonical identifiers that verified, sorted.
    pub fn valid_identifiers(&self) -> BTreeSet<String> {
        self.occurrences
            .iter()
            .filter(|(_, r)| r.status == VerificationStatus::Valid)
            .filter_map(|(o, _)| dsid::canonicalize(&o.identifier_text).ok())
            .collect()
    }

    /// Correlation feed lines for the article, one per valid dataset.
    pub fn feed(&self, article_id: &str) -> String {
        let ids = self.valid_identifiers();
        render_lines(ids.iter().map(|d| (article_id, d.as_str())))
    }

    pub fn render_tsv(&self) -> String {
        let mut out = String::new();
        for (o, r) in &self.occurrences {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                o.file.display(),
                o.line,
                o.column,
                tsv_field(&o.identifier_text),
                r.status
            );
        }
        out
    }

    pub fn render_text(&self) -> String {
        let locations: Vec<String> = self
            .occurrences
            .iter()
            .map(|(o, _)| format!("{}:{}:{}", o.file.display(), o.line, o.column))
            .collect();
        let loc_w = locations.iter().map(String::len).max().unwrap_or(0);
        let id_w = self.occurrences.iter().map(|(o, _)| o.identifier_text.len()).max().unwrap_or(0);
        let status_w = self.occurrences.iter().map(|(_, r)| r.status.as_str().len()).max().unwrap_or(0);

        let mut out = String::new();
        for (loc, (o, r)) in locations.iter().zip(&self.occurrences) {
            let note = match &r.permanent_link {
                Some(link) => link.to_string(),
                None => r.detail.clone(),
            };
            let _ = writeln!(
                out,
                "{loc:<loc_w$}  {:<status_w$}  {:<id_w$}  {note}",
                r.status.as_str(),
                o.identifier_text
            );
        }
        for p in &self.file_problems {
            let _ = writeln!(out, "{}: error: {}", p.file.display(), p.message);
        }
        let summary: Vec<String> = self.counts().iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(
            out,
            "{} occurrence(s); {}",
            self.occurrences.len(),
            if summary.is_empty() { "nothing to verify".to_owned() } else { summary.join(" ") }
        );
        out
    }
}

fn tsv_field(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

/// Joins scan results with verifier answers. Each distinct identifier string
/// is submitted once; text that cannot be an identifier line (it contains
/// whitespace) is marked invalid locally.
pub async fn verify_manuscript(files: &[PathBuf], verifier: &VerifierClient) -> Result<ManuscriptReport, VerifierError> {
    let (occurrences, file_problems) = scan_files(files);

    let mut distinct: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for o in &occurrences {
        let text = o.identifier_text.as_str();
        if !text.chars().any(char::is_whitespace) && !index.contains_key(text) {
            index.insert(text, distinct.len());
            distinct.push(text.to_owned());
        }
    }
    let answers = if distinct.is_empty() {
        Vec::new()
    } else {
        verifier.verify_batch(&distinct).await?
    };

    let joined = occurrences
        .iter()
        .map(|o| {
            let result = match index.get(o.identifier_text.as_str()) {
                Some(&i) => answers[i].clone(),
                None => VerificationResult {
                    identifier: o.identifier_text.clone(),
                    status: VerificationStatus::InvalidSyntax,
                    permanent_link: None,
                    detail: "identifier contains whitespace".into(),
                },
            };
            (o.clone(), result)
        })
        .collect();
    Ok(ManuscriptReport {
        occurrences: joined,
        file_problems,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(src: &str) -> Vec<(String, usize, usize)> {
        scan(src, Path::new("m.tex"))
            .unwrap()
            .into_iter()
            .map(|o| (o.identifier_text, o.line, o.column))
            .collect()
    }

    #[test]
    fn extracts_inner_text() {
        assert_eq!(
            texts("We used \\dataset{ADS/Sa.CXO#obs/1234} here."),
            [("ADS/Sa.CXO#obs/1234".to_string(), 1, 9)]
        );
    }

    #[test]
    fn comments_are_skipped() {
        assert!(texts("% \\dataset{ADS/MAST#x}").is_empty());
        assert!(texts("text % \\dataset{ADS/MAST#x}\n").is_empty());
        assert_eq!(texts("50\\% of \\dataset{ADS/MAST#x}").len(), 1);
        // `\\` is a line break, so the following `%` is a real comment.
        assert!(texts("a\\\\% \\dataset{ADS/MAST#x}").is_empty());
    }

    #[test]
    fn positions_and_order() {
        let src = "first \\dataset{ADS/A#1}\n\n  \\dataset{ADS/B#2} and \\dataset{ADS/C#3}\n";
        assert_eq!(
            texts(src),
            [
                ("ADS/A#1".to_string(), 1, 7),
                ("ADS/B#2".to_string(), 3, 3),
                ("ADS/C#3".to_string(), 3, 25)
            ]
        );
    }

    #[test]
    fn argument_may_span_lines() {
        assert_eq!(texts("\\dataset\n  {ADS/MAST#%\nhst.1}"), [("ADS/MAST#hst.1".to_string(), 1, 1)]);
        assert_eq!(texts("\\dataset{\n ADS/MAST#x\n}"), [("ADS/MAST#x".to_string(), 1, 1)]);
        assert_eq!(texts("\\dataset{ADS/MAST\n#x}"), [("ADS/MAST #x".to_string(), 1, 1)]);
    }

    #[test]
    fn escapes_inside_argument() {
        assert_eq!(texts("\\dataset{ADS/MAST\\#a\\_b\\%c}"), [("ADS/MAST#a_b%c".to_string(), 1, 1)]);
    }

    #[test]
    fn other_macros_ignored() {
        assert!(texts("\\datasets{x} \\datasetx{y} \\Dataset{z}").is_empty());
    }

    #[test]
    fn scan_errors() {
        let p = Path::new("m.tex");
        assert_eq!(
            scan("ok\n  \\dataset{ADS/MAST#x", p),
            Err(ScanError::UnterminatedArgument { line: 2, column: 3 })
        );
        assert_eq!(scan("\\dataset ADS", p), Err(ScanError::MissingArgument { line: 1, column: 1 }));
        assert_eq!(scan("\\dataset\n\n{x}", p), Err(ScanError::MissingArgument { line: 1, column: 1 }));
        assert_eq!(scan("\\dataset{a{b}}", p), Err(ScanError::NestedBrace { line: 1, column: 11 }));
    }

    fn result(id: &str, status: VerificationStatus) -> VerificationResult {
        VerificationResult {
            identifier: id.into(),
            status,
            permanent_link: (status == VerificationStatus::Valid)
                .then(|| Url::parse("http://r.example/link?id=x").unwrap()),
            detail: String::new(),
        }
    }

    fn occ(id: &str) -> MacroOccurrence {
        MacroOccurrence {
            identifier_text: id.into(),
            file: "a.tex".into(),
            line: 1,
            column: 1,
        }
    }

    #[test]
    fn exit_code_contract() {
        use VerificationStatus::*;
        let report = |statuses: &[VerificationStatus]| ManuscriptReport {
            occurrences: statuses.iter().map(|&s| (occ("ADS/M#x"), result("ADS/M#x", s))).collect(),
            file_problems: vec![],
        };
        assert_eq!(report(&[]).exit_code(), 0);
        assert_eq!(report(&[Valid, Valid]).exit_code(), 0);
        assert_eq!(report(&[Valid, NotFound]).exit_code(), 2);
        assert_eq!(report(&[CenterUnavailable, UnknownFacility]).exit_code(), 2);
        assert_eq!(report(&[Valid, CenterUnavailable]).exit_code(), 3);
        let mut r = report(&[Valid]);
        r.file_problems.push(FileProblem {
            file: "x".into(),
            message: "gone".into(),
        });
        assert_eq!(r.exit_code(), 2);
    }

    #[test]
    fn feed_and_tsv() {
        use VerificationStatus::*;
        let report = ManuscriptReport {
            occurrences: vec![
                (occ("ADS/MAST#b"), result("ADS/MAST#b", Valid)),
                (occ("ADS/MAST#a"), result("ADS/MAST#a", Valid)),
                (occ("ADS/MAST#b"), result("ADS/MAST#b", Valid)),
                (occ("bad id"), result("bad id", InvalidSyntax)),
            ],
            file_problems: vec![],
        };
        assert_eq!(report.feed("2006ApJ...1A"), "2006ApJ...1A\tADS/MAST#a\n2006ApJ...1A\tADS/MAST#b\n");
        assert_eq!(
            report.render_tsv().lines().last().unwrap(),
            "a.tex\t1\t1\tbad id\tinvalid-syntax"
        );
        let text = report.render_text();
        assert!(text.ends_with("4 occurrence(s); invalid-syntax=1 valid=3\n"));
    }
}
