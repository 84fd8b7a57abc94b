//! Text wire contracts: rollout prompts and answer extraction, tagged
//! augmentation output, and single-line teacher-verdict JSON.
//!
//! The three prompt templates are embedded as canonical byte-for-byte assets;
//! golden-file tests pin them. Parsing is deliberately strict: a candidate
//! becomes a training pair only if the tagged augmentation output parses and
//! the teacher verdict is `solvable` with a numeric answer.

use crate::lineage::clamp_difficulty;
use serde::Serialize;
use thiserror::Error;

/// Template for student rollouts; `<PROBLEM_STATEMENT>` is substituted.
pub const ROLLOUT_PROMPT_TEMPLATE: &str = include_str!("../assets/rollout_prompt.txt");
/// Template for on-policy augmentation; `<ORIGINAL_PROBLEM_TEXT_ONLY>` is
/// substituted, the `<NEW>`/`<DIFF>` slots are filled by the policy.
pub const AUGMENT_PROMPT_TEMPLATE: &str = include_str!("../assets/augment_prompt.txt");
/// Template for teacher verification; `<ORIGINAL>` and `<GENERATION>` are
/// substituted.
pub const TEACHER_PROMPT_TEMPLATE: &str = include_str!("../assets/teacher_prompt.txt");

/// Prompts longer than this fail the dataset filters
/// (2,048 tokens-equivalent at a 4-chars-per-token heuristic).
pub const MAX_PROMPT_CHARS: usize = 2048 * 4;

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("problem text is empty")]
    EmptyProblem,
    #[error("not a numeric string: {0:?}")]
    NonNumeric(String),
}

/// Why a tagged augmentation output was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentReject {
    MissingTag,
    EmptyNew,
    UnparseableDiff,
}

/// Why a teacher verdict line was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherReject {
    MalformedJson,
    ExtraKeys,
    CaseViolation,
    NonNumericAnswer,
    Inconsistent,
}

/// Fields recovered from a well-formed augmentation output.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutput {
    /// The `<NEW>` body after wrapper stripping.
    pub new_problem: String,
    /// The `<DIFF>` value as emitted.
    pub diff_raw: f64,
    /// `diff_raw` clamped to the difficulty range.
    pub diff: f64,
}

/// A parsed teacher verdict. `solvable == true` iff `answer` is present
/// (and numeric); enforced by [`parse_teacher_json`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherVerdict {
    pub solvable: bool,
    pub answer: Option<String>,
}

fn substituted(template: &str, marker: &str, value: &str) -> String {
    template.replacen(marker, value, 1)
}

/// Render the student rollout prompt for one problem.
pub fn render_rollout_prompt(problem: &str) -> Result<String, TextError> {
    if problem.trim().is_empty() {
        return Err(TextError::EmptyProblem);
    }
    Ok(substituted(
        ROLLOUT_PROMPT_TEMPLATE,
        "<PROBLEM_STATEMENT>",
        problem,
    ))
}

/// Render the augmentation prompt for one parent problem. The `<NEW>` and
/// `<DIFF>` placeholder lines remain: they are the output slots the policy
/// fills in.
pub fn render_augment_prompt(original_problem: &str) -> Result<String, TextError> {
    if original_problem.trim().is_empty() {
        return Err(TextError::EmptyProblem);
    }
    Ok(substituted(
        AUGMENT_PROMPT_TEMPLATE,
        "<ORIGINAL_PROBLEM_TEXT_ONLY>",
        original_problem,
    ))
}

/// Render the teacher verification prompt for a parent/candidate pair.
pub fn render_teacher_prompt(original: &str, generation: &str) -> Result<String, TextError> {
    if original.trim().is_empty() || generation.trim().is_empty() {
        return Err(TextError::EmptyProblem);
    }
    let out = substituted(TEACHER_PROMPT_TEMPLATE, "<ORIGINAL>", original);
    Ok(substituted(&out, "<GENERATION>", generation))
}

/// Extract the final numeric answer from a rollout.
///
/// The last non-empty line must start with the exact prefix `Answer:`
/// (surrounding whitespace on the line is ignored, the prefix is
/// case-sensitive) and the remainder must parse as a number. Anything else is
/// an invalid rollout and returns `None`.
pub fn extract_final_answer(rollout_text: &str) -> Option<String> {
    let line = rollout_text.lines().rev().find(|l| !l.trim().is_empty())?;
    let rest = line.trim().strip_prefix("Answer:")?.trim();
    if parse_decimal(rest).is_some() {
        Some(rest.to_string())
    } else {
        None
    }
}

/// Strict exact match on canonical numeric value: both sides are parsed as
/// exact decimals (arbitrary precision) and compared by value, so
/// `"42.0"` matches `"42"` but `"41"` does not.
pub fn strict_match(pred_str: &str, gold_str: &str) -> Result<bool, TextError> {
    let p = parse_decimal(pred_str.trim()).ok_or_else(|| TextError::NonNumeric(pred_str.into()))?;
    let g = parse_decimal(gold_str.trim()).ok_or_else(|| TextError::NonNumeric(gold_str.into()))?;
    Ok(p == g)
}

/// The verifier reward: 1 on an exact answer match, 0 on a wrong answer,
/// -1 when the rollout is invalid (no parseable answer line).
pub fn verifier_reward(rollout_text: &str, gold: &str) -> Result<i8, TextError> {
    // Validate the gold side up front so corpus errors surface loudly.
    parse_decimal(gold.trim()).ok_or_else(|| TextError::NonNumeric(gold.into()))?;
    match extract_final_answer(rollout_text) {
        None => Ok(-1),
        Some(pred) => Ok(if strict_match(&pred, gold)? { 1 } else { 0 }),
    }
}

/// An exact decimal in canonical form: `value = digits * 10^exp`, with
/// `digits` free of trailing zeros. `digits` empty means zero (sign ignored).
#[derive(Debug, Clone, PartialEq, Eq)]
struct Decimal {
    neg: bool,
    digits: Vec<u8>,
    exp: i64,
}

/// Parse a bare number string: optional sign, digits with an optional dot,
/// optional exponent. Rejects anything else (whitespace, hex, inf/nan, ...).
fn parse_decimal(s: &str) -> Option<Decimal> {
    let bytes = s.as_bytes();
    let mut i = 0;
    let neg = match bytes.first() {
        Some(b'-') => {
            i += 1;
            true
        }
        Some(b'+') => {
            i += 1;
            false
        }
        _ => false,
    };
    let mut digits: Vec<u8> = Vec::new();
    let mut frac_len: i64 = 0;
    let mut saw_digit = false;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        digits.push(bytes[i] - b'0');
        saw_digit = true;
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            digits.push(bytes[i] - b'0');
            frac_len += 1;
            saw_digit = true;
            i += 1;
        }
    }
    if !saw_digit {
        return None;
    }
    let mut exp10: i64 = 0;
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        i += 1;
        let eneg = match bytes.get(i) {
            Some(b'-') => {
                i += 1;
                true
            }
            Some(b'+') => {
                i += 1;
                false
            }
            _ => false,
        };
        let start = i;
        let mut val: i64 = 0;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            val = val
                .saturating_mul(10)
                .saturating_add((bytes[i] - b'0') as i64);
            i += 1;
        }
        if i == start {
            return None;
        }
        exp10 = if eneg { -val } else { val };
    }
    if i != bytes.len() {
        return None;
    }

    let mut exp = exp10 - frac_len;
    while digits.last() == Some(&0) {
        digits.pop();
        exp += 1;
    }
    while digits.first() == Some(&0) {
        digits.remove(0);
    }
    if digits.is_empty() {
        // Canonical zero.
        return Some(Decimal {
            neg: false,
            digits,
            exp: 0,
        });
    }
    Some(Decimal { neg, digits, exp })
}

/// Strip superficial wrappers from a candidate problem text, repeating until
/// a fixed point so stripping is idempotent. Exactly four wrappers are
/// recognized: a leading `Question:` marker, a leading `Assistant:` marker,
/// Markdown code fences, and a trailing `Answer:` line.
pub fn strip_wrappers(text: &str) -> String {
    let mut cur = text.trim().to_string();
    loop {
        let next = strip_once(&cur);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn strip_once(text: &str) -> String {
    let trimmed = text.trim();
    let lines: Vec<&str> = trimmed.lines().collect();
    if lines.is_empty() {
        return String::new();
    }
    let first = lines[0].trim_start();
    if first.starts_with("```") {
        return lines[1..].join("\n").trim().to_string();
    }
    if let Some(rest) = first.strip_prefix("Question:") {
        let mut out: Vec<&str> = vec![rest.trim_start()];
        out.extend(&lines[1..]);
        return out.join("\n").trim().to_string();
    }
    if let Some(rest) = first.strip_prefix("Assistant:") {
        let mut out: Vec<&str> = vec![rest.trim_start()];
        out.extend(&lines[1..]);
        return out.join("\n").trim().to_string();
    }
    let last = lines[lines.len() - 1].trim_start();
    if last.starts_with("```") || last.starts_with("Answer:") {
        return lines[..lines.len() - 1].join("\n").trim().to_string();
    }
    trimmed.to_string()
}

/// Parse a policy augmentation output: requires the `<ORIG>`, `<NEW>`,
/// `<DIFF>`, `<END>` tags in order, strips wrappers from the `<NEW>` body,
/// and clamps the `<DIFF>` value.
pub fn parse_augment_output(text: &str) -> Result<AugmentOutput, AugmentReject> {
    let lines: Vec<&str> = text.lines().collect();
    let mut pos = 0;
    let tag_at = |tag: &str, from: usize| -> Option<usize> {
        lines[from..]
            .iter()
            .position(|l| l.trim() == tag)
            .map(|p| from + p)
    };
    let orig = tag_at("<ORIG>", pos).ok_or(AugmentReject::MissingTag)?;
    pos = orig + 1;
    let new = tag_at("<NEW>", pos).ok_or(AugmentReject::MissingTag)?;
    pos = new + 1;
    let diff = tag_at("<DIFF>", pos).ok_or(AugmentReject::MissingTag)?;
    pos = diff + 1;
    let end = tag_at("<END>", pos).ok_or(AugmentReject::MissingTag)?;

    let new_problem = strip_wrappers(&lines[new + 1..diff].join("\n"));
    if new_problem.is_empty() {
        return Err(AugmentReject::EmptyNew);
    }
    let diff_text = lines[diff + 1..end].join("\n");
    let diff_raw: f64 = diff_text
        .trim()
        .parse()
        .map_err(|_| AugmentReject::UnparseableDiff)?;
    if !diff_raw.is_finite() {
        return Err(AugmentReject::UnparseableDiff);
    }
    Ok(AugmentOutput {
        new_problem,
        diff_raw,
        diff: clamp_difficulty(Some(diff_raw)),
    })
}

/// Format a teacher verdict in the exact single-line wire format.
pub fn format_teacher_json(solvable: bool, answer: Option<&str>) -> String {
    match (solvable, answer) {
        (true, Some(a)) => format!("{{\"solvable\":true,\"answer\":{}}}", json_string(a)),
        _ => "{\"solvable\":false,\"answer\":null}".to_string(),
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Parse one teacher verdict line. Accepts only a single-line JSON object
/// with exactly the keys `solvable` and `answer`, lowercase literals, and a
/// bare-number answer string iff solvable.
pub fn parse_teacher_json(line: &str) -> Result<TeacherVerdict, TeacherReject> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    if line.contains('\n') || line.contains('\r') {
        return Err(TeacherReject::MalformedJson);
    }
    let value: serde_json::Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(_) => {
            return Err(if has_case_violation(line) {
                TeacherReject::CaseViolation
            } else {
                TeacherReject::MalformedJson
            });
        }
    };
    let obj = value.as_object().ok_or(TeacherReject::MalformedJson)?;
    for key in obj.keys() {
        if key != "solvable" && key != "answer" {
            return Err(TeacherReject::ExtraKeys);
        }
    }
    let solvable = match obj.get("solvable") {
        Some(serde_json::Value::Bool(b)) => *b,
        _ => return Err(TeacherReject::MalformedJson),
    };
    let answer = match obj.get("answer") {
        Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        _ => return Err(TeacherReject::MalformedJson),
    };
    match (solvable, answer) {
        (true, Some(a)) => {
            if parse_decimal(&a).is_none() {
                Err(TeacherReject::NonNumericAnswer)
            } else {
                Ok(TeacherVerdict {
                    solvable: true,
                    answer: Some(a),
                })
            }
        }
        (true, None) => Err(TeacherReject::Inconsistent),
        (false, Some(_)) => Err(TeacherReject::Inconsistent),
        (false, None) => Ok(TeacherVerdict {
            solvable: false,
            answer: None,
        }),
    }
}

fn has_case_violation(line: &str) -> bool {
    ["True", "TRUE", "False", "FALSE", "Null", "NULL"]
        .iter()
        .any(|t| line.contains(t))
}

/// Seed-data filters applied before any record enters the pool: non-empty
/// prompt within the length cap and a numeric answer.
pub fn passes_dataset_filters(prompt: &str, answer: &str) -> bool {
    !prompt.trim().is_empty()
        && prompt.chars().count() <= MAX_PROMPT_CHARS
        && parse_decimal(answer.trim()).is_some()
}
