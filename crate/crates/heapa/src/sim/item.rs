//! Auto-generated arithmetic items with known gold answers.
//!
//! Every item is `Compute X + Y.` over decimals with two fractional digits,
//! held internally in hundredths so the arithmetic stays exact. The latent
//! difficulty of an item is `ln(answer)`, so it can be recomputed from any
//! snapshot without side-channel state, and numeric perturbation moves a
//! child's difficulty multiplicatively: a perturbation with factor `diff`
//! raises the parent's answer to that power.

use rand::{Rng, RngExt};

/// One synthetic query: prompt text, gold answer, latent difficulty.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuery {
    pub prompt: String,
    pub answer: String,
    pub latent_difficulty: f64,
}

/// Format a value in hundredths as a canonical decimal string: no trailing
/// zeros, no trailing dot.
pub fn format_cents(cents: u64) -> String {
    let whole = cents / 100;
    let frac = cents % 100;
    if frac == 0 {
        format!("{whole}")
    } else if frac.is_multiple_of(10) {
        format!("{whole}.{}", frac / 10)
    } else {
        format!("{whole}.{frac:02}")
    }
}

/// Parse a canonical decimal back into hundredths. Accepts at most two
/// fractional digits.
pub fn parse_cents(s: &str) -> Option<u64> {
    let s = s.trim();
    let (whole, frac) = match s.split_once('.') {
        None => (s, ""),
        Some((w, f)) => (w, f),
    };
    if whole.is_empty() || whole.bytes().any(|b| !b.is_ascii_digit()) {
        return None;
    }
    if frac.len() > 2 || frac.bytes().any(|b| !b.is_ascii_digit()) {
        return None;
    }
    let whole: u64 = whole.parse().ok()?;
    let frac_val: u64 = match frac.len() {
        0 => 0,
        1 => frac.parse::<u64>().ok()? * 10,
        _ => frac.parse().ok()?,
    };
    whole.checked_mul(100)?.checked_add(frac_val)
}

/// Latent difficulty carried by an answer string: `ln(value)` for positive
/// values, `None` otherwise.
pub fn latent_difficulty_of_answer(answer: &str) -> Option<f64> {
    let cents = parse_cents(answer)?;
    if cents == 0 {
        return None;
    }
    Some((cents as f64 / 100.0).ln())
}

fn item_from_cents<R: Rng>(total_cents: u64, rng: &mut R) -> SyntheticQuery {
    let total = total_cents.max(2);
    let x = rng.random_range(1..total);
    let y = total - x;
    let answer = format_cents(total);
    let latent_difficulty = latent_difficulty_of_answer(&answer).expect("positive total");
    SyntheticQuery {
        prompt: format!("Compute {} + {}.", format_cents(x), format_cents(y)),
        answer,
        latent_difficulty,
    }
}

/// Generate a seed item with latent difficulty near a uniform draw from
/// `[b_lo, b_hi]` (quantized to the hundredths grid).
pub fn gen_seed_item<R: Rng>(b_lo: f64, b_hi: f64, rng: &mut R) -> SyntheticQuery {
    let b = b_lo + rng.random::<f64>() * (b_hi - b_lo);
    let cents = (100.0 * b.exp()).round() as u64;
    item_from_cents(cents, rng)
}

/// Numeric perturbation of a parent item: the child's answer is the parent's
/// answer raised to `diff`, so `diff > 1` makes the child harder and
/// `diff == 1` reproduces the parent's difficulty exactly.
pub fn perturb_item<R: Rng>(parent_answer: &str, diff: f64, rng: &mut R) -> Option<SyntheticQuery> {
    let parent_cents = parse_cents(parent_answer)?;
    if parent_cents == 0 {
        return None;
    }
    let value = (parent_cents as f64 / 100.0).powf(diff);
    let cents = (100.0 * value).round().max(2.0) as u64;
    Some(item_from_cents(cents, rng))
}

/// Solve a well-formed `Compute X + Y.` prompt exactly.
pub fn solve_prompt(prompt: &str) -> Option<String> {
    let rest = prompt.trim().strip_prefix("Compute ")?;
    let rest = rest.strip_suffix('.')?;
    let (lhs, rhs) = rest.split_once(" + ")?;
    let total = parse_cents(lhs)?.checked_add(parse_cents(rhs)?)?;
    Some(format_cents(total))
}

/// Raw policy-style augmentation outputs for one parent: `n_aug` candidate
/// texts in the tagged format, each perturbing only numeric values. A
/// `malformed_fraction` of outputs violate the format to exercise the
/// reject paths. Returns each text with the diff value it embeds.
pub fn synth_augment_texts<R: Rng>(
    parent_prompt: &str,
    parent_answer: &str,
    n_aug: usize,
    diff_lo: f64,
    diff_hi: f64,
    malformed_fraction: f64,
    rng: &mut R,
) -> Vec<(String, f64)> {
    let mut out = Vec::with_capacity(n_aug);
    for _ in 0..n_aug {
        let diff = diff_lo + rng.random::<f64>() * (diff_hi - diff_lo);
        let child = perturb_item(parent_answer, diff, rng);
        let text = if rng.random::<f64>() < malformed_fraction {
            match rng.random_range(0..3u32) {
                0 => format!("<ORIG>\n{parent_prompt}\n\n<NEW>\nbroken output\n\n<DIFF>\n{diff}"),
                1 => format!("<ORIG>\n{parent_prompt}\n\n<NEW>\n\n<DIFF>\n{diff}\n\n<END>"),
                _ => format!("<ORIG>\n{parent_prompt}\n\n<NEW>\nbroken\n\n<DIFF>\nhard\n\n<END>"),
            }
        } else {
            let child = child.expect("parent answers are positive");
            format!(
                "<ORIG>\n{parent_prompt}\n\n<NEW>\n{}\n\n<DIFF>\n{diff}\n\n<END>",
                child.prompt
            )
        };
        out.push((text, diff));
    }
    out
}
