//! Plain-text operator format.
//!
//! One term per line: `coeff site:op site:op ...`, e.g. `0.5i 1:z 2:x`.
//! Coefficients are decimal with an optional imaginary part (`1`, `-0.5`,
//! `0.25i`, `1+2i`, `-1.5-0.5i`); emission uses the shortest decimal form
//! that parses back to the identical float, so round trips are bit-exact.
//! Several terms may share a line separated by `;`.  Blank lines and `#`
//! comments are ignored.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::Lattice;

use super::site_basis::{op_name, parse_op_name};
use super::{BasisString, LocalOperator};

/// Format a complex coefficient in the decimal term syntax.
pub fn format_complex(c: Complex64) -> String {
    if c.im == 0.0 {
        format!("{}", c.re)
    } else if c.re == 0.0 {
        format!("{}i", c.im)
    } else if c.im < 0.0 {
        format!("{}-{}i", c.re, -c.im)
    } else {
        format!("{}+{}i", c.re, c.im)
    }
}

/// Parse a complex coefficient (`1`, `-0.5`, `i`, `-2i`, `1+2i`, ...).
pub fn parse_complex(s: &str) -> Result<Complex64> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::Parse("empty coefficient".into()));
    }
    let bad = || Error::Parse(format!("bad coefficient `{s}`"));
    if let Some(im_text) = s.strip_suffix('i') {
        // Look for an interior +/- that splits real and imaginary parts
        // (skipping a leading sign and exponent signs).
        if let Some(pos) = split_point(im_text) {
            let (re_text, im_rest) = im_text.split_at(pos);
            let re = re_text.parse::<f64>().map_err(|_| bad())?;
            let im = parse_signed_unit(im_rest).ok_or_else(bad)?;
            return Ok(Complex64::new(re, im));
        }
        let im = parse_signed_unit(im_text).ok_or_else(bad)?;
        return Ok(Complex64::new(0.0, im));
    }
    let re = s.parse::<f64>().map_err(|_| bad())?;
    Ok(Complex64::new(re, 0.0))
}

/// Index of the interior sign separating real and imaginary parts, if any.
fn split_point(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    for i in (1..bytes.len()).rev() {
        let b = bytes[i];
        if (b == b'+' || b == b'-') && !matches!(bytes[i - 1], b'e' | b'E') {
            return Some(i);
        }
    }
    None
}

/// Parse the numeric part in front of `i`, allowing a bare sign (`i`, `-i`).
fn parse_signed_unit(s: &str) -> Option<f64> {
    match s {
        "" | "+" => Some(1.0),
        "-" => Some(-1.0),
        _ => s.parse::<f64>().ok(),
    }
}

/// Format one term as `coeff site:op ...`.
pub fn format_term(string: &BasisString, coeff: Complex64, lattice: &Lattice) -> String {
    let mut parts = vec![format_complex(coeff)];
    for &(site, opix) in string.factors() {
        parts.push(format!("{site}:{}", op_name(lattice.onsite_dim(site), opix)));
    }
    parts.join(" ")
}

/// Multi-line operator text, one term per line in canonical string order.
pub fn format_operator(op: &LocalOperator, lattice: &Lattice) -> String {
    op.terms()
        .map(|(s, &c)| format_term(s, c, lattice))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Single-line operator text with `;` between terms.
pub fn format_operator_inline(op: &LocalOperator, lattice: &Lattice) -> String {
    op.terms()
        .map(|(s, &c)| format_term(s, c, lattice))
        .collect::<Vec<_>>()
        .join(" ; ")
}

/// Parse one `coeff site:op ...` term.
pub fn parse_term(line: &str, lattice: &Lattice) -> Result<(BasisString, Complex64)> {
    let mut fields = line.split_whitespace();
    let coeff_text = fields
        .next()
        .ok_or_else(|| Error::Parse("empty term".into()))?;
    let coeff = parse_complex(coeff_text)?;
    let mut factors = Vec::new();
    for field in fields {
        let (site_text, op_text) = field
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("bad factor `{field}`; want site:op")))?;
        let site = site_text
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("bad site id `{site_text}`: {e}")))?;
        if site >= lattice.len() {
            return Err(Error::Parse(format!(
                "site {site} out of range for a {}-site lattice",
                lattice.len()
            )));
        }
        let dim = lattice.onsite_dim(site);
        let opix = parse_op_name(dim, op_text).ok_or_else(|| {
            Error::Parse(format!(
                "unknown on-site operator `{op_text}` for dimension {dim}"
            ))
        })?;
        factors.push((site, opix));
    }
    Ok((BasisString::new(factors)?, coeff))
}

/// Parse operator text: terms separated by newlines or `;`, with blank
/// segments and `#` comments ignored.
pub fn parse_operator(text: &str, lattice: &Lattice) -> Result<LocalOperator> {
    let mut op = LocalOperator::zero();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for segment in line.split(';') {
            let segment = segment.trim();
            if segment.is_empty() {
                continue;
            }
            let (string, coeff) = parse_term(segment, lattice)?;
            op.add_term(string, coeff);
        }
    }
    Ok(op)
}
