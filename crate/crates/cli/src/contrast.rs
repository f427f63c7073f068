//! Parsing of contrast expressions over covariate labels:
//! `"x2-x3=0"`, `"0.5*age+1.5*stage=1"` and joint lists `"x2,x3"`.

use crate::{CliError, CliResult};

/// Parses a linear contrast `term (+|-) term ... = value` into a loading
/// vector over the given labels and the hypothesized value.
pub fn parse_contrast(expr: &str, labels: &[String]) -> CliResult<(Vec<f64>, f64)> {
    let (lhs, rhs) = expr
        .split_once('=')
        .ok_or_else(|| CliError::Parse(format!("contrast `{expr}` needs `= value`")))?;
    let a0: f64 = rhs
        .trim()
        .parse()
        .map_err(|_| CliError::Parse(format!("contrast right side `{rhs}` is not a number")))?;
    let mut c = vec![0.0; labels.len()];
    let mut any = false;
    let mut rest = lhs.trim();
    let mut sign = 1.0;
    if let Some(stripped) = rest.strip_prefix('-') {
        sign = -1.0;
        rest = stripped.trim_start();
    } else if let Some(stripped) = rest.strip_prefix('+') {
        rest = stripped.trim_start();
    }
    while !rest.is_empty() {
        // take the chunk up to the next top-level +/-
        let split = rest
            .char_indices()
            .skip(1)
            .find(|(_, ch)| *ch == '+' || *ch == '-')
            .map(|(i, _)| i);
        let (term, remainder) = match split {
            Some(i) => (&rest[..i], &rest[i..]),
            None => (rest, ""),
        };
        let term = term.trim();
        let (coef, label) = match term.split_once('*') {
            Some((num, name)) => {
                let coef: f64 = num.trim().parse().map_err(|_| {
                    CliError::Parse(format!("bad coefficient `{num}` in contrast term `{term}`"))
                })?;
                (coef, name.trim())
            }
            None => (1.0, term),
        };
        let idx = labels.iter().position(|l| l == label).ok_or_else(|| {
            CliError::Parse(format!("unknown covariate `{label}` in contrast `{expr}`"))
        })?;
        c[idx] += sign * coef;
        any = true;

        rest = remainder;
        if let Some(stripped) = rest.strip_prefix('+') {
            sign = 1.0;
            rest = stripped.trim_start();
        } else if let Some(stripped) = rest.strip_prefix('-') {
            sign = -1.0;
            rest = stripped.trim_start();
        } else {
            rest = rest.trim_start();
        }
    }
    if !any {
        return Err(CliError::Parse(format!("contrast `{expr}` has no terms")));
    }
    Ok((c, a0))
}

/// Parses a comma-separated list of covariate labels into 0-based indices.
pub fn parse_joint(expr: &str, labels: &[String]) -> CliResult<Vec<usize>> {
    let mut out = Vec::new();
    for part in expr.split(',') {
        let name = part.trim();
        if name.is_empty() {
            continue;
        }
        let idx = labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| CliError::Parse(format!("unknown covariate `{name}` in `{expr}`")))?;
        out.push(idx);
    }
    if out.is_empty() {
        return Err(CliError::Parse(format!("joint list `{expr}` is empty")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<String> {
        vec!["x1".into(), "x2".into(), "x3".into()]
    }

    #[test]
    fn parses_difference_contrast() {
        let (c, a0) = parse_contrast("x2-x3=0", &labels()).unwrap();
        assert_eq!(c, vec![0.0, 1.0, -1.0]);
        assert_eq!(a0, 0.0);
    }

    #[test]
    fn parses_weighted_terms_and_leading_sign() {
        let (c, a0) = parse_contrast("-0.5*x1 + 2*x3 = 1.5", &labels()).unwrap();
        assert_eq!(c, vec![-0.5, 0.0, 2.0]);
        assert_eq!(a0, 1.5);
    }

    #[test]
    fn unknown_label_is_parse_error() {
        let err = parse_contrast("x9=0", &labels()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn parses_joint_lists() {
        assert_eq!(parse_joint("x2,x3", &labels()).unwrap(), vec![1, 2]);
        assert!(parse_joint("x2,zzz", &labels()).is_err());
    }
}
