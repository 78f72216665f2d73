use super::DiagError;

/// Acceptance values below this count as a rejection.
pub const REJECTION_PROBABILITY: f64 = 1e-6;

/// Default number of recent sampling iterations used for live rates.
pub const DEFAULT_ACCEPTANCE_WINDOW: usize = 500;

fn checked(evidence: &[f64]) -> Result<&[f64], DiagError> {
    if evidence.is_empty() {
        return Err(DiagError::Empty);
    }
    match evidence.iter().position(|p| !(0.0..=1.0).contains(p)) {
        Some(index) => Err(DiagError::ProbabilityOutOfRange {
            index,
            value: evidence[index],
        }),
        None => Ok(evidence),
    }
}

/// Mean acceptance over the last `window` entries (all entries when `None`).
/// Flags are passed as 0/1.
pub fn acceptance_rate(evidence: &[f64], window: Option<usize>) -> Result<f64, DiagError> {
    let evidence = checked(evidence)?;
    let start = match window {
        Some(w) if w > 0 => evidence.len().saturating_sub(w),
        _ => 0,
    };
    let recent = &evidence[start..];
    Ok(recent.iter().map(|p| p.min(1.0)).sum::<f64>() / recent.len() as f64)
}

pub fn acceptance_rate_flags(flags: &[bool], window: Option<usize>) -> Result<f64, DiagError> {
    let values: Vec<f64> = flags.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    acceptance_rate(&values, window)
}

/// Length of the rejection run ending at the latest iteration.
pub fn stuck_run_length(evidence: &[f64]) -> Result<usize, DiagError> {
    let evidence = checked(evidence)?;
    Ok(evidence
        .iter()
        .rev()
        .take_while(|&&p| p < REJECTION_PROBABILITY)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(v: &[bool]) -> Vec<f64> {
        v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn rate_of_flags() {
        assert_eq!(
            acceptance_rate_flags(&[true, false, true, false], None).unwrap(),
            0.5
        );
        assert_eq!(
            acceptance_rate(&flags(&[false, false, true, true]), Some(2)).unwrap(),
            1.0
        );
        assert_eq!(
            acceptance_rate(&[0.2, 0.4], Some(10)).unwrap(),
            0.30000000000000004
        );
    }

    #[test]
    fn invalid_evidence() {
        assert_eq!(acceptance_rate(&[], None), Err(DiagError::Empty));
        let err = acceptance_rate(&[0.2, 1.3], None).unwrap_err();
        assert_eq!(
            err,
            DiagError::ProbabilityOutOfRange {
                index: 1,
                value: 1.3
            }
        );
        assert!(err.to_string().contains("probability out of range"));
        assert!(acceptance_rate(&[f64::NAN], None).is_err());
        assert_eq!(stuck_run_length(&[]), Err(DiagError::Empty));
    }

    #[test]
    fn windowed_rate_reflects_recent_behaviour() {
        let mut v = vec![1.0; 1000];
        v.extend((0..500).map(|i| if i % 10 < 3 { 1.0 } else { 0.0 }));
        let rate = acceptance_rate(&v, Some(DEFAULT_ACCEPTANCE_WINDOW)).unwrap();
        assert!((rate - 0.30).abs() < 1e-12);
    }

    #[test]
    fn stuck_runs() {
        assert_eq!(
            stuck_run_length(&flags(&[true, false, false, false])).unwrap(),
            3
        );
        assert_eq!(stuck_run_length(&flags(&[true; 5])).unwrap(), 0);
        let mut v = flags(&[true; 100]);
        v.extend(flags(&[false; 300]));
        assert_eq!(stuck_run_length(&v).unwrap(), 300);
        assert_eq!(stuck_run_length(&[0.5, 1e-7, 0.0]).unwrap(), 2);
    }
}
