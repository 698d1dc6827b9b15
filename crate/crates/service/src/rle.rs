//! Run-length encoding of scribble label maps: `[class, start, length]`
//! triples over row-major pixel order.

use lapseg_core::LabelMap;

pub type Run = [u64; 3];

/// Builds a label map from runs. Later runs overwrite earlier ones.
///
/// The class count is `num_classes` when given, otherwise the largest class
/// id present.
pub fn decode_runs(
    width: usize,
    height: usize,
    runs: &[Run],
    num_classes: Option<usize>,
) -> Result<LabelMap, String> {
    if runs.is_empty() {
        return Err("scribble run list is empty".into());
    }
    let n = (width * height) as u64;
    let mut labels = vec![0u16; width * height];
    let mut max_class = 0;
    for (idx, &[class, start, len]) in runs.iter().enumerate() {
        if class == 0 || class > 255 {
            return Err(format!("run {idx}: class {class} outside 1..=255"));
        }
        if len == 0 || start.checked_add(len).is_none_or(|end| end > n) {
            return Err(format!("run {idx}: [{start}, +{len}) outside {n} pixels"));
        }
        labels[start as usize..(start + len) as usize].fill(class as u16);
        max_class = max_class.max(class as usize);
    }
    let classes = match num_classes {
        Some(c) if c < max_class => {
            return Err(format!("class {max_class} exceeds num_classes {c}"));
        }
        Some(c) => c,
        None => max_class,
    };
    LabelMap::new(width, height, labels, classes).map_err(|e| e.to_string())
}

/// Runs of equal nonzero labels, in pixel order.
pub fn encode_runs(map: &LabelMap) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for (i, &l) in map.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        match runs.last_mut() {
            Some(r) if r[0] == u64::from(l) && r[1] + r[2] == i as u64 => r[2] += 1,
            _ => runs.push([u64::from(l), i as u64, 1]),
        }
    }
    runs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let map = LabelMap::new(4, 2, vec![0, 1, 1, 2, 2, 0, 0, 1], 2).unwrap();
        let runs = encode_runs(&map);
        assert_eq!(runs, vec![[1, 1, 2], [2, 3, 2], [1, 7, 1]]);
        assert_eq!(decode_runs(4, 2, &runs, None).unwrap(), map);
    }

    #[test]
    fn rejects_bad_runs() {
        assert!(decode_runs(2, 2, &[], None).is_err());
        assert!(decode_runs(2, 2, &[[0, 0, 1]], None).is_err());
        assert!(decode_runs(2, 2, &[[1, 3, 2]], None).is_err());
        assert!(decode_runs(2, 2, &[[1, 0, 0]], None).is_err());
        assert!(decode_runs(2, 2, &[[3, 0, 1]], Some(2)).is_err());
        assert!(decode_runs(2, 2, &[[1, u64::MAX, 2]], None).is_err());
        assert_eq!(decode_runs(2, 2, &[[1, 0, 1]], Some(3)).unwrap().num_classes(), 3);
    }
}
