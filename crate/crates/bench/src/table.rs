//! ResNet-50 convolution layer table and occurrence counts.

use brgemm_core::cnn::ConvSpec;
use brgemm_core::Result;

/// One distinct convolution shape of the topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerRecord {
    pub id: usize,
    /// Shape at mini-batch 1 with same padding and default blocking.
    pub spec: ConvSpec,
    /// Occurrences of this shape among the 53 convolution layers.
    pub count: usize,
}

impl LayerRecord {
    pub fn with_minibatch(&self, n: usize) -> Result<ConvSpec> {
        let spec = ConvSpec { n, ..self.spec };
        spec.validate()?;
        Ok(spec)
    }
}

/// (C, K, H, W, R, S, stride) for IDs 1..=20.
const ROWS: [(usize, usize, usize, usize, usize, usize, usize); 20] = [
    (3, 64, 224, 224, 7, 7, 2),
    (64, 256, 56, 56, 1, 1, 1),
    (64, 64, 56, 56, 1, 1, 1),
    (64, 64, 56, 56, 3, 3, 1),
    (256, 64, 56, 56, 1, 1, 1),
    (256, 512, 56, 56, 1, 1, 2),
    (256, 128, 56, 56, 1, 1, 2),
    (128, 128, 28, 28, 3, 3, 1),
    (128, 512, 28, 28, 1, 1, 1),
    (512, 128, 28, 28, 1, 1, 1),
    (512, 1024, 28, 28, 1, 1, 2),
    (512, 256, 28, 28, 1, 1, 2),
    (256, 256, 14, 14, 3, 3, 1),
    (256, 1024, 14, 14, 1, 1, 1),
    (1024, 256, 14, 14, 1, 1, 1),
    (1024, 2048, 14, 14, 1, 1, 2),
    (1024, 512, 14, 14, 1, 1, 2),
    (512, 512, 7, 7, 3, 3, 1),
    (512, 2048, 7, 7, 1, 1, 1),
    (2048, 512, 7, 7, 1, 1, 1),
];

/// Frozen output of [`derive_occurrence_counts`]; a test keeps them in sync.
const COUNTS: [usize; 20] = [1, 4, 1, 3, 2, 1, 1, 4, 4, 3, 1, 1, 6, 6, 5, 1, 1, 3, 3, 2];

pub fn resnet50_table() -> Vec<LayerRecord> {
    ROWS.iter()
        .zip(COUNTS)
        .enumerate()
        .map(|(i, (&(c, k, h, w, r, s, stride), count))| LayerRecord {
            id: i + 1,
            spec: ConvSpec::new(1, c, k, h, w, r, s, stride).expect("table rows are valid"),
            count,
        })
        .collect()
}

/// Every convolution of ResNet-50 v1 in graph order as (C, K, H, W, R, S, stride):
/// the 7x7 stem, then bottleneck stages of 3, 4, 6 and 3 blocks with the stride on
/// the first 1x1 of each downsampling block and a strided 1x1 projection.
pub fn resnet50_convolutions() -> Vec<(usize, usize, usize, usize, usize, usize, usize)> {
    let mut convs = vec![(3, 64, 224, 224, 7, 7, 2)];
    let (mut c_in, mut hw) = (64, 56);
    for (stage, blocks) in [3, 4, 6, 3].into_iter().enumerate() {
        let width = 64 << stage;
        let out = width * 4;
        for b in 0..blocks {
            let stride = if b == 0 && stage > 0 { 2 } else { 1 };
            let inner = hw / stride;
            convs.push((c_in, width, hw, hw, 1, 1, stride));
            convs.push((width, width, inner, inner, 3, 3, 1));
            convs.push((width, out, inner, inner, 1, 1, 1));
            if b == 0 {
                convs.push((c_in, out, hw, hw, 1, 1, stride));
            }
            c_in = out;
            hw = inner;
        }
    }
    convs
}

/// How often each table row occurs in [`resnet50_convolutions`].
pub fn derive_occurrence_counts() -> [usize; 20] {
    let mut counts = [0; 20];
    for conv in resnet50_convolutions() {
        let id = ROWS.iter().position(|row| *row == conv).expect("every conv is a table row");
        counts[id] += 1;
    }
    counts
}

/// Parses `"1-20"`, `"4"` or `"1,4,13-15"` into sorted, deduplicated layer IDs.
pub fn parse_layers(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut ids = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (part, part),
        };
        let parse = |v: &str| v.parse::<usize>().map_err(|_| format!("bad layer id `{v}`"));
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if lo == 0 || hi > ROWS.len() || lo > hi {
            return Err(format!("layer range `{part}` outside 1-{}", ROWS.len()));
        }
        ids.extend(lo..=hi);
    }
    if ids.is_empty() {
        return Err("empty layer selection".into());
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_and_last_rows() {
        let t = resnet50_table();
        assert_eq!(t.len(), 20);
        let s = t[0].spec;
        assert_eq!((s.c, s.k, s.h, s.w, s.r, s.s, s.stride), (3, 64, 224, 224, 7, 7, 2));
        assert_eq!((s.p(), s.q()), (112, 112));
        let s = t[19].spec;
        assert_eq!((s.c, s.k, s.h, s.w, s.r, s.s, s.stride), (2048, 512, 7, 7, 1, 1, 1));
    }

    #[test]
    fn counts_match_graph() {
        assert_eq!(resnet50_convolutions().len(), 53);
        assert_eq!(derive_occurrence_counts(), COUNTS);
        assert_eq!(resnet50_table().iter().map(|r| r.count).sum::<usize>(), 53);
    }

    #[test]
    fn strided_rows_halve_extent() {
        for rec in resnet50_table() {
            let s = rec.spec;
            assert_eq!(s.p(), (s.h - 1) / s.stride + 1, "row {}", rec.id);
        }
    }

    #[test]
    fn layer_ranges() {
        assert_eq!(parse_layers("1-20").unwrap(), (1..=20).collect::<Vec<_>>());
        assert_eq!(parse_layers("4").unwrap(), vec![4]);
        assert_eq!(parse_layers("13-14,1,4").unwrap(), vec![1, 4, 13, 14]);
        assert!(parse_layers("0-3").is_err());
        assert!(parse_layers("5-21").is_err());
        assert!(parse_layers("x").is_err());
    }
}
