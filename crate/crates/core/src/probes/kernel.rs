use std::fmt::Write as _;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// One row/column label of a kernel. `position` is `None` for
/// position-pooled features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct KernelIndex {
    pub sample: usize,
    pub position: Option<usize>,
    pub time: usize,
}

/// Normalized Gram matrix over an explicit index set.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub layer: usize,
    pub index: Vec<KernelIndex>,
    pub values: Tensor,
}

impl Kernel {
    pub fn new(layer: usize, index: Vec<KernelIndex>, values: Tensor) -> Result<Self> {
        let m = index.len();
        if values.shape() != [m, m] {
            return Err(Error::dim(format!(
                "kernel over {m} indices needs {m}×{m} values, got {:?}",
                values.shape()
            )));
        }
        Ok(Kernel { layer, index, values })
    }

    pub fn size(&self) -> usize {
        self.index.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values.at(i, j)
    }

    /// Relabels every index with time `t`.
    pub fn at_time(mut self, t: usize) -> Self {
        for ix in &mut self.index {
            ix.time = t;
        }
        self
    }

    pub fn max_asymmetry(&self) -> f64 {
        let m = self.size();
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..i {
                worst = worst.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        worst
    }

    pub fn trace(&self) -> f64 {
        (0..self.size()).map(|i| self.at(i, i)).sum()
    }

    /// Self-describing text form: header, one index triple per line, then
    /// row-major values with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m = self.size();
        let _ = writeln!(out, "# attnscale kernel v1");
        let _ = writeln!(out, "layer {}", self.layer);
        let _ = writeln!(out, "size {m}");
        for ix in &self.index {
            match ix.position {
                Some(p) => {
                    let _ = writeln!(out, "index {} {} {}", ix.sample, p, ix.time);
                }
                None => {
                    let _ = writeln!(out, "index {} - {}", ix.sample, ix.time);
                }
            }
        }
        let _ = writeln!(out, "values");
        for i in 0..m {
            let row: Vec<String> = self.values.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    /// Parses [`Kernel::to_text`] output; `path` only labels errors.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, reason: &str| Error::Format {
            path: path.to_path_buf(),
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(0, &format!("missing {what}")));

        let (ln, magic) = next("header")?;
        if magic != "# attnscale kernel v1" {
            return Err(bad(ln, "not a kernel dump"));
        }
        let field = |(ln, line): (usize, &str), key: &str| -> Result<usize> {
            line.strip_prefix(key)
                .and_then(|rest| rest.trim().parse().ok())
                .ok_or_else(|| bad(ln, &format!("expected `{key} <int>`")))
        };
        let layer = field(next("layer")?, "layer")?;
        let m = field(next("size")?, "size")?;
        if m == 0 {
            return Err(bad(ln + 2, "empty kernel"));
        }
        let mut index = Vec::with_capacity(m);
        for _ in 0..m {
            let (ln, line) = next("index line")?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parsed = match parts.as_slice() {
                ["index", s, p, t] => (|| {
                    Some(KernelIndex {
                        sample: s.parse().ok()?,
                        position: if *p == "-" { None } else { Some(p.parse().ok()?) },
                        time: t.parse().ok()?,
                    })
                })(),
                _ => None,
            };
            index.push(parsed.ok_or_else(|| bad(ln, "expected `index <sample> <position|-> <time>`"))?);
        }
        let (ln, line) = next("values marker")?;
        if line != "values" {
            return Err(bad(ln, "expected `values`"));
        }
        let mut data = Vec::with_capacity(m * m);
        for _ in 0..m {
            let (ln, line) = next("value row")?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(ln, "unparsable number"))?;
            if row.len() != m {
                return Err(bad(ln, &format!("expected {m} values, got {}", row.len())));
            }
            data.extend(row);
        }
        Kernel::new(layer, index, Tensor::new(vec![m, m], data)?)
    }
}

/// Mean squared entrywise difference of two kernels on the same index set.
pub fn kernel_distance(a: &Kernel, b: &Kernel) -> Result<f64> {
    if a.index != b.index {
        return Err(Error::contract("kernels are indexed over different sets"));
    }
    let d = a.values.sub(&b.values)?;
    Ok(d.sum_squares() / d.len() as f64)
}

/// `(1/norm)·X·Xᵀ` for the rows of `x`.
pub(crate) fn gram(x: &Tensor, norm: f64) -> Result<Tensor> {
    crate::diffcore::gemm(1.0 / norm, x, false, x, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_kernel() -> Kernel {
        let index = vec![
            KernelIndex { sample: 0, position: Some(1), time: 0 },
            KernelIndex { sample: 2, position: None, time: 5 },
        ];
        let values = Tensor::from_rows(&[&[1.0, 0.1 + 0.2], &[0.3, std::f64::consts::PI]]).unwrap();
        Kernel::new(3, index, values).unwrap()
    }

    #[test]
    fn text_round_trip_is_exact() {
        let k = sample_kernel();
        let back = Kernel::from_text(&k.to_text(), Path::new("k.txt")).unwrap();
        assert_eq!(back, k);
    }

    #[test]
    fn malformed_dump_names_line() {
        let text = sample_kernel().to_text().replace("index 2 - 5", "index 2 x 5");
        match Kernel::from_text(&text, Path::new("k.txt")) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn distance_examples() {
        let k = sample_kernel();
        assert_eq!(kernel_distance(&k, &k).unwrap(), 0.0);
        let mut e = k.clone();
        e.values.data_mut()[1] += 0.5;
        let d = kernel_distance(&k, &e).unwrap();
        assert!((d - 0.25 / 4.0).abs() < 1e-15);
        assert_eq!(d, kernel_distance(&e, &k).unwrap());
    }

    #[test]
    fn distance_rejects_mismatched_index() {
        let k = sample_kernel();
        let other = k.clone().at_time(9);
        assert!(matches!(kernel_distance(&k, &other), Err(Error::Contract(_))));
    }
}
