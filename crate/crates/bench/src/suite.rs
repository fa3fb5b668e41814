//! Convolution shape suites.
//!
//! A suite file is plain text. The first non-blank, non-comment line must be
//! the version header `convsuite v1`. Every following record is one line of
//! 17 whitespace-separated fields:
//!
//! ```text
//! name model n h w c k kh kw sh sw dh dw pt pl pb pr
//! ```
//!
//! `model` is `resnet18`, `squeezenet10` or `custom`. `#` starts a comment
//! that runs to the end of the line. Names must be unique within a suite.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use indconv::{conv_output_shape, ConvParams, Shape4};
use thiserror::Error;

pub const SUITE_HEADER: &str = "convsuite v1";

const RESNET18: &str = include_str!("../suites/resnet18.suite");
const SQUEEZENET10: &str = include_str!("../suites/squeezenet10.suite");

/// Ids accepted by [`builtin_suite`].
pub const BUILTIN_SUITES: [&str; 2] = ["resnet18", "squeezenet10"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Resnet18,
    Squeezenet10,
    Custom,
}

impl ModelTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Resnet18 => "resnet18",
            ModelTag::Squeezenet10 => "squeezenet10",
            ModelTag::Custom => "custom",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "resnet18" => Some(ModelTag::Resnet18),
            "squeezenet10" => Some(ModelTag::Squeezenet10),
            "custom" => Some(ModelTag::Custom),
            _ => None,
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvShapeSpec {
    pub name: String,
    pub model: ModelTag,
    pub input: Shape4,
    pub params: ConvParams,
}

impl ConvShapeSpec {
    pub fn output(&self) -> Shape4 {
        conv_output_shape(&self.params, self.input).expect("validated at load time")
    }

    pub fn kind(&self) -> KernelStride {
        let p = &self.params;
        (p.kernel_h, p.kernel_w, p.stride_h, p.stride_w)
    }

    pub fn is_pointwise_unit(&self) -> bool {
        self.params.is_pointwise_unit()
    }

    pub fn is_3x3(&self) -> bool {
        self.params.kernel_h == 3 && self.params.kernel_w == 3
    }

    /// Geometry key used for de-duplication: everything but name and model.
    fn geometry_key(&self) -> [usize; 15] {
        let (s, p) = (self.input, &self.params);
        [
            s.n,
            s.h,
            s.w,
            s.c,
            p.out_channels,
            p.kernel_h,
            p.kernel_w,
            p.stride_h,
            p.stride_w,
            p.dilation_h,
            p.dilation_w,
            p.pad_top,
            p.pad_left,
            p.pad_bottom,
            p.pad_right,
        ]
    }
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },
    #[error("{source_name}: missing `{SUITE_HEADER}` header")]
    MissingHeader { source_name: String },
    #[error("{source_name}: suite has no records")]
    Empty { source_name: String },
    #[error("cannot read suite {path}: {err}")]
    Io { path: String, err: std::io::Error },
}

/// `(kernel_h, kernel_w, stride_h, stride_w)`.
pub type KernelStride = (usize, usize, usize, usize);

/// The five rows of the operator-type census, in order.
pub const CENSUS_ROWS: [(&str, KernelStride); 5] = [
    ("7x7 stride-2", (7, 7, 2, 2)),
    ("3x3 stride-2", (3, 3, 2, 2)),
    ("3x3 stride-1", (3, 3, 1, 1)),
    ("1x1 stride-2", (1, 1, 2, 2)),
    ("1x1 stride-1", (1, 1, 1, 1)),
];

/// Counts of distinct geometries per census row.
pub fn census(specs: &[ConvShapeSpec]) -> [usize; 5] {
    let mut seen = BTreeSet::new();
    let mut counts = [0; 5];
    for s in specs {
        if !seen.insert(s.geometry_key()) {
            continue;
        }
        if let Some(i) = CENSUS_ROWS.iter().position(|(_, k)| *k == s.kind()) {
            counts[i] += 1;
        }
    }
    counts
}

pub fn builtin_suite(id: &str) -> Option<Vec<ConvShapeSpec>> {
    let text = match id {
        "resnet18" => RESNET18,
        "squeezenet10" => SQUEEZENET10,
        _ => return None,
    };
    Some(parse_suite(text, id).expect("builtin suites are valid"))
}

/// Loads a builtin suite by id, or else reads `source` as a file path.
pub fn load_shape_suite(source: &str) -> Result<Vec<ConvShapeSpec>, SuiteError> {
    if let Some(specs) = builtin_suite(source) {
        return Ok(specs);
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path).map_err(|err| SuiteError::Io {
        path: source.to_string(),
        err,
    })?;
    parse_suite(&text, source)
}

pub fn parse_suite(text: &str, source_name: &str) -> Result<Vec<ConvShapeSpec>, SuiteError> {
    let err = |line: usize, msg: String| SuiteError::Parse {
        source_name: source_name.to_string(),
        line,
        msg,
    };
    let mut header_seen = false;
    let mut specs = Vec::new();
    let mut names: BTreeMap<String, usize> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if !header_seen {
            if line != SUITE_HEADER {
                if line.starts_with("convsuite") {
                    return Err(err(lineno, format!("unsupported suite version `{line}`")));
                }
                return Err(SuiteError::MissingHeader {
                    source_name: source_name.to_string(),
                });
            }
            header_seen = true;
            continue;
        }

        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 17 {
            return Err(err(lineno, format!("expected 17 fields, found {}", fields.len())));
        }
        let name = fields[0].to_string();
        let model =
            ModelTag::parse(fields[1]).ok_or_else(|| err(lineno, format!("unknown model tag `{}`", fields[1])))?;
        let mut v = [0usize; 15];
        for (slot, f) in v.iter_mut().zip(&fields[2..]) {
            *slot = f
                .parse()
                .map_err(|_| err(lineno, format!("`{f}` is not a non-negative integer")))?;
        }
        let [n, h, w, c, k, kh, kw, sh, sw, dh, dw, pt, pl, pb, pr] = v;
        let input = Shape4::new(n, h, w, c).map_err(|e| err(lineno, e.to_string()))?;
        let params = ConvParams::new(kh, kw, c, k)
            .with_stride(sh, sw)
            .with_dilation(dh, dw)
            .with_padding(pt, pl, pb, pr);
        conv_output_shape(&params, input).map_err(|e| err(lineno, e.to_string()))?;
        if let Some(prev) = names.insert(name.clone(), lineno) {
            return Err(err(
                lineno,
                format!("duplicate name `{name}` (first defined on line {prev})"),
            ));
        }
        specs.push(ConvShapeSpec {
            name,
            model,
            input,
            params,
        });
    }

    if !header_seen {
        return Err(SuiteError::MissingHeader {
            source_name: source_name.to_string(),
        });
    }
    if specs.is_empty() {
        return Err(SuiteError::Empty {
            source_name: source_name.to_string(),
        });
    }
    Ok(specs)
}
