//! Language distance against a composite pretraining mixture.
//!
//! A corpus is summarised by the token-count-weighted blend of per-language
//! typological feature vectors, `V_p = sum_i (T_i / T_total) V_i`. A
//! language's distance from that mixture is the negative natural log of its
//! cosine similarity to `V_p`; zero means positively collinear, larger means
//! farther. Cosine <= 0 leaves the distance undefined and is reported as an
//! explicit error rather than an infinity.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A typological feature vector for one language.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageVector {
    pub language: String,
    pub features: Vec<f64>,
}

/// All loaded vectors; every entry has the same dimension and non-zero norm.
#[derive(Debug, Clone)]
pub struct VectorRegistry {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl VectorRegistry {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, language: &str) -> Option<LanguageVector> {
        self.vectors.get(language).map(|features| LanguageVector {
            language: language.to_string(),
            features: features.clone(),
        })
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    /// Test/builder constructor; enforces the registry invariants.
    pub fn from_vectors(vectors: Vec<LanguageVector>) -> Result<Self> {
        let dim = vectors.first().map(|v| v.features.len()).unwrap_or(0);
        let mut map = BTreeMap::new();
        for v in vectors {
            if v.features.len() != dim {
                return Err(Error::input(format!(
                    "vector for {:?} has dimension {}, expected {dim}",
                    v.language,
                    v.features.len()
                )));
            }
            if norm(&v.features) == 0.0 {
                return Err(Error::input(format!(
                    "vector for {:?} has zero norm",
                    v.language
                )));
            }
            if map.insert(v.language.clone(), v.features).is_some() {
                return Err(Error::input(format!("duplicate language {:?}", v.language)));
            }
        }
        Ok(VectorRegistry { dim, vectors: map })
    }
}

/// Per-language token counts of the pretraining corpus.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorpusWeights {
    pub counts: BTreeMap<String, u64>,
}

impl CorpusWeights {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// The token-count-weighted composite vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeVector {
    pub features: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::input("cosine of a zero-norm vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    // Clamp away rounding excursions beyond [-1, 1].
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Loads a `language,f1,...,fF` CSV. Rows must be rectangular with no empty
/// cells and unique language ids; violations name the offending row. No
/// imputation happens here: incomplete typology exports must be cleaned
/// upstream, not silently filled.
pub fn load_vectors(path: impl AsRef<Path>) -> Result<VectorRegistry> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(1, format!("bad header: {e}")))?
        .clone();
    if headers.len() < 2 || headers.get(0) != Some("language") {
        return Err(Error::parse(
            1,
            "header must be \"language,f1,...,fF\" with at least one feature",
        ));
    }
    let dim = headers.len() - 1;

    let mut vectors = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row_no = idx + 2; // header is row 1
        let record = record.map_err(|e| Error::parse(row_no, format!("bad row: {e}")))?;
        if record.len() != dim + 1 {
            return Err(Error::parse(
                row_no,
                format!("expected {} cells, found {}", dim + 1, record.len()),
            ));
        }
        let language = record.get(0).unwrap_or("").to_string();
        if language.is_empty() {
            return Err(Error::parse(row_no, "empty language id"));
        }
        let mut features = Vec::with_capacity(dim);
        for (col, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() {
                return Err(Error::parse(
                    row_no,
                    format!("empty cell in column {}", col + 2),
                ));
            }
            let value: f64 = cell.parse().map_err(|_| {
                Error::parse(row_no, format!("cell {cell:?} is not a number"))
            })?;
            features.push(value);
        }
        if vectors.iter().any(|v: &LanguageVector| v.language == language) {
            return Err(Error::parse(
                row_no,
                format!("duplicate language {language:?}"),
            ));
        }
        if norm(&features) == 0.0 {
            return Err(Error::parse(
                row_no,
                format!("vector for {language:?} has zero norm"),
            ));
        }
        vectors.push(LanguageVector { language, features });
    }
    VectorRegistry::from_vectors(vectors)
}

/// `V_p = sum_i (T_i / T_total) V_i`, summed in ascending language-id order.
pub fn composite_vector(
    registry: &VectorRegistry,
    weights: &CorpusWeights,
) -> Result<CompositeVector> {
    let total = weights.total();
    if total == 0 {
        return Err(Error::input("all token counts are zero"));
    }
    let mut features = vec![0.0; registry.dim()];
    // BTreeMap iteration is ascending by language id.
    for (language, &count) in &weights.counts {
        let vector = registry.get(language).ok_or_else(|| {
            Error::input(format!("language {language:?} missing from vector registry"))
        })?;
        let w = count as f64 / total as f64;
        for (acc, v) in features.iter_mut().zip(&vector.features) {
            *acc += w * v;
        }
    }
    Ok(CompositeVector { features })
}

/// `phi = -ln(cos(v, V_p))`; requires positive similarity.
pub fn distance(v: &LanguageVector, composite: &CompositeVector) -> Result<f64> {
    let cos = cosine(&v.features, &composite.features)?;
    if cos <= 0.0 {
        return Err(Error::Domain(
            "distance undefined for non-positive similarity".into(),
        ));
    }
    Ok(-cos.ln())
}

/// One row of the ranking table.
#[derive(Debug, Clone, Serialize)]
pub struct RankEntry {
    pub language: String,
    pub cosine: f64,
    /// `None` when the distance is undefined (cosine <= 0).
    pub phi: Option<f64>,
}

/// Ranks every registry language by ascending distance to the composite;
/// languages with undefined distance sort last, flagged by `phi: None`.
pub fn rank_languages(registry: &VectorRegistry, weights: &CorpusWeights) -> Result<Vec<RankEntry>> {
    let composite = composite_vector(registry, weights)?;
    let mut rows: Vec<RankEntry> = Vec::with_capacity(registry.len());
    for language in registry.languages() {
        let v = registry.get(language).expect("registry key");
        let cos = cosine(&v.features, &composite.features)?;
        let phi = if cos > 0.0 { Some(-cos.ln()) } else { None };
        rows.push(RankEntry {
            language: language.to_string(),
            cosine: cos,
            phi,
        });
    }
    rows.sort_by(|a, b| match (a.phi, b.phi) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap().then(a.language.cmp(&b.language)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.language.cmp(&b.language),
    });
    Ok(rows)
}

/// Writes a ranking as `language,cosine,phi` CSV; undefined distances render
/// as the literal `undefined`.
pub fn write_rank_csv<W: std::io::Write>(out: W, rows: &[RankEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["language", "cosine", "phi"])
        .map_err(|e| Error::Input(e.to_string()))?;
    for row in rows {
        let phi = row
            .phi
            .map(|p| p.to_string())
            .unwrap_or_else(|| "undefined".to_string());
        w.write_record([row.language.as_str(), &row.cosine.to_string(), &phi])
            .map_err(|e| Error::Input(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
