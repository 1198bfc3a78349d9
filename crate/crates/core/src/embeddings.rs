//! Component embedding files.
//!
//! JSON lines: a header `{"version": 1, "dimension": D, "count": n}`
//! followed by `n` records `{"component_id": ..., "vector": [...]}`.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use gibbsnet_autodiff::Tensor;
use gibbsnet_thermo::ComponentId;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const EMBEDDING_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingHeader {
    pub version: u32,
    pub dimension: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub component_id: ComponentId,
    pub vector: Vec<f64>,
}

/// Embeddings of a fixed dimension, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    ids: Vec<ComponentId>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<ComponentId, usize>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: ComponentId, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dimension {
            return Err(Error::Dimension {
                what: "embedding vector",
                expected: self.dimension,
                found: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite embedding for {id}")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Data(format!("duplicate embedding for {id}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ComponentId] {
        &self.ids
    }

    pub fn row(&self, id: &ComponentId) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownComponent(id.clone()))
    }

    pub fn vector(&self, id: &ComponentId) -> Result<&[f64]> {
        Ok(&self.vectors[self.row(id)?])
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::new(
            self.len(),
            self.dimension,
            self.vectors.iter().flatten().copied().collect(),
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format("empty embedding file".into()))?;
        let header: EmbeddingHeader = serde_json::from_str(&header?)
            .map_err(|e| Error::Format(format!("embedding header: {e}")))?;
        if header.version != EMBEDDING_FORMAT_VERSION {
            return Err(Error::Version {
                found: header.version,
                expected: EMBEDDING_FORMAT_VERSION,
            });
        }
        if header.dimension == 0 {
            return Err(Error::Format("embedding dimension must be positive".into()));
        }
        let mut table = Self::new(header.dimension);
        for (line_no, line) in lines {
            let rec: EmbeddingRecord = serde_json::from_str(&line?)
                .map_err(|e| Error::Format(format!("embedding line {line_no}: {e}")))?;
            table.insert(rec.component_id, rec.vector)?;
        }
        if table.len() != header.count {
            return Err(Error::Format(format!(
                "header announces {} embeddings, file holds {}",
                header.count,
                table.len()
            )));
        }
        Ok(table)
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let header = EmbeddingHeader {
            version: EMBEDDING_FORMAT_VERSION,
            dimension: self.dimension,
            count: self.len(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            let rec = EmbeddingRecord {
                component_id: id.clone(),
                vector: v.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exporter_style_file() {
        let text = concat!(
            "{\"version\": 1, \"dimension\": 3, \"count\": 2}\n",
            "{\"component_id\": \"CCO\", \"vector\": [0.1, -2.5, 3e-5]}\n",
            "{\"component_id\": \"O\", \"vector\": [1, 2, 3]}\n",
        );
        let t = EmbeddingTable::parse(text).unwrap();
        assert_eq!(t.dimension(), 3);
        assert_eq!(t.vector(&"CCO".into()).unwrap(), &[0.1, -2.5, 3e-5]);
        assert_eq!(t.row(&"O".into()).unwrap(), 1);
        assert!(matches!(t.row(&"N".into()), Err(Error::UnknownComponent(_))));
    }

    #[test]
    fn roundtrip_is_exact() {
        let mut t = EmbeddingTable::new(2);
        t.insert("a".into(), vec![0.1 + 0.2, std::f64::consts::PI]).unwrap();
        t.insert("7".into(), vec![-1e-300, 1.0 / 3.0]).unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(EmbeddingTable::read(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn malformed_files() {
        let bad = [
            "",
            "{\"version\": 2, \"dimension\": 1, \"count\": 0}\n",
            "{\"version\": 1, \"dimension\": 2, \"count\": 1}\n{\"component_id\": \"a\", \"vector\": [1]}\n",
            "{\"version\": 1, \"dimension\": 1, \"count\": 2}\n{\"component_id\": \"a\", \"vector\": [1]}\n",
            "{\"version\": 1, \"dimension\": 1, \"count\": 2}\n{\"component_id\": \"a\", \"vector\": [1]}\n{\"component_id\": \"a\", \"vector\": [2]}\n",
            "{\"version\": 1, \"dimension\": 0, \"count\": 0}\n",
            "not json\n",
        ];
        for text in bad {
            assert!(EmbeddingTable::parse(text).is_err(), "{text:?}");
        }
    }
}
