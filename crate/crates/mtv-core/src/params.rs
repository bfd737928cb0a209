//! Named parameter storage: a flat, ordered registry of tensors with
//! checkpoint I/O and wildcard freeze masks.
//!
//! Every model tensor is registered once under a dotted name (for example
//! `backbone.b0.attn.q.w`). Registration order is the canonical order: the
//! gradient checker, the optimizer, and the tape lift all address parameters
//! by position, while checkpoints and freeze masks address them by name.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{read_tensor, write_tensor, DenseArray, Tape, ValueId};

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<DenseArray>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Registers a tensor under a unique name and returns its position.
    /// Duplicate names are a construction bug, not a runtime condition.
    pub fn register(&mut self, name: impl Into<String>, value: DenseArray) -> usize {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "parameter {name} registered twice"
        );
        let idx = self.values.len();
        self.by_name.insert(name.clone(), idx);
        self.names.push(name);
        self.values.push(value);
        idx
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, idx: usize) -> &DenseArray {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut DenseArray {
        &mut self.values[idx]
    }

    pub fn arrays(&self) -> &[DenseArray] {
        &self.values
    }

    /// Total scalar entries across all parameters.
    pub fn total_entries(&self) -> usize {
        self.values.iter().map(DenseArray::numel).sum()
    }

    /// Lifts every parameter onto the tape in registry order. Names matching
    /// any freeze pattern become constants (no gradient); the rest become
    /// differentiation targets.
    pub fn lift(&self, tape: &mut Tape, freeze_patterns: &[String]) -> Vec<ValueId> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(name, value)| {
                if freeze_patterns.iter().any(|p| matches_pattern(p, name)) {
                    tape.constant(value.clone())
                } else {
                    tape.param(value)
                }
            })
            .collect()
    }

    /// Lifts everything trainable, regardless of masks.
    pub fn lift_all(&self, tape: &mut Tape) -> Vec<ValueId> {
        self.values.iter().map(|v| tape.param(v)).collect()
    }

    /// Replaces the stored value at `idx`, keeping its shape.
    pub fn set_value(&mut self, idx: usize, value: DenseArray) -> Result<()> {
        if value.shape() != self.values[idx].shape() {
            return Err(Error::ShapeMismatch {
                op: "ParamSet::set_value",
                lhs: self.values[idx].shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.values[idx] = value;
        Ok(())
    }

    /// Writes a checkpoint directory: `manifest.json` listing parameter names
    /// in registry order plus one `.mtvt` tensor file per parameter.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest { params: self.names.clone() };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::format(&path, e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        for (name, value) in self.names.iter().zip(&self.values) {
            write_tensor(&dir.join(format!("{name}.mtvt")), value)?;
        }
        Ok(())
    }

    /// Reads a checkpoint directory into a fresh registry, in manifest order.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut set = ParamSet::new();
        for name in manifest.params {
            let value = read_tensor(&dir.join(format!("{name}.mtvt")))?;
            set.register(name, value);
        }
        Ok(set)
    }

    /// Loads checkpoint values into this registry. The checkpoint must carry
    /// exactly the same names in the same order with the same shapes; a model
    /// built from one config only accepts checkpoints of that config.
    pub fn load_into(&mut self, dir: &Path) -> Result<()> {
        let loaded = ParamSet::load(dir)?;
        if loaded.names != self.names {
            return Err(Error::format(
                dir,
                format!(
                    "checkpoint parameter list disagrees with the model ({} vs {} params)",
                    loaded.names.len(),
                    self.names.len()
                ),
            ));
        }
        for (idx, value) in loaded.values.into_iter().enumerate() {
            if value.shape() != self.values[idx].shape() {
                return Err(Error::format(
                    dir,
                    format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        self.names[idx],
                        value.shape(),
                        self.values[idx].shape()
                    ),
                ));
            }
            self.values[idx] = value;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    params: Vec<String>,
}

/// Wildcard name matching for freeze masks: `*` matches any run of
/// characters (including none), everything else is literal, and the whole
/// name must match.
pub fn matches_pattern(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == name;
    }
    let mut rest = match name.strip_prefix(parts[0]) {
        Some(r) => r,
        None => return false,
    };
    // Middle fragments take their leftmost match, which leaves maximal room
    // for the anchored suffix.
    for part in &parts[1..parts.len() - 1] {
        if part.is_empty() {
            continue;
        }
        match rest.find(part) {
            Some(pos) => rest = &rest[pos + part.len()..],
            None => return false,
        }
    }
    rest.ends_with(parts[parts.len() - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_preserves_order_and_names() {
        let mut ps = ParamSet::new();
        let a = ps.register("m.w", DenseArray::zeros(&[2, 3]));
        let b = ps.register("m.b", DenseArray::zeros(&[3]));
        assert_eq!((a, b), (0, 1));
        assert_eq!(ps.name(1), "m.b");
        assert_eq!(ps.index_of("m.w"), Some(0));
        assert_eq!(ps.index_of("missing"), None);
        assert_eq!(ps.total_entries(), 9);
    }

    #[test]
    #[should_panic(expected = "registered twice")]
    fn duplicate_names_panic() {
        let mut ps = ParamSet::new();
        ps.register("x", DenseArray::zeros(&[1]));
        ps.register("x", DenseArray::zeros(&[1]));
    }

    #[test]
    fn pattern_matching_cases() {
        assert!(matches_pattern("a.b", "a.b"));
        assert!(!matches_pattern("a.b", "a.b.c"));
        assert!(matches_pattern("a.*", "a.b.c"));
        assert!(matches_pattern("*.w", "backbone.b0.ffn.w"));
        assert!(!matches_pattern("*.w", "backbone.b0.ffn.b"));
        assert!(matches_pattern("backbone.*.ffn.*", "backbone.b3.ffn.l1.w"));
        assert!(!matches_pattern("backbone.*.ffn.*", "mst.b0.ffn.l1.w"));
        assert!(matches_pattern("*", "anything"));
        assert!(matches_pattern("a*b*c", "a-b-b-c"));
        assert!(!matches_pattern("a*b*c", "acb"));
        assert!(!matches_pattern("*b*b", "ab"));
        assert!(matches_pattern("text_pos", "text_pos"));
    }

    #[test]
    fn lift_respects_freeze_patterns() {
        let mut ps = ParamSet::new();
        ps.register("mst.gate", DenseArray::full(&[2], 1.0));
        ps.register("backbone.ffn.w", DenseArray::full(&[2], 2.0));
        let mut tape = Tape::new();
        let ids = ps.lift(&mut tape, &["backbone.*".to_string()]);
        let doubled: Vec<ValueId> = ids.iter().map(|&id| tape.scale(id, 2.0)).collect();
        let total = {
            let sum = tape.add(doubled[0], doubled[1]).unwrap();
            tape.mean_all(sum)
        };
        let grads = tape.backward(total).unwrap();
        assert!(grads.get(ids[0]).is_some());
        assert!(grads.get(ids[1]).is_none());
    }

    #[test]
    fn checkpoint_roundtrip_quantizes_to_f32() {
        let dir = tempfile::tempdir().unwrap();
        let mut ps = ParamSet::new();
        ps.register("a.w", DenseArray::new(vec![2], vec![0.1, -0.25]).unwrap());
        ps.register("a.b", DenseArray::new(vec![1], vec![std::f64::consts::PI]).unwrap());
        ps.save(dir.path()).unwrap();
        let loaded = ParamSet::load(dir.path()).unwrap();
        assert_eq!(loaded.names().collect::<Vec<_>>(), vec!["a.w", "a.b"]);
        // Tensor files hold f32 payloads; values come back f32-rounded.
        assert_eq!(loaded.value(0).data(), &[0.1f32 as f64, -0.25]);
        assert_eq!(loaded.value(1).data(), &[std::f32::consts::PI as f64]);
    }

    #[test]
    fn load_into_rejects_mismatched_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let mut ps = ParamSet::new();
        ps.register("a.w", DenseArray::zeros(&[2]));
        ps.save(dir.path()).unwrap();

        let mut other = ParamSet::new();
        other.register("a.w", DenseArray::zeros(&[3]));
        assert!(other.load_into(dir.path()).is_err());

        let mut renamed = ParamSet::new();
        renamed.register("b.w", DenseArray::zeros(&[2]));
        assert!(renamed.load_into(dir.path()).is_err());

        let mut ok = ParamSet::new();
        ok.register("a.w", DenseArray::full(&[2], 9.0));
        ok.load_into(dir.path()).unwrap();
        assert_eq!(ok.value(0).data(), &[0.0, 0.0]);
    }
}
