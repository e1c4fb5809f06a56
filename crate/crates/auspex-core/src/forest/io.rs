//! Forest file format: magic and version, a manifest (psi, gamma,
//! threshold and the bound feature names), per-tree node arrays in
//! little-endian order, and a trailing 64-bit checksum.

use std::path::Path;

use crate::binfmt::{verify_checksum, ByteReader, ByteWriter};
use crate::error::{Error, Result};

use super::{IsolationForest, IsolationTree, TreeNode};

const MAGIC: &[u8; 4] = b"AXIF";
const FORMAT_VERSION: u32 = 1;

pub fn save_forest(forest: &IsolationForest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = ByteWriter::new();
    w.put_bytes(MAGIC);
    w.put_u32(FORMAT_VERSION);
    w.put_u32(forest.psi() as u32);
    w.put_u32(forest.gamma() as u32);
    w.put_f64(forest.threshold());
    w.put_u32(forest.num_features() as u32);
    for name in forest.feature_names() {
        w.put_str(name);
    }
    w.put_u32(forest.num_trees() as u32);
    for tree in forest.trees() {
        w.put_u32(tree.nodes.len() as u32);
        for node in &tree.nodes {
            match node {
                TreeNode::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    w.put_u8(0);
                    w.put_u32(*feature);
                    w.put_f64(*value);
                    w.put_u32(*left);
                    w.put_u32(*right);
                }
                TreeNode::Leaf { count } => {
                    w.put_u8(1);
                    w.put_u32(*count);
                }
            }
        }
    }
    std::fs::write(path, w.finish_with_checksum()).map_err(|e| Error::io(path, e))
}

pub fn load_forest(path: impl AsRef<Path>) -> Result<IsolationForest> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 + MAGIC.len() {
        return Err(Error::CorruptFile(format!(
            "{}: too short to be a forest file",
            path.display()
        )));
    }
    let payload = verify_checksum(&bytes)?;
    let mut r = ByteReader::new(payload);
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptFile("not a forest file".into()));
    }
    let version = r.get_u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let psi = r.get_u32()? as usize;
    let gamma = r.get_u32()? as usize;
    let threshold = r.get_f64()?;
    if psi < 2 {
        return Err(Error::CorruptFile(format!("psi {psi} below 2")));
    }
    let feature_count = r.get_u32()? as usize;
    let mut feature_names = Vec::with_capacity(feature_count);
    for _ in 0..feature_count {
        feature_names.push(r.get_str()?);
    }

    let tree_count = r.get_u32()? as usize;
    if tree_count == 0 {
        return Err(Error::CorruptFile("forest holds no trees".into()));
    }
    let mut trees = Vec::with_capacity(tree_count);
    for _ in 0..tree_count {
        let node_count = r.get_u32()? as usize;
        let mut nodes = Vec::with_capacity(node_count);
        for _ in 0..node_count {
            let node = match r.get_u8()? {
                0 => {
                    let feature = r.get_u32()?;
                    let value = r.get_f64()?;
                    let left = r.get_u32()?;
                    let right = r.get_u32()?;
                    if feature as usize >= feature_count
                        || left as usize >= node_count
                        || right as usize >= node_count
                    {
                        return Err(Error::CorruptFile("split node indices out of range".into()));
                    }
                    TreeNode::Split {
                        feature,
                        value,
                        left,
                        right,
                    }
                }
                1 => TreeNode::Leaf {
                    count: r.get_u32()?,
                },
                other => {
                    return Err(Error::CorruptFile(format!("unknown node kind {other}")));
                }
            };
            nodes.push(node);
        }
        if nodes.is_empty() {
            return Err(Error::CorruptFile("tree with no nodes".into()));
        }
        trees.push(IsolationTree { nodes });
    }
    if r.remaining() != 0 {
        return Err(Error::CorruptFile(format!("{} trailing bytes", r.remaining())));
    }
    Ok(IsolationForest::from_parts(
        trees,
        psi,
        gamma,
        threshold,
        feature_names,
    ))
}
