//! Binary model files: magic `PHRM`, a version byte, a kind byte, then a
//! length-prefixed header (training provenance and hyperparameters in a
//! fixed per-kind order) and a length-prefixed payload with the fitted
//! state. All integers and floats are little-endian; encoding is canonical,
//! so equal artifacts produce identical bytes.

use super::tree::{Tree, TreeNode};
use super::{
    Activation, DtParams, GammaMode, Hyperparams, Kernel, KnnParams, KnnStore, Metric, MlpNet,
    MlpParams, MlpStore, ModelArtifact, ModelError, ModelKind, Payload, RfParams, Standardizer,
    SvrParams, SvrStore, TrainMeta,
};

const MAGIC: &[u8; 4] = b"PHRM";
const VERSION: u8 = 0x01;
/// Decode guard against runaway recursion on hostile tree payloads.
const MAX_TREE_DEPTH: u32 = 64;

fn kind_byte(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::Dt => 0,
        ModelKind::Rf => 1,
        ModelKind::Knn => 2,
        ModelKind::Svr => 3,
        ModelKind::Mlp => 4,
    }
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for &v in vs {
        put_f64(out, v);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(ModelError::TruncatedPayload)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>, ModelError> {
        let bytes = count.checked_mul(8).ok_or(ModelError::TruncatedPayload)?;
        let s = self.take(bytes)?;
        Ok(s.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn done(&self) -> Result<(), ModelError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(ModelError::TruncatedPayload)
        }
    }
}

fn bool_byte(v: bool) -> u8 {
    v as u8
}

fn read_bool(r: &mut Reader, field: &'static str) -> Result<bool, ModelError> {
    match r.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(ModelError::BadFieldEncoding(field)),
    }
}

fn write_hyperparams(out: &mut Vec<u8>, hp: &Hyperparams) {
    match hp {
        Hyperparams::Dt(p) => put_u32(out, p.max_depth),
        Hyperparams::Rf(p) => {
            put_u32(out, p.n_trees);
            put_u32(out, p.max_depth);
            out.push(bool_byte(p.bootstrap));
        }
        Hyperparams::Knn(p) => {
            put_u32(out, p.n_neighbors);
            out.push(match p.metric {
                Metric::Manhattan => 0,
                Metric::Euclidean => 1,
            });
        }
        Hyperparams::Svr(p) => {
            out.push(match p.kernel {
                Kernel::Rbf => 0,
                Kernel::Sigmoid => 1,
                Kernel::Polynomial => 2,
            });
            put_f64(out, p.c);
            put_f64(out, p.epsilon_bpm);
            match p.gamma {
                GammaMode::Scale => {
                    out.push(0);
                    put_f64(out, 0.0);
                }
                GammaMode::Fixed(g) => {
                    out.push(1);
                    put_f64(out, g);
                }
            }
            put_u32(out, p.degree);
            put_f64(out, p.coef0);
        }
        Hyperparams::Mlp(p) => {
            for h in p.hidden {
                put_u32(out, h);
            }
            out.push(match p.activation {
                Activation::Relu => 0,
                Activation::Tanh => 1,
            });
            put_f64(out, p.alpha);
            put_f64(out, p.learning_rate);
            put_u32(out, p.batch_size);
            put_u32(out, p.max_epochs);
            put_u32(out, p.patience);
        }
    }
}

fn read_hyperparams(r: &mut Reader, kind: ModelKind) -> Result<Hyperparams, ModelError> {
    Ok(match kind {
        ModelKind::Dt => Hyperparams::Dt(DtParams {
            max_depth: r.u32()?,
        }),
        ModelKind::Rf => Hyperparams::Rf(RfParams {
            n_trees: r.u32()?,
            max_depth: r.u32()?,
            bootstrap: read_bool(r, "bootstrap flag")?,
        }),
        ModelKind::Knn => Hyperparams::Knn(KnnParams {
            n_neighbors: r.u32()?,
            metric: match r.u8()? {
                0 => Metric::Manhattan,
                1 => Metric::Euclidean,
                _ => return Err(ModelError::BadFieldEncoding("distance metric")),
            },
        }),
        ModelKind::Svr => {
            let kernel = match r.u8()? {
                0 => Kernel::Rbf,
                1 => Kernel::Sigmoid,
                2 => Kernel::Polynomial,
                _ => return Err(ModelError::BadFieldEncoding("kernel")),
            };
            let c = r.f64()?;
            let epsilon_bpm = r.f64()?;
            let gamma = match r.u8()? {
                0 => {
                    r.f64()?;
                    GammaMode::Scale
                }
                1 => GammaMode::Fixed(r.f64()?),
                _ => return Err(ModelError::BadFieldEncoding("gamma mode")),
            };
            Hyperparams::Svr(SvrParams {
                kernel,
                c,
                epsilon_bpm,
                gamma,
                degree: r.u32()?,
                coef0: r.f64()?,
            })
        }
        ModelKind::Mlp => {
            let hidden = [r.u32()?, r.u32()?, r.u32()?];
            let activation = match r.u8()? {
                0 => Activation::Relu,
                1 => Activation::Tanh,
                _ => return Err(ModelError::BadFieldEncoding("activation")),
            };
            Hyperparams::Mlp(MlpParams {
                hidden,
                activation,
                alpha: r.f64()?,
                learning_rate: r.f64()?,
                batch_size: r.u32()?,
                max_epochs: r.u32()?,
                patience: r.u32()?,
            })
        }
    })
}

/// 19 bytes per node: leaf flag, split feature, threshold, leaf value.
fn write_tree(out: &mut Vec<u8>, tree: &Tree) {
    put_u32(out, tree.nodes.len() as u32);
    for node in &tree.nodes {
        match node {
            TreeNode::Leaf { value } => {
                out.push(1);
                put_u16(out, 0);
                put_f64(out, 0.0);
                put_f64(out, *value);
            }
            TreeNode::Split {
                feature, threshold, ..
            } => {
                out.push(0);
                put_u16(out, *feature);
                put_f64(out, *threshold);
                put_f64(out, 0.0);
            }
        }
    }
}

/// Nodes are stored in preorder, so rebuilding in record order restores the
/// original arena indices exactly.
fn read_tree(r: &mut Reader, k: usize) -> Result<Tree, ModelError> {
    let n_nodes = r.u32()? as usize;
    if n_nodes == 0 {
        return Err(ModelError::BadFieldEncoding("empty tree"));
    }
    let mut records = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let leaf = r.u8()?;
        let feature = r.u16()?;
        let threshold = r.f64()?;
        let value = r.f64()?;
        if leaf > 1 {
            return Err(ModelError::BadFieldEncoding("leaf flag"));
        }
        if leaf == 0 && feature as usize >= k {
            return Err(ModelError::BadFieldEncoding("split feature"));
        }
        records.push((leaf, feature, threshold, value));
    }

    fn build(
        records: &[(u8, u16, f64, f64)],
        pos: &mut usize,
        depth: u32,
        nodes: &mut Vec<TreeNode>,
    ) -> Result<u32, ModelError> {
        if depth > MAX_TREE_DEPTH {
            return Err(ModelError::BadFieldEncoding("tree depth"));
        }
        let &(leaf, feature, threshold, value) = records
            .get(*pos)
            .ok_or(ModelError::BadFieldEncoding("tree shape"))?;
        *pos += 1;
        let slot = nodes.len() as u32;
        if leaf == 1 {
            nodes.push(TreeNode::Leaf { value });
            return Ok(slot);
        }
        nodes.push(TreeNode::Leaf { value: 0.0 });
        let left = build(records, pos, depth + 1, nodes)?;
        let right = build(records, pos, depth + 1, nodes)?;
        nodes[slot as usize] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        Ok(slot)
    }

    let mut nodes = Vec::with_capacity(n_nodes);
    let mut pos = 0;
    build(&records, &mut pos, 0, &mut nodes)?;
    if pos != n_nodes {
        return Err(ModelError::BadFieldEncoding("tree shape"));
    }
    Ok(Tree { nodes })
}

fn write_scaler(out: &mut Vec<u8>, s: &Standardizer) {
    put_f64s(out, &s.mean);
    put_f64s(out, &s.std);
}

fn read_scaler(r: &mut Reader, k: usize) -> Result<Standardizer, ModelError> {
    Ok(Standardizer {
        mean: r.f64s(k)?,
        std: r.f64s(k)?,
    })
}

fn write_payload(out: &mut Vec<u8>, m: &ModelArtifact) {
    match &m.payload {
        Payload::Dt(tree) => write_tree(out, tree),
        Payload::Rf(trees) => {
            put_u32(out, trees.len() as u32);
            for t in trees {
                write_tree(out, t);
            }
        }
        Payload::Knn(store) => {
            put_f64s(out, &store.rows);
            put_f64s(out, &store.labels);
        }
        Payload::Svr(store) => {
            put_u32(out, store.coefs.len() as u32);
            put_f64s(out, &store.support);
            put_f64s(out, &store.coefs);
            put_f64(out, store.bias);
            put_f64(out, store.gamma);
            write_scaler(out, &store.scaler);
        }
        Payload::Mlp(store) => {
            for w in &store.net.weights {
                put_f64s(out, w);
            }
            for b in &store.net.biases {
                put_f64s(out, b);
            }
            write_scaler(out, &store.scaler);
        }
    }
}

fn read_payload(
    r: &mut Reader,
    kind: ModelKind,
    hp: &Hyperparams,
    meta: &TrainMeta,
) -> Result<Payload, ModelError> {
    Ok(match (kind, hp) {
        (ModelKind::Dt, _) => Payload::Dt(read_tree(r, meta.k)?),
        (ModelKind::Rf, _) => {
            let n_trees = r.u32()? as usize;
            let mut trees = Vec::with_capacity(n_trees.min(1024));
            for _ in 0..n_trees {
                trees.push(read_tree(r, meta.k)?);
            }
            Payload::Rf(trees)
        }
        (ModelKind::Knn, _) => {
            let rows = r.f64s(
                meta.n_rows
                    .checked_mul(meta.k)
                    .ok_or(ModelError::TruncatedPayload)?,
            )?;
            let labels = r.f64s(meta.n_rows)?;
            Payload::Knn(KnnStore { rows, labels })
        }
        (ModelKind::Svr, _) => {
            let n_sv = r.u32()? as usize;
            let support = r.f64s(n_sv.checked_mul(meta.k).ok_or(ModelError::TruncatedPayload)?)?;
            let coefs = r.f64s(n_sv)?;
            let bias = r.f64()?;
            let gamma = r.f64()?;
            let scaler = read_scaler(r, meta.k)?;
            Payload::Svr(SvrStore {
                support,
                coefs,
                bias,
                gamma,
                scaler,
            })
        }
        (ModelKind::Mlp, Hyperparams::Mlp(p)) => {
            let sizes = vec![
                meta.k,
                p.hidden[0] as usize,
                p.hidden[1] as usize,
                p.hidden[2] as usize,
                1,
            ];
            let mut weights = Vec::new();
            for l in 0..sizes.len() - 1 {
                let count = sizes[l]
                    .checked_mul(sizes[l + 1])
                    .ok_or(ModelError::TruncatedPayload)?;
                weights.push(r.f64s(count)?);
            }
            let mut biases = Vec::new();
            for &s in &sizes[1..] {
                biases.push(r.f64s(s)?);
            }
            let scaler = read_scaler(r, meta.k)?;
            Payload::Mlp(MlpStore {
                net: MlpNet {
                    sizes,
                    weights,
                    biases,
                    activation: p.activation,
                },
                scaler,
            })
        }
        _ => unreachable!("hyperparams decoded for the same kind byte"),
    })
}

/// Encode a trained model to its binary file form.
pub fn serialize(m: &ModelArtifact) -> Vec<u8> {
    let mut header = Vec::new();
    put_u32(&mut header, m.meta.k as u32);
    put_u32(&mut header, m.meta.n_rows as u32);
    put_u64(&mut header, m.meta.seed);
    write_hyperparams(&mut header, &m.hyperparams);

    let mut payload = Vec::new();
    write_payload(&mut payload, m);

    let mut out = Vec::with_capacity(14 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(kind_byte(m.kind));
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(&header);
    put_u32(&mut out, payload.len() as u32);
    out.extend_from_slice(&payload);
    out
}

/// Decode a binary model file.
pub fn deserialize(bytes: &[u8]) -> Result<ModelArtifact, ModelError> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| ModelError::BadMagic)? != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let kind = match r.u8()? {
        0 => ModelKind::Dt,
        1 => ModelKind::Rf,
        2 => ModelKind::Knn,
        3 => ModelKind::Svr,
        4 => ModelKind::Mlp,
        _ => return Err(ModelError::BadFieldEncoding("model kind")),
    };

    let header_len = r.u32()? as usize;
    let mut hr = Reader::new(r.take(header_len)?);
    let meta = TrainMeta {
        k: hr.u32()? as usize,
        n_rows: hr.u32()? as usize,
        seed: hr.u64()?,
    };
    let hyperparams = read_hyperparams(&mut hr, kind)?;
    hr.done()?;

    let payload_len = r.u32()? as usize;
    let mut pr = Reader::new(r.take(payload_len)?);
    let payload = read_payload(&mut pr, kind, &hyperparams, &meta)?;
    pr.done()?;
    r.done()?;

    Ok(ModelArtifact {
        kind,
        hyperparams,
        meta,
        payload,
    })
}

/// Serialized size in bytes, as written by `serialize`.
pub fn model_size(m: &ModelArtifact) -> u64 {
    serialize(m).len() as u64
}

#[cfg(test)]
mod tests {
    use super::super::{fit, predict, Hyperparams, ModelKind};
    use super::*;
    use crate::dataset::FeatureMatrix;

    fn train_matrix() -> FeatureMatrix {
        let mut fm = FeatureMatrix::new(3);
        for i in 0..24 {
            let x = [
                70.0 + (i % 6) as f64,
                68.0 + ((i * 3) % 8) as f64,
                72.0 + ((i * 7) % 5) as f64,
            ];
            fm.push_row(&x, 66.0 + ((i * 11) % 19) as f64, i as f64);
        }
        fm
    }

    #[test]
    fn round_trips_every_kind() {
        let fm = train_matrix();
        for kind in ModelKind::ALL {
            let m = fit(&fm, &Hyperparams::default_for(kind), 42).unwrap();
            let bytes = serialize(&m);
            let back = deserialize(&bytes).unwrap();
            assert_eq!(m, back, "{kind}");
            let probe = [71.0, 69.0, 73.0];
            assert_eq!(
                predict(&m, &probe).unwrap().to_bits(),
                predict(&back, &probe).unwrap().to_bits(),
                "{kind}"
            );
            assert_eq!(model_size(&m), bytes.len() as u64);
        }
    }

    #[test]
    fn encoding_is_canonical() {
        let fm = train_matrix();
        let m = fit(&fm, &Hyperparams::default_for(ModelKind::Rf), 7).unwrap();
        let bytes = serialize(&m);
        assert_eq!(bytes, serialize(&m));
        assert_eq!(bytes, serialize(&deserialize(&bytes).unwrap()));
    }

    #[test]
    fn rejects_bad_magic() {
        let fm = train_matrix();
        let m = fit(&fm, &Hyperparams::default_for(ModelKind::Dt), 0).unwrap();
        let mut bytes = serialize(&m);
        bytes[0] = b'Q';
        assert!(matches!(deserialize(&bytes), Err(ModelError::BadMagic)));
        assert!(matches!(deserialize(b"PH"), Err(ModelError::BadMagic)));
    }

    #[test]
    fn rejects_unknown_version() {
        let fm = train_matrix();
        let m = fit(&fm, &Hyperparams::default_for(ModelKind::Dt), 0).unwrap();
        let mut bytes = serialize(&m);
        bytes[4] = 2;
        assert!(matches!(
            deserialize(&bytes),
            Err(ModelError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let fm = train_matrix();
        let m = fit(&fm, &Hyperparams::default_for(ModelKind::Knn), 0).unwrap();
        let bytes = serialize(&m);
        assert!(matches!(
            deserialize(&bytes[..bytes.len() - 1]),
            Err(ModelError::TruncatedPayload)
        ));
        let mut extended = bytes.clone();
        extended.push(0);
        assert!(matches!(
            deserialize(&extended),
            Err(ModelError::TruncatedPayload)
        ));
    }

    #[test]
    fn rejects_bad_enum_bytes() {
        let fm = train_matrix();
        let m = fit(&fm, &Hyperparams::default_for(ModelKind::Dt), 0).unwrap();
        let mut bytes = serialize(&m);
        bytes[5] = 9;
        assert!(matches!(
            deserialize(&bytes),
            Err(ModelError::BadFieldEncoding("model kind"))
        ));

        let m = fit(&fm, &Hyperparams::default_for(ModelKind::Knn), 0).unwrap();
        let mut bytes = serialize(&m);
        // header: len prefix at 6, fields k/n_rows/seed/n_neighbors, then the
        // metric byte
        let metric_at = 10 + 4 + 4 + 8 + 4;
        bytes[metric_at] = 7;
        assert!(matches!(
            deserialize(&bytes),
            Err(ModelError::BadFieldEncoding("distance metric"))
        ));
    }

    #[test]
    fn deeper_trees_serialize_larger() {
        let mut fm = FeatureMatrix::new(1);
        for i in 0..128 {
            fm.push_row(&[i as f64], 60.0 + ((i * 13) % 37) as f64, i as f64);
        }
        let sizes: Vec<u64> = [1u32, 3, 6]
            .iter()
            .map(|&d| {
                let m = fit(&fm, &Hyperparams::Dt(DtParams { max_depth: d }), 0).unwrap();
                model_size(&m)
            })
            .collect();
        assert!(sizes[0] < sizes[1] && sizes[1] < sizes[2], "{sizes:?}");
    }
}
