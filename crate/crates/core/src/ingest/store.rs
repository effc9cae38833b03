//! Binary persistence of per-view features and of the retrieval database.

use std::path::Path;

use nalgebra::Vector2;

use crate::codec::{read_file, Reader, Writer};
use crate::features::{
    DescriptorKind, DescriptorSet, FeatureSet, ImageFeatures, Keypoint, DESCRIPTOR_LEN,
};
use crate::retrieval::{build_database, ImageDatabase, IntraMatrix, SpeedupIndex, ViewInfo};
use crate::vocab::BowVector;
use crate::PersistError;

pub const FEATURES_FORMAT_VERSION: u32 = 1;
pub const DATABASE_FORMAT_VERSION: u32 = 1;
const FEATURES_MAGIC: &[u8; 4] = b"SLFT";
const DATABASE_MAGIC: &[u8; 4] = b"SLDB";

fn write_set(w: &mut Writer, set: &FeatureSet) {
    w.u8(set.descriptors.kind.tag());
    w.u64(set.len() as u64);
    for kp in &set.keypoints {
        w.f64(kp.position.x);
        w.f64(kp.position.y);
        w.f64(kp.scale);
        w.f64(kp.orientation);
        w.f64(kp.response);
    }
    for &v in set.descriptors.as_flat() {
        w.f32(v);
    }
}

fn read_set(r: &mut Reader) -> Result<FeatureSet, PersistError> {
    let tag = r.u8()?;
    let kind = DescriptorKind::from_tag(tag).ok_or_else(|| r.corrupt("unknown descriptor kind"))?;
    let n = r.count(5 * 8 + 4 * DESCRIPTOR_LEN)?;
    let mut keypoints = Vec::with_capacity(n);
    for _ in 0..n {
        keypoints.push(Keypoint {
            position: Vector2::new(r.f64()?, r.f64()?),
            scale: r.f64()?,
            orientation: r.f64()?,
            response: r.f64()?,
        });
    }
    let mut flat = Vec::with_capacity(n * DESCRIPTOR_LEN);
    for _ in 0..n * DESCRIPTOR_LEN {
        flat.push(r.f32()?);
    }
    Ok(FeatureSet {
        keypoints,
        descriptors: DescriptorSet::from_flat(kind, flat).expect("whole descriptors"),
    })
}

pub fn save_features(path: &Path, features: &ImageFeatures) -> Result<(), PersistError> {
    let mut w = Writer::new(FEATURES_MAGIC, FEATURES_FORMAT_VERSION);
    write_set(&mut w, &features.local);
    write_set(&mut w, &features.region);
    w.write_to(path)
}

pub fn load_features(path: &Path) -> Result<ImageFeatures, PersistError> {
    let data = read_file(path)?;
    let mut r = Reader::open(
        &data,
        FEATURES_MAGIC,
        FEATURES_FORMAT_VERSION,
        &path.display().to_string(),
    )?;
    let local = read_set(&mut r)?;
    let region = read_set(&mut r)?;
    r.finish()?;
    if local.descriptors.kind != DescriptorKind::Local
        || region.descriptors.kind != DescriptorKind::Region
    {
        return Err(PersistError::CorruptFile {
            path: path.display().to_string(),
            reason: "feature sets out of order".into(),
        });
    }
    Ok(ImageFeatures { local, region })
}

/// Writes the database, its intra-distance matrix and speed-up index to a
/// single file.
pub fn save_database(
    path: &Path,
    db: &ImageDatabase,
    matrix: &IntraMatrix,
    speedup: &SpeedupIndex,
) -> Result<(), PersistError> {
    let mut w = Writer::new(DATABASE_MAGIC, DATABASE_FORMAT_VERSION);
    let views = serde_json::to_vec(db.views()).expect("serializable views");
    w.bytes(&views);
    for bow in db.bows() {
        w.u64(bow.len() as u64);
        for &(id, v) in bow.entries() {
            w.u32(id);
            w.f64(v);
        }
    }
    w.u64(matrix.size() as u64);
    for &v in matrix.as_slice() {
        w.f64(v);
    }
    w.u64(speedup.k() as u64);
    w.u64(speedup.rows().len() as u64);
    for row in speedup.rows() {
        w.u64(row.len() as u64);
        for &j in row {
            w.u64(j as u64);
        }
    }
    w.write_to(path)
}

pub fn load_database(
    path: &Path,
) -> Result<(ImageDatabase, IntraMatrix, SpeedupIndex), PersistError> {
    let data = read_file(path)?;
    let mut r = Reader::open(
        &data,
        DATABASE_MAGIC,
        DATABASE_FORMAT_VERSION,
        &path.display().to_string(),
    )?;
    let views: Vec<ViewInfo> =
        serde_json::from_slice(r.bytes()?).map_err(|e| r.corrupt(&e.to_string()))?;
    let mut entries = Vec::with_capacity(views.len());
    for view in views {
        let n = r.count(12)?;
        let mut bow = Vec::with_capacity(n);
        for _ in 0..n {
            bow.push((r.u32()?, r.f64()?));
        }
        entries.push((view, BowVector::from_normalized(bow)));
    }
    let count = entries.len();
    let db = build_database(entries).map_err(|e| r.corrupt(&e.to_string()))?;
    let n = r.u64()? as usize;
    if n != count {
        return Err(r.corrupt("matrix size differs from view count"));
    }
    let cells = n
        .checked_mul(n)
        .ok_or_else(|| r.corrupt("matrix too large"))?;
    let mut sim = Vec::with_capacity(cells.min(data.len() / 8));
    for _ in 0..cells {
        sim.push(r.f64()?);
    }
    let matrix = IntraMatrix::from_raw(n, sim).ok_or_else(|| r.corrupt("matrix shape"))?;
    let k = r.u64()? as usize;
    let rows_n = r.count(8)?;
    let mut rows = Vec::with_capacity(rows_n);
    for _ in 0..rows_n {
        let len = r.count(8)?;
        let mut row = Vec::with_capacity(len);
        for _ in 0..len {
            let j = r.u64()? as usize;
            if j >= count {
                return Err(r.corrupt("speed-up index out of range"));
            }
            row.push(j);
        }
        rows.push(row);
    }
    r.finish()?;
    Ok((db, matrix, SpeedupIndex::from_rows(k, rows)))
}
