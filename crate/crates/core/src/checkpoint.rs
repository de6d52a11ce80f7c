//! Versioned binary archive for generator pairs: architecture descriptors,
//! seeds, and every tensor (including the frozen seed tensor) in one file.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::generators::{
    ImageGenerator, ImageGeneratorConfig, KernelField, KernelFieldConfig, TensorStore,
};
use crate::nn::{fl, Scalar};

const MAGIC: &[u8; 8] = b"DBLRCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PairDescriptor {
    format_version: u32,
    image: ImageDescriptor,
    kernel: KernelDescriptor,
}

#[derive(Serialize, Deserialize)]
struct ImageDescriptor {
    out_size: (usize, usize),
    channels: usize,
    seed: u64,
    config: ImageGeneratorConfig,
}

#[derive(Serialize, Deserialize)]
struct KernelDescriptor {
    k_size: (usize, usize),
    seed: u64,
    config: KernelFieldConfig,
}

fn io_err(path: &Path, source: std::io::Error) -> DeblurError {
    DeblurError::io(path.display().to_string(), source)
}

fn write_store<T: Scalar, W: Write>(mut w: W, store: &TensorStore<T>) -> std::io::Result<()> {
    w.write_all(&(store.entries().len() as u32).to_le_bytes())?;
    for entry in store.entries() {
        let name = entry.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[entry.trainable as u8])?;
        let shape = entry.value.shape();
        w.write_all(&[shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in entry.value.iter() {
            w.write_all(&v.to_f64().unwrap().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_into_store<T: Scalar, R: Read>(
    r: &mut R,
    store: &mut TensorStore<T>,
    path: &Path,
) -> Result<()> {
    let count = u32::from_le_bytes(read_exact(r).map_err(|e| io_err(path, e))?) as usize;
    if count != store.entries().len() {
        return Err(DeblurError::Checkpoint(format!(
            "archive holds {count} tensors, architecture expects {}",
            store.entries().len()
        )));
    }
    for entry in store.entries_mut() {
        let name_len = u16::from_le_bytes(read_exact(r).map_err(|e| io_err(path, e))?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|e| io_err(path, e))?;
        let name = String::from_utf8_lossy(&name);
        if name != entry.name {
            return Err(DeblurError::Checkpoint(format!(
                "tensor order mismatch: archive has '{name}', expected '{}'",
                entry.name
            )));
        }
        let trainable = read_exact::<_, 1>(r).map_err(|e| io_err(path, e))?[0] != 0;
        if trainable != entry.trainable {
            return Err(DeblurError::Checkpoint(format!(
                "trainable flag mismatch on '{name}'"
            )));
        }
        let ndim = read_exact::<_, 1>(r).map_err(|e| io_err(path, e))?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(read_exact(r).map_err(|e| io_err(path, e))?) as usize);
        }
        if shape != entry.value.shape() {
            return Err(DeblurError::Checkpoint(format!(
                "shape mismatch on '{name}': archive {shape:?}, architecture {:?}",
                entry.value.shape()
            )));
        }
        for v in entry.value.iter_mut() {
            let raw = f64::from_le_bytes(read_exact(r).map_err(|e| io_err(path, e))?);
            *v = fl(raw);
        }
    }
    Ok(())
}

/// Saves a generator pair into one archive.
pub fn save_pair<T: Scalar>(
    path: &Path,
    generator: &ImageGenerator<T>,
    field: &KernelField<T>,
) -> Result<()> {
    let descriptor = PairDescriptor {
        format_version: FORMAT_VERSION,
        image: ImageDescriptor {
            out_size: generator.out_size(),
            channels: generator.channels(),
            seed: generator.seed(),
            config: generator.config().clone(),
        },
        kernel: KernelDescriptor {
            k_size: field.k_size(),
            seed: field.seed(),
            config: field.config().clone(),
        },
    };
    let desc =
        serde_json::to_vec(&descriptor).map_err(|e| DeblurError::Checkpoint(e.to_string()))?;
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(desc.len() as u32).to_le_bytes())?;
        w.write_all(&desc)?;
        write_store(&mut w, generator.store())?;
        write_store(&mut w, field.store())?;
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

/// Restores a generator pair saved by [`save_pair`]; the architectures are
/// rebuilt from their descriptors and every tensor overwritten from the
/// archive.
pub fn load_pair<T: Scalar>(path: &Path) -> Result<(ImageGenerator<T>, KernelField<T>)> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let magic = read_exact::<_, 8>(&mut r).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(DeblurError::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut r).map_err(|e| io_err(path, e))?);
    if version != FORMAT_VERSION {
        return Err(DeblurError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let desc_len = u32::from_le_bytes(read_exact(&mut r).map_err(|e| io_err(path, e))?) as usize;
    let mut desc = vec![0u8; desc_len];
    r.read_exact(&mut desc).map_err(|e| io_err(path, e))?;
    let descriptor: PairDescriptor =
        serde_json::from_slice(&desc).map_err(|e| DeblurError::Checkpoint(e.to_string()))?;

    let mut generator: ImageGenerator<T> = ImageGenerator::init(
        descriptor.image.out_size,
        descriptor.image.channels,
        descriptor.image.seed,
        descriptor.image.config,
    )?;
    let mut field: KernelField<T> = KernelField::init(
        descriptor.kernel.k_size,
        descriptor.kernel.seed,
        descriptor.kernel.config,
    )?;
    read_into_store(&mut r, generator.store_mut(), path)?;
    read_into_store(&mut r, field.store_mut(), path)?;
    Ok((generator, field))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_renders() {
        let dir = std::env::temp_dir().join("deblur_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pair.ckpt");

        let generator: ImageGenerator<f32> =
            ImageGenerator::init((40, 36), 1, 17, ImageGeneratorConfig::default()).unwrap();
        let field: KernelField<f32> =
            KernelField::init((9, 9), 18, KernelFieldConfig::default()).unwrap();
        save_pair(&path, &generator, &field).unwrap();

        let (gen2, field2) = load_pair::<f32>(&path).unwrap();
        assert_eq!(generator.render().data(), gen2.render().data());
        assert_eq!(field.render().data(), field2.render().data());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn rejects_corrupt_archive() {
        let dir = std::env::temp_dir().join("deblur_ckpt_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(
            load_pair::<f32>(&path),
            Err(DeblurError::Checkpoint(_)) | Err(DeblurError::Io { .. })
        ));
        std::fs::remove_file(&path).unwrap();
    }
}
