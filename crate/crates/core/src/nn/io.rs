//! Binary weight files.
//!
//! All integers are little-endian `u32`, all weights little-endian IEEE-754
//! `f64`:
//!
//! ```text
//! offset  field
//! 0       magic  b"FLWT"
//! 4       format version (1)
//! 8       tag length n, followed by n bytes of UTF-8 method tag
//! 12+n    activation (u8: 0 = relu, 1 = leaky_relu)
//! 13+n    C (classes), I (input width), layer count K
//! 25+n    K pairs of (rows, cols), cols including the bias column
//! ...     every layer's entries, row-major, layers in order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, LayerWeights, Matrix, ModelWeights};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"FLWT";
const VERSION: u32 = 1;

pub fn write_model<W: Write>(mut w: W, model: &ModelWeights, tag: &str) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_u32(&mut w, tag.len())?;
    w.write_all(tag.as_bytes())?;
    w.write_all(&[model.activation().tag()])?;
    write_u32(&mut w, model.num_classes())?;
    write_u32(&mut w, model.input_dim())?;
    write_u32(&mut w, model.layers().len())?;
    for layer in model.layers() {
        write_u32(&mut w, layer.matrix().rows())?;
        write_u32(&mut w, layer.matrix().cols())?;
    }
    for layer in model.layers() {
        for v in layer.matrix().as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Returns the model and its method tag.
pub fn read_model<R: Read>(mut r: R) -> Result<(ModelWeights, String)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::WeightFormat(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::WeightFormat(format!("unsupported version {version}")));
    }
    let tag_len = read_u32(&mut r)? as usize;
    let mut tag = vec![0u8; tag_len];
    r.read_exact(&mut tag)?;
    let tag = String::from_utf8(tag).map_err(|e| Error::WeightFormat(e.to_string()))?;
    let mut act = [0u8; 1];
    r.read_exact(&mut act)?;
    let activation = Activation::from_tag(act[0])
        .ok_or_else(|| Error::WeightFormat(format!("unknown activation tag {}", act[0])))?;
    let classes = read_u32(&mut r)? as usize;
    let input = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        shapes.push((read_u32(&mut r)? as usize, read_u32(&mut r)? as usize));
    }
    let mut layers = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for (rows, cols) in shapes {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        layers.push(LayerWeights::new(Matrix::from_vec(rows, cols, data))?);
    }
    let model = ModelWeights::new(layers, activation)?;
    if model.num_classes() != classes || model.input_dim() != input {
        return Err(Error::WeightFormat(format!(
            "header says C={classes}, I={input}; layers give C={}, I={}",
            model.num_classes(),
            model.input_dim()
        )));
    }
    Ok((model, tag))
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelWeights, tag: &str) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_model(&mut w, model, tag)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelWeights, String)> {
    let file = std::fs::File::open(path)?;
    read_model(std::io::BufReader::new(file))
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::WeightFormat(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_lossless(
            seed in any::<u64>(),
            hidden in proptest::collection::vec(1usize..6, 0..3),
            leaky in any::<bool>(),
            tag in "[a-z_0-9]{0,12}",
        ) {
            let mut widths = vec![3];
            widths.extend(hidden);
            widths.push(4);
            let act = if leaky { Activation::LeakyRelu } else { Activation::Relu };
            let model = ModelWeights::init(&widths, act, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut buf = Vec::new();
            write_model(&mut buf, &model, &tag).unwrap();
            let (back, back_tag) = read_model(buf.as_slice()).unwrap();
            prop_assert_eq!(back_tag, tag);
            prop_assert_eq!(back.checksum(), model.checksum());
            prop_assert_eq!(back, model);
        }
    }

    #[test]
    fn header_layout() {
        let model = ModelWeights::new(
            vec![LayerWeights::new(Matrix::from_rows(&[vec![1.5, -2.0]])).unwrap()],
            Activation::LeakyRelu,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &model, "ab").unwrap();
        assert_eq!(&buf[..4], b"FLWT");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..14], b"ab");
        assert_eq!(buf[14], 1);
        assert_eq!(&buf[15..19], &1u32.to_le_bytes()); // C
        assert_eq!(&buf[19..23], &1u32.to_le_bytes()); // I
        assert_eq!(&buf[23..27], &1u32.to_le_bytes()); // K
        assert_eq!(&buf[27..31], &1u32.to_le_bytes()); // rows
        assert_eq!(&buf[31..35], &2u32.to_le_bytes()); // cols
        assert_eq!(&buf[35..43], &1.5f64.to_le_bytes());
        assert_eq!(&buf[43..51], &(-2.0f64).to_le_bytes());
        assert_eq!(buf.len(), 51);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        assert!(read_model(&b"NOPE"[..]).is_err());
        let model = ModelWeights::init(&[2, 2], Activation::Relu, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &model, "").unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_model(buf.as_slice()).is_err());
    }
}
