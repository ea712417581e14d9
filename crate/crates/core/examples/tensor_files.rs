//! Writes and reads the little-endian TSMT tensor format at both precisions.

use tsmt::data::tensor_file::{encode_tensor, read_all, Precision, MAGIC};
use tsmt::tensor::Tensor;

fn main() -> tsmt::Result<()> {
    let field = Tensor::from_fn(&[2, 3, 4], |i| i as f64 * 0.1);
    for precision in [Precision::F32, Precision::F64] {
        let bytes = encode_tensor(&field, precision);
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let back = read_all(&bytes)?;
        let max_err = back[0].data().iter().zip(field.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!(
            "{precision:?}: {} bytes, magic {:?}, version {version}, max round-trip error {max_err:e}",
            bytes.len(),
            std::str::from_utf8(&bytes[..4]).unwrap()
        );
        assert_eq!(&bytes[..4], MAGIC);
    }

    // several tensors concatenated, as in a sample file
    let mut bytes = encode_tensor(&Tensor::zeros(&[1, 5, 54, 54]), Precision::F32);
    bytes.extend(encode_tensor(&Tensor::full(&[48, 48], 35.0), Precision::F32));
    let parts = read_all(&bytes)?;
    println!("sample-like file holds {} tensors: {:?}", parts.len(), parts.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>());
    Ok(())
}
