//! Writes named tensors to the binary container, reads them back and shows
//! that the round trip is bit-exact and that corruption is detected.

use moedep::io::TensorContainer;
use moedep::tensor::RngStream;
use moedep::Tensor;

fn main() -> moedep::Result<()> {
    let mut rng = RngStream::new(9, 0);
    let mut c = TensorContainer::new();
    c.insert("weights", Tensor::from_fn(&[4, 3], |_| rng.normal()))?;
    c.insert("bias", Tensor::vector(vec![0.5, -0.25, f64::MIN_POSITIVE]))?;
    c.insert("image", Tensor::from_fn(&[3, 8, 8], |_| rng.uniform()))?;

    let path = std::env::temp_dir().join("moedep-example.moet");
    c.write(&path)?;
    let bytes = c.to_bytes();
    println!(
        "wrote {} entries, {} bytes to {}",
        c.len(),
        bytes.len(),
        path.display()
    );

    let back = TensorContainer::read(&path)?;
    for (name, t) in back.iter() {
        let same = c
            .require(name)?
            .data()
            .iter()
            .zip(t.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        println!("  {name:<8} {:?} bit-identical: {same}", t.shape());
    }

    let mut damaged = bytes.clone();
    damaged.truncate(bytes.len() - 5);
    match TensorContainer::from_bytes(&damaged) {
        Ok(_) => println!("truncated container unexpectedly parsed"),
        Err(e) => println!("truncated container rejected: {e}"),
    }
    Ok(())
}
