//! Generates a long-tailed synthetic corpus and shows its class counts,
//! frequency buckets and a sample document.

use secaps::data::{class_allocation, gen_synthetic, SyntheticSpec, Vocabulary};
use secaps::train::{bucket_of, Bucket};

fn main() -> secaps::Result<()> {
    let spec = SyntheticSpec::default();
    let counts = class_allocation(spec.num_classes, spec.train_size, spec.zipf_exponent)?;
    println!("train counts {counts:?}");
    for b in [Bucket::Low, Bucket::Medium, Bucket::High] {
        let n = counts.iter().filter(|&&c| bucket_of(c) == b).count();
        println!("{b:?}: {n} classes");
    }

    let data = gen_synthetic(&spec)?;
    println!(
        "splits train {} valid {} test {}, {} labels",
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        data.labels().len()
    );
    let vocab = Vocabulary::build(&data.train, 1);
    println!("vocabulary {} entries", vocab.len());
    let ex = &data.train[0];
    println!("{}: {}", ex.charge, ex.fact.join(" "));

    let again = gen_synthetic(&spec)?;
    println!("same seed reproduces the corpus: {}", again == data);
    Ok(())
}
