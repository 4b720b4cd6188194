//! Gaussian blobs split into train and test, then dealt to clients either
//! uniformly at random or as single-label shards.

use gradalign::datagen::{gen_blobs, partition, train_test_split, PartitionMode};
use gradalign::paramspace::SeededStream;

fn main() -> gradalign::Result<()> {
    let root = SeededStream::new(42);
    let data = gen_blobs(5, 40, 3, 4.0, &root.derive("data", 0))?;
    let (train, test) = train_test_split(&data, 0.2, &root.derive("split", 0))?;
    println!("{} examples: {} train, {} test", data.len(), train.len(), test.len());

    for mode in [PartitionMode::Iid, PartitionMode::LabelShard { classes_per_client: 1 }, PartitionMode::LabelShard { classes_per_client: 2 }] {
        let p = partition(&train, 5, mode, &root.derive("partition", 0))?;
        println!("{mode:?}");
        for (k, idx) in p.assignment.iter().enumerate() {
            let mut hist = vec![0; train.n_classes()];
            for &i in idx {
                hist[train.labels()[i]] += 1;
            }
            println!("  client {k}: {:>3} examples, per class {hist:?}", idx.len());
        }
    }
    Ok(())
}
