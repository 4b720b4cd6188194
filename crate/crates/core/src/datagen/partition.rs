use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::paramspace::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionMode {
    /// Random permutation dealt out in near-equal contiguous chunks.
    Iid,
    /// Every client receives `classes_per_client` single-class shards.
    LabelShard { classes_per_client: usize },
}

/// Disjoint assignment of example indices to clients covering the whole dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignment: Vec<Vec<usize>>,
    pub mode: PartitionMode,
}

impl Partition {
    pub fn n_clients(&self) -> usize {
        self.assignment.len()
    }
}

pub fn partition(ds: &Dataset, n_clients: usize, mode: PartitionMode, stream: &SeededStream) -> Result<Partition> {
    if n_clients == 0 {
        return Err(Error::config("problem.n_clients", None, "need at least one client"));
    }
    let n = ds.len();
    let assignment = match mode {
        PartitionMode::Iid => {
            if n_clients > n {
                return Err(Error::config(
                    "problem.n_clients",
                    None,
                    format!("iid partition needs n_clients ≤ N ({n_clients} > {n})"),
                ));
            }
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut stream.derive("iid", 0).rng());
            let base = n / n_clients;
            let extra = n % n_clients;
            let mut out = Vec::with_capacity(n_clients);
            let mut start = 0;
            for k in 0..n_clients {
                let len = base + usize::from(k < extra);
                let mut chunk = perm[start..start + len].to_vec();
                chunk.sort_unstable();
                out.push(chunk);
                start += len;
            }
            out
        }
        PartitionMode::LabelShard { classes_per_client } => label_shards(ds, n_clients, classes_per_client, stream)?,
    };
    Ok(Partition { assignment, mode })
}

/// Classes are cut into `n_clients · classes_per_client` shards in total, each
/// class into a number of shards proportional to its size (at least one), and
/// the shuffled shards are dealt `classes_per_client` per client. When the
/// shard count equals the class count every class is one whole shard.
fn label_shards(ds: &Dataset, n_clients: usize, per_client: usize, stream: &SeededStream) -> Result<Vec<Vec<usize>>> {
    let c = ds.n_classes();
    if per_client == 0 {
        return Err(Error::config("problem.classes_per_client", None, "must be at least 1"));
    }
    let total = n_clients * per_client;
    if total < c {
        return Err(Error::config(
            "problem.classes_per_client",
            None,
            format!(
                "label_shard needs n_clients·classes_per_client ≥ n_classes so every example is assigned ({n_clients}·{per_client} < {c})"
            ),
        ));
    }
    if total > ds.len() {
        return Err(Error::config(
            "problem.classes_per_client",
            None,
            format!(
                "label_shard needs n_clients·classes_per_client ≤ N so no shard is empty ({total} > {})",
                ds.len()
            ),
        ));
    }

    let counts = ds.class_counts();
    let shards_per_class = allocate_shards(&counts, total);
    if let Some(k) = (0..c).find(|&k| shards_per_class[k] > counts[k]) {
        return Err(Error::config(
            "problem.classes_per_client",
            None,
            format!("class {k} has {} examples but would need {} shards", counts[k], shards_per_class[k]),
        ));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &y) in ds.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut shards: Vec<Vec<usize>> = Vec::with_capacity(total);
    for (k, idx) in by_class.iter().enumerate() {
        let s = shards_per_class[k];
        let base = idx.len() / s;
        let extra = idx.len() % s;
        let mut start = 0;
        for j in 0..s {
            let len = base + usize::from(j < extra);
            shards.push(idx[start..start + len].to_vec());
            start += len;
        }
    }
    shards.shuffle(&mut stream.derive("shards", 0).rng());

    Ok(shards
        .chunks(per_client)
        .map(|group| {
            let mut v: Vec<usize> = group.iter().flatten().copied().collect();
            v.sort_unstable();
            v
        })
        .collect())
}

/// Largest-remainder apportionment of `total` shards with at least one per class.
fn allocate_shards(counts: &[usize], total: usize) -> Vec<usize> {
    let c = counts.len();
    let mut alloc = vec![1usize; c];
    let spare = total - c;
    if spare == 0 {
        return alloc;
    }
    let n: usize = counts.iter().sum();
    let quotas: Vec<f64> = counts.iter().map(|&k| spare as f64 * k as f64 / n as f64).collect();
    let mut given = 0;
    for (a, q) in alloc.iter_mut().zip(&quotas) {
        let f = q.floor() as usize;
        *a += f;
        given += f;
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(spare - given) {
        alloc[k] += 1;
    }
    alloc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_blobs;
    use proptest::prelude::*;

    fn is_cover(p: &Partition, n: usize) -> bool {
        let mut all: Vec<usize> = p.assignment.iter().flatten().copied().collect();
        all.sort_unstable();
        all == (0..n).collect::<Vec<_>>()
    }

    #[test]
    fn one_class_per_client() {
        let ds = gen_blobs(10, 12, 2, 3.0, &SeededStream::new(0)).unwrap();
        let p = partition(&ds, 10, PartitionMode::LabelShard { classes_per_client: 1 }, &SeededStream::new(1)).unwrap();
        let mut owners = [None; 10];
        for (k, idx) in p.assignment.iter().enumerate() {
            let label = ds.labels()[idx[0]];
            assert!(idx.iter().all(|&i| ds.labels()[i] == label));
            assert_eq!(idx.len(), 12);
            assert!(owners[label].replace(k).is_none(), "class {label} spans two clients");
        }
        assert!(is_cover(&p, ds.len()));
    }

    #[test]
    fn iid_sizes_are_equal() {
        let ds = gen_blobs(4, 25, 2, 3.0, &SeededStream::new(0)).unwrap();
        let p = partition(&ds, 10, PartitionMode::Iid, &SeededStream::new(1)).unwrap();
        assert!(p.assignment.iter().all(|a| a.len() == 10));
        assert!(is_cover(&p, 100));
    }

    #[test]
    fn infeasible_shards_name_the_constraint() {
        let ds = gen_blobs(10, 3, 2, 3.0, &SeededStream::new(0)).unwrap();
        let err = partition(&ds, 3, PartitionMode::LabelShard { classes_per_client: 2 }, &SeededStream::new(1)).unwrap_err();
        assert!(err.to_string().contains("n_clients·classes_per_client ≥ n_classes"), "{err}");
        let err = partition(&ds, 31, PartitionMode::Iid, &SeededStream::new(1)).unwrap_err();
        assert!(err.to_string().contains("n_clients ≤ N"));
    }

    proptest! {
        #[test]
        fn partitions_are_disjoint_covers(
            classes in 2usize..6,
            per_class in 2usize..12,
            clients in 1usize..8,
            per_client in 1usize..3,
            seed in any::<u64>(),
            iid in any::<bool>(),
        ) {
            let ds = gen_blobs(classes, per_class, 2, 1.0, &SeededStream::new(seed)).unwrap();
            let mode = if iid { PartitionMode::Iid } else { PartitionMode::LabelShard { classes_per_client: per_client } };
            match partition(&ds, clients, mode, &SeededStream::new(seed ^ 1)) {
                Ok(p) => {
                    prop_assert!(is_cover(&p, ds.len()));
                    prop_assert_eq!(p.n_clients(), clients);
                    if iid {
                        let min = p.assignment.iter().map(Vec::len).min().unwrap();
                        let max = p.assignment.iter().map(Vec::len).max().unwrap();
                        prop_assert!(max - min <= 1);
                    }
                }
                Err(e) => prop_assert!(matches!(e, Error::Config { .. }), "unexpected error {}", e),
            }
        }
    }
}
