//! Fixed instances shared by the benchmarks.

use kfed::datagen::{generate_mixture, structured_partition, MixtureSpec};
use kfed::{Clustering, DataMatrix, DevicePartition};

/// Planted mixture with auto-placed means at c = 100, split into structured
/// groups of `group` clusters.
pub fn planted(k: usize, d: usize, per_cluster: usize, group: usize) -> (DataMatrix, Clustering, DevicePartition) {
    let m0 = 5.0;
    let spec = MixtureSpec::uniform_auto(k, d, per_cluster, 100.0, m0, 7);
    let (a, truth) = generate_mixture(&spec).expect("valid spec");
    let part = structured_partition(&truth, group, m0).expect("valid partition");
    (a, truth, part)
}
