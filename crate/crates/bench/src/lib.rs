//! Fixtures shared by the criterion benchmarks in `benches/`.

use countcon::data::motorcycle;
use countcon::{DataSet, Network, NetworkSpec, Rng};

/// The canonical 1→50→10→1 network at seed 0 and the standardized
/// motorcycle data.
pub fn canonical() -> (Network, DataSet) {
    let data = motorcycle().zscore_fit_transform().expect("motorcycle data has variance");
    let net = Network::init(NetworkSpec::canonical(1), &mut Rng::new(0));
    (net, data)
}
