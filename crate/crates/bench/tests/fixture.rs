use countcon::Model;
use countcon_bench::canonical;

#[test]
fn canonical_fixture_shape() {
    let (net, data) = canonical();
    assert_eq!(net.params().len(), 621);
    assert_eq!(data.n(), 133);
    assert_eq!(net.forward(data.inputs()).unwrap().len(), 133);
}
