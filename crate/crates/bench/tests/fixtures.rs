#[test]
fn fixtures_have_requested_shape() {
    let panel = obshte_bench::panel(20, 40);
    assert_eq!(panel.units.len(), 20);
    assert!(panel.units.iter().all(|u| u.len() == 40));
    let examples = obshte_bench::examples(500);
    assert_eq!(examples.len(), 500);
    assert_eq!(examples.iter().filter(|e| e.label == 1).count(), 100);
}
