use spontts::adaptation::load_checkpoint;
use spontts::corpus::Corpus;
use spontts::eval::{moe_duration_mse, router_accuracy, single_duration_mse};
use std::path::Path;

#[test]
#[ignore]
fn probe_rhythm() {
    let corpus = Corpus::load(Path::new("/tmp/smoke/mined16/spon_rhythm.jsonl")).unwrap();
    let adapted = load_checkpoint::<f32>(Path::new("/tmp/smoke/rhy16/checkpoint"), None).unwrap();
    let frozen = load_checkpoint::<f32>(Path::new("/tmp/smoke/src16/checkpoint"), None).unwrap();
    let acc = router_accuracy(&adapted.model, &corpus).unwrap();
    let moe = moe_duration_mse(&adapted.model, &corpus).unwrap();
    let single = single_duration_mse(&frozen.model, &corpus).unwrap();
    println!("router accuracy = {acc:.4}");
    println!("adapted MoE MSE = {moe:.4}, frozen source single MSE = {single:.4}");
}
