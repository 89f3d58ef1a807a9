use std::path::Path;

use pasfm::config::RunConfig;

fn shipped(name: &str) -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

#[test]
fn desk_file_spells_out_the_defaults() {
    assert_eq!(shipped("desk.toml"), RunConfig::default());
}

#[test]
fn split_file_halves_a_hemisphere() {
    let c = shipped("split.toml");
    assert_eq!(c.array.split, Some(2));
    assert_eq!(c.array.n_elements, 66);
    assert_eq!(c.views.len(), 1);
    assert_eq!(c.recon, RunConfig::default().recon);
}
