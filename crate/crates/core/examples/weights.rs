//! Writes Xavier weights to disk, reads them back and summarises the
//! parameter tree.

use std::collections::BTreeMap;

use deblur_mfi::model::{xavier_init, Network};
use deblur_mfi::params::ArchConfig;
use deblur_mfi::weights::{load_weights, save_weights};

fn main() -> deblur_mfi::Result<()> {
    let dir = std::env::temp_dir().join("deblur-mfi-weights-example");
    std::fs::create_dir_all(&dir).map_err(|e| deblur_mfi::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let path = dir.join("rb.dmfi");

    let store = xavier_init(&ArchConfig::boosted(), 7)?;
    save_weights(&store, &path)?;
    let loaded = load_weights(&path)?;
    println!("{} tensors, identical after reload: {}", loaded.len(), loaded == store);

    let mut per_module: BTreeMap<String, usize> = BTreeMap::new();
    for (p, t) in loaded.iter() {
        let module = p.split('/').take(2).collect::<Vec<_>>().join("/");
        *per_module.entry(module).or_default() += t.len();
    }
    for (m, n) in &per_module {
        println!("  {m:<22} {n:>9}");
    }
    println!("network parameters: {}", Network::from_store(&loaded)?.param_count());
    Ok(())
}
