use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let header = crate_dir.join("include").join("bongard.h");
    std::fs::create_dir_all(header.parent().unwrap()).unwrap();
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(&header);
        }
        // Header generation failures should surface, but an existing header
        // keeps fresh checkouts building while cbindgen is unavailable.
        Err(err) => {
            if header.is_file() {
                println!("cargo:warning=cbindgen failed, keeping existing header: {err}");
            } else {
                panic!("cbindgen failed and no committed header exists: {err}");
            }
        }
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
