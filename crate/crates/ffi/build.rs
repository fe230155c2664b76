fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("manifest dir set");
    let header = std::path::Path::new(&crate_dir).join("include/dualhead.h");
    std::fs::create_dir_all(header.parent().unwrap()).expect("include dir");
    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_language(cbindgen::Language::C)
        .with_cpp_compat(true)
        .with_include_guard("DUALHEAD_H")
        .with_documentation(true)
        .generate()
        .expect("header generation")
        .write_to_file(header);
    println!("cargo:rerun-if-changed=src/lib.rs");
}
