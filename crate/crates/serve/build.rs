fn main() {
    // Embed the libtorch directory so tests and binaries run without LD_LIBRARY_PATH.
    if let Ok(dir) = std::env::var("DEP_AUGINT_LIBTORCH_LIB") {
        println!("cargo:rustc-link-arg=-Wl,-rpath,{dir}");
    }
}
