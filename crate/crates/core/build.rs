fn main() {
    // Embed the libtorch directory so tests and binaries run without LD_LIBRARY_PATH,
    // and pass it on to dependents as DEP_AUGINT_LIBTORCH_LIB.
    if let Ok(dir) = std::env::var("DEP_TCH_LIBTORCH_LIB") {
        println!("cargo:rustc-link-arg=-Wl,-rpath,{dir}");
        println!("cargo:libtorch_lib={dir}");
    }
}
