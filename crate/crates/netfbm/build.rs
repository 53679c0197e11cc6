fn main() {
    // Link the system BLAS/LAPACK stack for the ndarray-linalg (lax) extern
    // declarations. libopenblas bundles BLAS, CBLAS and LAPACK.
    println!("cargo:rustc-link-lib=dylib=openblas");
    println!("cargo:rustc-link-lib=dylib=lapack");
    println!("cargo:rustc-link-lib=dylib=gfortran");
}
