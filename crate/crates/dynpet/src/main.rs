fn main() {
    // Placeholder; wired to the pipeline module later in the build.
    eprintln!("dynpet: pipeline not yet wired");
    std::process::exit(2);
}
