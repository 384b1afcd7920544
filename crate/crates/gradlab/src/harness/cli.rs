/// Entry point for the `gradlab` binary; returns the process exit code.
pub fn cli<I: IntoIterator<Item = String>>(_argv: I) -> i32 {
    0
}
