fn main() {
    unimplemented!();
}
