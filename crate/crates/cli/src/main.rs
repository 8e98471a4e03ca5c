fn main() {
    println!("pgcn");
}
