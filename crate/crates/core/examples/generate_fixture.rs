//! Writes the bundled fixture dataset to stdout.
//!
//! ```sh
//! cargo run -p fxoverlay --example generate_fixture > crates/core/data/fixture_returns.csv
//! ```

fn main() {
    print!("{}", fxoverlay::fixture::generate_fixture_csv(fxoverlay::fixture::FIXTURE_SEED));
}
