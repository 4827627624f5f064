//! Prints the default run configuration for a variant in config-file form.
//!
//! `cargo run --example default_config -- unet > unet.cfg`

use radionet::io::RunConfig;
use radionet::model::Variant;

fn main() -> radionet::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "radionet".into());
    let cfg = RunConfig::default().with_variant(name.parse::<Variant>()?);
    print!("{}", cfg.to_text());
    Ok(())
}
