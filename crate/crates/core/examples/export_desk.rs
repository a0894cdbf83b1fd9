//! Print the reference desk model as TOML.
//!
//! cargo run --example export_desk > desk_model.toml

fn main() {
    print!("{}", foloc::desk::desk_model().to_toml_string());
}
