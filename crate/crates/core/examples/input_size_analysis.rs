//! Operation count of the bundled models over a range of input sizes.

use gemflow::models::{conv_only, yolov7_tiny};
use gemflow::pipeline::{analyze_input_size, write_size_rows, Emit};

fn main() -> gemflow::Result<()> {
    let sizes = [320, 416, 480, 512, 640, 650];
    for (name, g) in [("conv-only", conv_only(640, 0)?), ("yolov7-tiny", yolov7_tiny(640, 0)?)] {
        println!("# {name}");
        write_size_rows(std::io::stdout(), &analyze_input_size(&g, &sizes), Emit::Csv)?;
    }
    Ok(())
}
