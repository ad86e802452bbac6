//! Extracts the think block from a model response and splits it into steps.
//!
//! ```text
//! cargo run -p sarl-core --example segment_trace
//! ```

use sarl_core::trace::{extract_think, segment_steps};
use sarl_core::{ReasoningTrace, ThinkMode};

const RESPONSE: &str = "<think>
Let x be the number of apples.

  Then 3x + 2 = 11.
So 3x = 9, hence x = 3.
Check: 3*3 + 2 = 11. Correct.
</think>
The answer is 3.";

fn main() {
    let think = extract_think(RESPONSE, ThinkMode::WholeText);
    println!("think block: {} bytes of {}", think.len(), RESPONSE.len());

    let trace = ReasoningTrace::parse("apples", RESPONSE, ThinkMode::WholeText);
    for (i, step) in trace.steps.iter().enumerate() {
        println!("step {i}: {step}");
    }

    // Without a think tag the whole text is used, unless empty mode is chosen.
    let untagged = "First idea\nSecond idea";
    println!(
        "untagged, whole text: {:?}",
        segment_steps(extract_think(untagged, ThinkMode::WholeText))
    );
    println!(
        "untagged, empty mode: {:?}",
        segment_steps(extract_think(untagged, ThinkMode::Empty))
    );

    // An unterminated block runs to the end of the text.
    println!(
        "unterminated: {:?}",
        ReasoningTrace::parse("u", "<think>a\nb", ThinkMode::WholeText).steps
    );
}
