use std::sync::Arc;

use dpforge::clients::{ClientRole, FieldMode, ModelResponse, ScriptedClient};
use dpforge::corpus::Dataset;
use dpforge::operators::{apply_team, OperatorConfig, OperatorContext};
use dpforge::strategy::Strategy;

const INPUT: &str = r#"{"id":"a","question":"What is the best way to store fresh basil leaves at home?","answer":"Wrap the leaves in a damp towel and keep them in the fridge."}
{"id":"b","question":"<i>How</i> do bees find their way back to the hive?","answer":"They use the position of the sun and nearby <b>landmarks</b>."}
{"id":"c","question":"What is the best way to store fresh basil leaves at home?","answer":"Wrap the leaves in a damp towel and keep them in the fridge."}
{"id":"d","question":"Why?","answer":"Because."}
{"id":"e","question":"Which planets in our solar system have rings made of ice and rock?","answer":""}
"#;

// a survives untouched. b loses its tags, each replaced by a space. c duplicates a. d is too short.
// e survives cleaning but is screened noisy for its missing answer, so only
// its question goes through the optimizer.
const EXPECTED: &str = r#"{"answer":"Wrap the leaves in a damp towel and keep them in the fridge.","id":"a","meta":{},"question":"What is the best way to store fresh basil leaves at home?"}
{"answer":"They use the position of the sun and nearby landmarks .","id":"b","meta":{},"question":"How do bees find their way back to the hive?"}
{"answer":"","id":"e","meta":{"optimized":"both"},"question":"WHICH PLANETS IN OUR SOLAR SYSTEM HAVE RINGS MADE OF ICE AND ROCK?"}
"#;

#[test]
fn cleaning_then_optimization_on_a_hand_traced_corpus() {
    let optimizer = ScriptedClient::new(ClientRole::Optimizer, "upper", |req| {
        assert_eq!(req.mode, FieldMode::Question);
        Ok(ModelResponse::text(req.question.to_uppercase()))
    });
    let calls = optimizer.counter();
    let ctx = OperatorContext::builtin(OperatorConfig::default(), 0).with_optimizer(Arc::new(optimizer));
    let f: Strategy = "Cleaning -> Optimization".parse().unwrap();
    let input = Dataset::parse(INPUT).unwrap();
    let out = f.teams().iter().fold(input, |d, t| apply_team(*t, &d, &ctx));
    assert_eq!(String::from_utf8(out.canonical_bytes()).unwrap(), EXPECTED);
    assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 1);
}
