//! Scoring a handful of detections under both protocols.

use txspot::evalproto::{match_detections, Correction, Detection, EvalConfig, Protocol};
use txspot::geometry::BBox;
use txspot::synthdata::Annotation;
use txspot::tensor::Float;

fn main() -> txspot::Result<()> {
    let gt = |x: Float, t: &str| Annotation { bbox: BBox::new(x, 10.0, x + 50.0, 30.0), text: t.into() };
    let det = |x: Float, t: &str, score: Float| Detection { bbox: BBox::new(x, 11.0, x + 49.0, 30.0), text: t.into(), score };
    let gts = vec![gt(0.0, "hotel"), gt(100.0, "Park"), gt(200.0, "of"), gt(300.0, "bank"), gt(500.0, "a-1")];
    let dets = vec![det(0.0, "hotel", 0.9), det(100.0, "park", 0.8), det(200.0, "of", 0.7), det(400.0, "door", 0.6), det(300.0, "banc", 0.5)];

    let e2e = match_detections(&dets, &gts, &EvalConfig::default())?;
    println!("end-to-end      P {:.3} R {:.3} F {:.3} (ignored {})", e2e.precision, e2e.recall, e2e.f, e2e.ignored);

    let lexicon: Vec<String> = ["hotel", "park", "door", "bank"].map(String::from).to_vec();
    let cfg = EvalConfig { protocol: Protocol::WordSpotting, lexicon: Some(lexicon), ..EvalConfig::default() };
    let ws = match_detections(&dets, &gts, &cfg)?;
    println!("word spotting   P {:.3} R {:.3} F {:.3}", ws.precision, ws.recall, ws.f);

    let cfg = EvalConfig { correction: Correction::Nearest(1), ..cfg };
    let fixed = match_detections(&dets, &gts, &cfg)?;
    println!("with correction P {:.3} R {:.3} F {:.3}", fixed.precision, fixed.recall, fixed.f);
    Ok(())
}
