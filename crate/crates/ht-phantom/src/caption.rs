//! Deterministic descriptor captions built from the lesion geometry, using
//! the same sonographic vocabulary as the zero-shot prompt banks (shape,
//! margin, echogenicity, orientation).

use crate::{Label, PhantomSpec};

/// Caption for a spec. Identical specs produce identical captions; every
/// caption is at least 20 characters (shorter captions would be discarded
/// by the corpus cleaning rules).
pub fn caption_for(spec: &PhantomSpec) -> String {
    let l = &spec.lesion;
    let (a, b) = l.semi_axes;
    let irregular = l.irregularity > spec.malignancy_irregularity_factor * a.min(b);
    let shape = if irregular {
        "an irregular shape"
    } else if spec.axis_ratio() >= spec.malignancy_axis_ratio {
        "an oval shape"
    } else {
        "a round shape"
    };
    let margin = if irregular {
        "spiculated, ill-defined margins"
    } else {
        "circumscribed margins"
    };
    let echo = if l.intensity_offset < 0.0 {
        "hypoechoic"
    } else {
        "hyperechoic"
    };
    let orientation = if a >= b {
        "wider-than-tall"
    } else {
        "taller-than-wide"
    };
    let label = match spec.label() {
        Label::Benign => "benign",
        Label::Malignant => "malignant",
    };
    let shadow = if spec.shadow.enabled {
        " and posterior acoustic shadowing"
    } else {
        ""
    };
    format!(
        "A {label} {echo} nodule with {shape}, {margin}, a {orientation} orientation{shadow}"
    )
}
