use proptest::prelude::*;
use tryon_core::schema::{
    load_schema, load_schema_by_name, params_document, parse_params_document, GraphicsVector, ParameterSchema,
    RendererId,
};
use tryon_core::Error;

const LIPSTICK_JSON: &str = r#"{"renderer_id":"lipstick","specs":[{"name":"opacity","low":0.0,"high":1.0,"clamp_high_for_norm":1.0},{"name":"R","low":0.0,"high":255.0,"clamp_high_for_norm":255.0},{"name":"G","low":0.0,"high":255.0,"clamp_high_for_norm":255.0},{"name":"B","low":0.0,"high":255.0,"clamp_high_for_norm":255.0},{"name":"gloss_amount","low":0.0,"high":null,"clamp_high_for_norm":10.0},{"name":"gloss_roughness","low":0.0,"high":1.0,"clamp_high_for_norm":1.0},{"name":"reflection_intensity","low":0.0,"high":1.0,"clamp_high_for_norm":1.0}]}"#;

const HAIR_JSON: &str = r#"{"renderer_id":"hair","specs":[{"name":"brightness","low":-0.3,"high":0.3,"clamp_high_for_norm":0.3},{"name":"contrast","low":0.5,"high":2.0,"clamp_high_for_norm":2.0},{"name":"exposure","low":0.5,"high":2.0,"clamp_high_for_norm":2.0},{"name":"gamma","low":0.5,"high":3.0,"clamp_high_for_norm":3.0},{"name":"hue","low":0.0,"high":1.0,"clamp_high_for_norm":1.0},{"name":"saturation","low":0.0,"high":3.0,"clamp_high_for_norm":3.0},{"name":"blend","low":-1.0,"high":1.0,"clamp_high_for_norm":1.0},{"name":"intensity","low":0.0,"high":1.0,"clamp_high_for_norm":1.0},{"name":"shine","low":0.0,"high":1.0,"clamp_high_for_norm":1.0}]}"#;

fn range(schema: &ParameterSchema, name: &str) -> (f64, f64) {
    let s = &schema.specs[schema.index_of(name).unwrap()];
    (s.low, s.high)
}

#[test]
fn builtin_schemas_match_golden_json() {
    let lip = load_schema(RendererId::Lipstick);
    let hair = load_schema(RendererId::Hair);
    assert_eq!(serde_json::to_string(&lip).unwrap(), LIPSTICK_JSON);
    assert_eq!(serde_json::to_string(&hair).unwrap(), HAIR_JSON);
    assert_eq!(ParameterSchema::from_json(LIPSTICK_JSON).unwrap(), lip);
    assert_eq!(ParameterSchema::from_json(&hair.to_json()).unwrap(), hair);
}

#[test]
fn table_ranges() {
    let lip = load_schema(RendererId::Lipstick);
    let hair = load_schema(RendererId::Hair);
    assert_eq!(lip.m(), 7);
    assert_eq!(hair.m(), 9);
    assert_eq!(range(&lip, "opacity"), (0.0, 1.0));
    assert_eq!(range(&lip, "gloss_amount"), (0.0, f64::INFINITY));
    assert_eq!(lip.specs[4].clamp_high_for_norm, 10.0);
    assert_eq!(range(&hair, "brightness"), (-0.3, 0.3));
    assert_eq!(range(&hair, "gamma"), (0.5, 3.0));
    assert_eq!(range(&hair, "saturation"), (0.0, 3.0));
    assert_eq!(range(&hair, "blend"), (-1.0, 1.0));
}

#[test]
fn unknown_renderer_is_an_error() {
    assert!(matches!(load_schema_by_name("eyeliner"), Err(Error::UnknownRenderer(_))));
    assert_eq!(load_schema_by_name("hair").unwrap().m(), 9);
}

#[test]
fn validation_lists_violations() {
    let lip = load_schema(RendererId::Lipstick);
    let ok = GraphicsVector::new(RendererId::Lipstick, vec![0.5, 10.0, 20.0, 30.0, 1.0, 0.5, 0.5]);
    assert!(lip.validate(&ok).unwrap().is_empty());
    let mut bad = ok.clone();
    bad.values[1] = 300.0;
    let v = lip.validate(&bad).unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].index, 1);
    assert_eq!(v[0].to_string(), "R out of [0,255] (got 300)");
    let hair = load_schema(RendererId::Hair);
    let mut g = vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
    g[3] = 0.4;
    let v = hair.validate_values(&g).unwrap();
    assert_eq!(v.iter().map(|x| x.name.as_str()).collect::<Vec<_>>(), ["gamma"]);
    assert!(matches!(lip.validate_values(&[0.0; 3]), Err(Error::Dimension { expected: 7, got: 3 })));
    let mut nan = ok.values.clone();
    nan[0] = f64::NAN;
    assert_eq!(lip.validate_values(&nan).unwrap().len(), 1);
}

#[test]
fn normalize_examples() {
    let lip = load_schema(RendererId::Lipstick);
    let g = GraphicsVector::new(RendererId::Lipstick, vec![0.0, 255.0, 0.0, 0.0, 10.0, 0.0, 0.0]);
    let u = lip.normalize(&g).unwrap();
    assert_eq!(u[1], 1.0);
    assert_eq!(u[4], 1.0);
    let hair = load_schema(RendererId::Hair);
    let g = GraphicsVector::new(RendererId::Hair, vec![0.0, 0.5, 0.5, 0.5, 0.0, 0.0, -1.0, 0.0, 0.0]);
    assert_eq!(hair.normalize(&g).unwrap()[0], 0.5);
    let mut bad = g.clone();
    bad.values[0] = 1.0;
    assert!(matches!(hair.normalize(&bad), Err(Error::Invalid(_))));
}

#[test]
fn denormalize_clamps_and_reports() {
    let lip = load_schema(RendererId::Lipstick);
    let (g, clamped) = lip.denormalize(&[0.0; 7]).unwrap();
    assert_eq!(g.values, lip.specs.iter().map(|s| s.low).collect::<Vec<_>>());
    assert!(clamped.is_empty());
    let (g, clamped) = lip.denormalize(&[1.2, 0.5, 0.5, 0.5, 0.5, -0.1, 0.5]).unwrap();
    assert_eq!(g.values[0], 1.0);
    assert_eq!(g.values[5], 0.0);
    assert_eq!(clamped, [0, 5]);
    assert!(lip.ensure_valid(&g).is_ok());
}

#[test]
fn params_documents_round_trip_in_schema_order() {
    let lip = load_schema(RendererId::Lipstick);
    let g = GraphicsVector::new(RendererId::Lipstick, vec![0.8, 200.0, 30.0, 60.0, 2.5, 0.4, 0.1]);
    let text = serde_json::to_string(&params_document(&lip, &g)).unwrap();
    assert!(text.starts_with(r#"{"renderer_id":"lipstick","params":{"opacity":0.8,"R":200.0"#));
    assert_eq!(parse_params_document(&lip, &text).unwrap(), g);
    let bare = serde_json::to_string(&lip.params_map(&g.values)).unwrap();
    assert_eq!(parse_params_document(&lip, &bare).unwrap(), g);
    let hair = load_schema(RendererId::Hair);
    assert!(parse_params_document(&hair, &text).is_err());
    assert!(parse_params_document(&lip, r#"{"opacity":1}"#).is_err());
    let extra = text.replacen("\"opacity\"", "\"sparkle\":1,\"opacity\"", 1);
    assert!(parse_params_document(&lip, &extra).is_err());
}

#[test]
fn schema_json_rejects_foreign_layouts() {
    let swapped = LIPSTICK_JSON.replacen("\"opacity\"", "\"alpha\"", 1);
    assert!(ParameterSchema::from_json(&swapped).is_err());
    let inverted = HAIR_JSON.replacen(r#""low":-0.3"#, r#""low":0.9"#, 1);
    assert!(ParameterSchema::from_json(&inverted).is_err());
    assert!(ParameterSchema::from_json("{}").is_err());
}

fn valid_vector(id: RendererId) -> impl Strategy<Value = GraphicsVector> {
    let schema = load_schema(id);
    let ranges: Vec<_> = schema.specs.iter().map(|s| s.low..=s.hi()).collect();
    ranges.prop_map(move |values| GraphicsVector::new(id, values))
}

proptest! {
    #[test]
    fn round_trip_lipstick(g in valid_vector(RendererId::Lipstick)) {
        let s = load_schema(RendererId::Lipstick);
        let (back, clamped) = s.denormalize(&s.normalize(&g).unwrap()).unwrap();
        prop_assert!(clamped.is_empty());
        for (a, b) in back.values.iter().zip(&g.values) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn round_trip_hair(g in valid_vector(RendererId::Hair)) {
        let s = load_schema(RendererId::Hair);
        let (back, _) = s.denormalize(&s.normalize(&g).unwrap()).unwrap();
        for (a, b) in back.values.iter().zip(&g.values) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn normalize_strictly_increasing(g in valid_vector(RendererId::Hair), j in 0usize..9, t in 0.0f64..1.0) {
        let s = load_schema(RendererId::Hair);
        let spec = &s.specs[j];
        let v = g.values[j];
        prop_assume!(v < spec.hi());
        let mut h = g.clone();
        h.values[j] = v + t.max(1e-3) * (spec.hi() - v);
        prop_assert!(s.normalize(&h).unwrap()[j] > s.normalize(&g).unwrap()[j]);
    }
}
