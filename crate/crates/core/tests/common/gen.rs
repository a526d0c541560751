//! Generators shared by the property and acceptance suites.

use proptest::prelude::*;

use masbus::{EndpointUri, ProcessorSpec, RouteBuilder, RouteDefinition, Term};

pub fn atom_name() -> impl Strategy<Value = String> {
    prop_oneof!["[a-z][a-zA-Z0-9_]{0,8}", "[A-Z_ ][a-z' \\\\]{0,6}",]
}

pub fn number() -> impl Strategy<Value = f64> {
    prop_oneof![
        (-1_000_000i64..1_000_000).prop_map(|n| n as f64),
        (-1.0e6f64..1.0e6),
        Just(0.0),
        Just(-0.5),
    ]
}

pub fn term() -> impl Strategy<Value = Term> {
    let leaf = prop_oneof![
        atom_name().prop_map(Term::Atom),
        number().prop_map(Term::Number),
        "[ -~\n\t\"\\\\]{0,10}".prop_map(Term::Str),
    ];
    leaf.prop_recursive(4, 32, 4, |inner| {
        prop_oneof![
            (atom_name(), prop::collection::vec(inner.clone(), 1..4))
                .prop_map(|(f, a)| Term::Struct(f, a)),
            prop::collection::vec(inner, 0..4).prop_map(Term::List),
        ]
    })
}

pub fn uri() -> impl Strategy<Value = EndpointUri> {
    (
        "[a-z][a-z0-9]{0,7}",
        "[A-Za-z0-9/._:-]{0,16}",
        prop::collection::btree_map("[A-Za-z][A-Za-z0-9]{0,6}", "[A-Za-z0-9/:._-]{0,8}", 0..4),
    )
        .prop_map(|(scheme, path, params)| {
            let mut u = EndpointUri::new(scheme, path).unwrap();
            for (k, v) in params {
                u = u.with_param(k, v).unwrap();
            }
            u
        })
}

pub fn processor() -> impl Strategy<Value = ProcessorSpec> {
    prop_oneof![
        ("[A-Za-z][A-Za-z0-9]{0,10}", term())
            .prop_map(|(name, value)| ProcessorSpec::SetHeader { name, value }),
        "[a-z][a-zA-Z0-9_]{0,8}".prop_map(|name| ProcessorSpec::Transform { name }),
    ]
}

pub fn route_definition(id: String) -> impl Strategy<Value = RouteDefinition> {
    (
        uri(),
        prop::collection::vec(processor(), 0..4),
        prop::collection::vec(uri(), 1..4),
    )
        .prop_map(move |(from, processors, to)| {
            RouteDefinition::new(id.clone(), from, processors, to).unwrap()
        })
}

/// Rebuilds `def` through the fluent builder.
pub fn rebuild(def: &RouteDefinition) -> RouteDefinition {
    let mut b = RouteBuilder::new(def.route_id()).from(&def.from().to_string());
    for p in def.processors() {
        b = match p {
            ProcessorSpec::SetHeader { name, value } => b.set_header(name.clone(), value.clone()),
            ProcessorSpec::Transform { name } => b.transform(name),
        };
    }
    for t in def.to() {
        b = b.to(&t.to_string());
    }
    b.build().unwrap()
}
