use std::fmt::Write;

use quick_xml::escape::escape;

use super::{Branch, ParamSpec, TaskModel};

/// Serializes a model back to the task-model XML dialect, UTF-8 encoded,
/// two-space indented, states and events in their original order.
pub fn to_xml(model: &TaskModel) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\" ?>\n");
    if model.model_id.is_empty() {
        out.push_str("<task_model>\n");
    } else {
        let _ = writeln!(out, "<task_model id=\"{}\">", escape(&model.model_id));
    }
    let _ = writeln!(
        out,
        "  <starting_state id=\"{}\" />",
        escape(&model.starting_state)
    );
    for state in model.states.values() {
        if state.events.is_empty() {
            let _ = writeln!(out, "  <state id=\"{}\" />", escape(&state.id));
            continue;
        }
        let _ = writeln!(out, "  <state id=\"{}\">", escape(&state.id));
        out.push_str("    <events>\n");
        for ev in state.events.values() {
            let _ = writeln!(out, "      <event id=\"{}\">", escape(&ev.id));
            params(&mut out, "in_param", &ev.in_params, 8);
            let _ = writeln!(
                out,
                "        <interaction_call id=\"{}\">",
                escape(&ev.call.id)
            );
            let _ = writeln!(
                out,
                "          <method id=\"{}\" />",
                escape(&ev.call.bip_method)
            );
            out.push_str("          <next_states>\n");
            branch(&mut out, "positive", &ev.call.positive);
            branch(&mut out, "negative", &ev.call.negative);
            out.push_str("          </next_states>\n");
            out.push_str("        </interaction_call>\n");
            out.push_str("      </event>\n");
        }
        out.push_str("    </events>\n");
        out.push_str("  </state>\n");
    }
    out.push_str("</task_model>\n");
    out
}

fn params(out: &mut String, tag: &str, list: &[ParamSpec], indent: usize) {
    for p in list {
        let _ = writeln!(
            out,
            "{:indent$}<{tag} id=\"{}\" type=\"{}\" />",
            "",
            escape(&p.id),
            escape(&p.semantic_type)
        );
    }
}

fn branch(out: &mut String, tag: &str, b: &Branch) {
    let _ = writeln!(out, "            <{tag}>");
    params(out, "out_param", &b.out_params, 14);
    let _ = writeln!(
        out,
        "              <next_state id=\"{}\" />",
        escape(&b.next_state)
    );
    let _ = writeln!(out, "            </{tag}>");
}

#[cfg(test)]
mod tests {
    use super::super::parse_task_model;
    use super::*;

    #[test]
    fn escapes_attribute_values() {
        let xml = r#"<task_model id="a&amp;b"><starting_state id="&lt;s&gt;"/><state id="&lt;s&gt;"/></task_model>"#;
        let m = parse_task_model(xml).unwrap();
        let again = parse_task_model(&to_xml(&m)).unwrap();
        assert_eq!(again, m);
        assert_eq!(again.model_id, "a&b");
    }
}
