//! Build each template, assign agents and print sizes and conditioning sets.

use toxprop::topology::{
    assign_agents, build_template, conditioning_set_by_id, ConditioningRegime, Injection,
    TopologyTemplate,
};

fn main() -> toxprop::Result<()> {
    let templates = [
        ("chain L=4", TopologyTemplate::chain(4)),
        ("tree D=3 b=3", TopologyTemplate::tree(3, 3)),
        ("dag D=3 b=2 +4", TopologyTemplate::dag(3, 2, 4, 7)),
        ("high branch", TopologyTemplate::high_branch()),
    ];
    for (name, t) in templates {
        let g = assign_agents(&build_template(&t)?, &Injection::Single, 4)?;
        println!("{name}: {} nodes, {} edges", g.len(), g.edges().len());
        let last = &g.node(*g.order().last().unwrap()).id;
        for regime in [
            ConditioningRegime::ParentOnly,
            ConditioningRegime::ThreadLocal,
            ConditioningRegime::FullVisible,
        ] {
            let c = conditioning_set_by_id(&g, last, regime)?;
            let shown: Vec<&str> = c.iter().take(8).map(String::as_str).collect();
            let more = if c.len() > 8 { " ..." } else { "" };
            println!("  C({last}) {regime:?}: [{}{more}]", shown.join(", "));
        }
    }

    let g = build_template(&TopologyTemplate::chain(6))?;
    let multi = assign_agents(&g, &Injection::Multi, 3)?;
    let authors: Vec<String> = multi
        .order()
        .iter()
        .map(|&v| multi.node(v).agent_id.clone())
        .collect();
    println!("multi injection on a 6-chain: {}", authors.join(" "));
    Ok(())
}
