use crate::error::Result;
use crate::model::Dendrogram;

fn newick_label(label: &str) -> String {
    const SPECIAL: &[char] = &['(', ')', '[', ']', '\'', ':', ';', ','];
    if label.chars().any(|c| c.is_whitespace() || SPECIAL.contains(&c)) {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_string()
    }
}

/// Newick string; each branch length is the parent's height minus the child's.
pub fn to_newick(dend: &Dendrogram) -> String {
    let s = dend.n_leaves();
    if s == 1 {
        return format!("{};", newick_label(&dend.leaves[0]));
    }
    // iterative post-order so deep trees cannot overflow the stack
    let mut rendered: Vec<Option<String>> = vec![None; 2 * s - 1];
    for (leaf, label) in dend.leaves.iter().enumerate() {
        rendered[leaf] = Some(newick_label(label));
    }
    for (k, m) in dend.merges.iter().enumerate() {
        let node = s + k;
        let branch = |child: usize| m.height - dend.node_height(child);
        let left = rendered[m.left].take().expect("child rendered before parent");
        let right = rendered[m.right].take().expect("child rendered before parent");
        rendered[node] = Some(format!(
            "({left}:{},{right}:{})",
            branch(m.left),
            branch(m.right)
        ));
    }
    let mut out = rendered[dend.root()].take().expect("root rendered");
    out.push(';');
    out
}

/// `{"leaves": [...], "merges": [{"left", "right", "height", "size"}, ...]}`
pub fn to_json(dend: &Dendrogram) -> Result<String> {
    Ok(serde_json::to_string_pretty(dend)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Merge;

    fn three() -> Dendrogram {
        Dendrogram {
            leaves: vec!["A_1".into(), "B 2".into(), "C".into()],
            merges: vec![
                Merge { left: 0, right: 1, height: 0.125, size: 2 },
                Merge { left: 3, right: 2, height: 0.5, size: 3 },
            ],
        }
    }

    #[test]
    fn newick_branch_lengths() {
        assert_eq!(to_newick(&three()), "((A_1:0.125,'B 2':0.125):0.375,C:0.5);");
    }

    #[test]
    fn json_round_trips() {
        let text = to_json(&three()).unwrap();
        let back: Dendrogram = serde_json::from_str(&text).unwrap();
        assert_eq!(back, three());
        assert!(text.contains("\"merges\""));
    }
}
