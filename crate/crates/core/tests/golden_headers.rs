//! Column order of every CSV output is part of the interface.

mod common;

use common::{first_line, pifl, write_config, SMALL};

const GOLDEN: [(&str, &str); 8] = [
    (
        "rounds.csv",
        "round,tier,members,model_hash,acc,acc_prev_max,acc_max,delta_util,theta,pool_share,reimbursed,rewarded,eval_set_id",
    ),
    (
        "clients.csv",
        "round,client,true_tier,tier,provenance,next_bids,upsilon,psi,payment,reimbursement,reward,balance,personalized_acc,mixing,mixture_gap,refused",
    ),
    ("selections.csv", "round,tier,client,provenance"),
    ("shapley.csv", "round,tier,client,psi,variant"),
    ("ledger.csv", "round,type,client,amount,tier"),
    ("personalized_cdf.csv", "rank,client,accuracy,cdf"),
    ("baselines.csv", "baseline,client,accuracy"),
    ("tier_dominance.csv", "tier,distribution,accuracy,argmax"),
];

#[test]
fn csv_headers_match_golden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("rounds = 4", "rounds = 2\nbaselines = [\"local-only\"]"));
    let out = dir.path().join("out");
    assert_eq!(pifl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(pifl(&["report", "--run", out.to_str().unwrap()]).status.code(), Some(0));
    for (file, header) in GOLDEN {
        assert_eq!(first_line(&out.join(file)), header, "{file}");
    }
}
