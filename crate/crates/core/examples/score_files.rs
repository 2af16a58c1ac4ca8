//! Read and write the score-file format, then group records into accesses.

use qfusion::datamodel::{validate_access, Role};
use qfusion::ingestion::{read_dataset, write_dataset};

const TEXT: &str = "\
access_id,session,label,channel,device,score,q_template,q_query
a1,2,genuine,face,fnf1,12.5,0.7;0.6;0.8;0.7;0.6;0.7;0.7;0.6;0.7;0.8;0.7;0.6;0.7;0.7,0.7;0.6;0.8;0.7;0.6;0.7;0.7;0.6;0.7;0.8;0.7;0.6;0.7;0.7
a1,2,genuine,fp1,fo,2.9,0.71,0.65
a1,2,genuine,fp2,fo,,,
a1,2,genuine,fp3,fo,3.4,0.8,0.74
";

fn main() -> qfusion::error::Result<()> {
    let ds = read_dataset(TEXT, Role::Evaluation)?;
    for a in &ds.accesses {
        println!(
            "{} label {} mixture {:?} present {}",
            a.id,
            a.label().code(),
            a.implied_mixture(),
            a.present_scores()
        );
        for d in validate_access(a) {
            println!("  {d:?}");
        }
    }
    print!("{}", write_dataset(&ds));
    Ok(())
}
