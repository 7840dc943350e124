//! Exact expectations by enumerating every path and weight choice at tiny sizes.

use rwre_lab::env::{make_spec, EnvKind};
use rwre_lab::oracle::{exact_expectation, field_moment_by_environments, field_moment_by_paths, total_mass, EnumerationTask};
use rwre_lab::qkernel::TestFunction;

fn main() -> Result<(), rwre_lab::Error> {
    let spec = make_spec(EnvKind::TwoPoint { a: 0.25 })?;
    let task = EnumerationTask::new(&spec, 2, 4);
    println!("total probability over all 2-walker paths of length 4: {:.15}", total_mass(&task)?);
    let meet = exact_expectation(&task, |path| path.iter().filter(|p| p[0] == p[1]).count() as f64)?;
    println!("expected number of coincidence times (incl. t=0): {meet:.6}");

    let phi = TestFunction::gaussian(0.0, 1.0);
    let a = field_moment_by_environments(&spec, 16.0, 4, &phi, 2)?;
    let b = field_moment_by_paths(&spec, 16.0, 4, &phi, 2)?;
    println!("second field moment: by environments {a:.15}, by paths {b:.15}");
    Ok(())
}
