//! Which mechanism classes care about the order the modeled variables are
//! peeled off in? Submodels whose step predictors depend only on each
//! variable's own value (and later outcomes) are order invariant: two
//! analysts who order the variables differently write down the same
//! observed-data likelihood. The full model is not.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sanmiss::data::Dataset;
use sanmiss::error::Result;
use sanmiss::inference::{AuxMode, InferenceModelSpec, ParamSet};
use sanmiss::link::Link;
use sanmiss::san::{SanSpec, Submodel};
use sanmiss::space::{build_space, VariableSpace};
use sanmiss::table::ProbTable;

/// Copies term values between specs that share per-variable term shapes,
/// matching steps by the variable they model.
fn copy_by_variable(from: &SanSpec, to: &mut SanSpec) -> Result<()> {
    for (ja, name) in from.modeled_names().iter().enumerate() {
        let jb = to
            .modeled_names()
            .iter()
            .position(|n| n == name)
            .expect("same modeled set");
        let ids: Vec<String> = to.terms(jb).iter().map(|t| t.id().to_string()).collect();
        for (t, id) in ids.iter().enumerate() {
            let values = from.terms(ja)[t].values().to_vec();
            to.term_mut(jb, id)?.set_values(values)?;
        }
    }
    Ok(())
}

fn observed_loglik(
    vars: &VariableSpace,
    san: SanSpec,
    dataset: &Dataset,
) -> Result<f64> {
    let kappa = ProbTable::uniform(vars.y_space());
    let spec = InferenceModelSpec::new(san, AuxMode::KnownKappa(kappa))?;
    let params = ParamSet {
        gamma: spec.layout().read(spec.san()),
        theta: vec![0.45; spec.n_theta()],
        kappa: vec![0.25; spec.n_kappa()],
    };
    spec.observed_loglik(&params, dataset)
}

fn main() -> Result<()> {
    let vars = build_space(
        &[
            ("x", &["0", "1"]),
            ("y1", &["0", "1"]),
            ("y2", &["0", "1"]),
        ],
        &["y1", "y2"],
    )?;

    // A small dataset with every missingness pattern represented.
    let records = vec![
        vec![Some(0), Some(0), Some(1)],
        vec![Some(1), Some(1), Some(1)],
        vec![Some(0), None, Some(0)],
        vec![Some(1), Some(0), None],
        vec![Some(0), None, None],
        vec![Some(1), Some(1), Some(0)],
        vec![Some(0), Some(1), None],
        vec![Some(1), None, Some(1)],
    ];
    let dataset = Dataset::new(vars.space().clone(), records)?;

    println!("submodel        order y1,y2      order y2,y1      |difference|");
    for submodel in [
        Submodel::DirectOnly,
        Submodel::OrderInvariant,
        Submodel::Full,
    ] {
        // Randomize under the first ordering, then transfer the same
        // per-variable coefficients to the reversed ordering.
        let mut forward = SanSpec::new(vars.clone(), &["y1", "y2"], Link::Logit, submodel)?;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        forward.randomize(&mut rng, 0.8, 0.8);
        let mut backward = SanSpec::new(vars.clone(), &["y2", "y1"], Link::Logit, submodel)?;
        match submodel {
            // These submodels give each variable the same term shapes in
            // any ordering, so the transfer is exact.
            Submodel::DirectOnly | Submodel::OrderInvariant => {
                copy_by_variable(&forward, &mut backward)?;
            }
            // The full model's term shapes depend on the step, so the
            // closest transfer relabels the variables step by step; the
            // resulting laws genuinely differ.
            _ => {
                for j in 0..forward.n_modeled() {
                    let ids: Vec<String> =
                        backward.terms(j).iter().map(|t| t.id().to_string()).collect();
                    for (t, id) in ids.iter().enumerate() {
                        let values = forward.terms(j)[t].values().to_vec();
                        backward.term_mut(j, id)?.set_values(values)?;
                    }
                }
            }
        }

        let lf = observed_loglik(&vars, forward, &dataset)?;
        let lb = observed_loglik(&vars, backward, &dataset)?;
        println!(
            "{:14}  {lf:14.8}  {lb:14.8}  {:.3e}",
            submodel.name(),
            (lf - lb).abs()
        );
    }
    println!("\norder-invariant submodels agree to machine precision;");
    println!("the full model's likelihood moves when the ordering does.");
    Ok(())
}
